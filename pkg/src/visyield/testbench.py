"""Failure-region benches: analytic indicators with probability oracles,
boolean composites, an external-simulator adapter, and a parameterized
linear family for design optimization.

Oracles are evaluation-time references only; estimators never read them.
"""
from __future__ import annotations

import select
import shlex
import subprocess
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import rng as rng_mod
from .errors import ContractError, SimulationError
from .rng import substream

# Seed for construction-time Monte Carlo oracles.  Fixed so oracle values
# (which end up in reports) are reproducible across runs and machines.
_ORACLE_SEED = 314159
_ORACLE_DRAWS = 10 ** 7
_MC_CHUNK = 10 ** 6

_COLLINEAR_TOL = 1e-12


class Testbench:
    """A deterministic indicator over D-dimensional variation space.

    ``indicator`` maps an (n, D) array to n values in {0, 1}, vectorized
    over rows.  ``oracle_pf`` is the exact failure probability when known
    in closed form, a seeded Monte Carlo estimate (with ``oracle_se``)
    when not, or None when neither is affordable.
    """

    def __init__(
        self,
        name: str,
        dim: int,
        indicator,
        oracle_pf: float | None = None,
        oracle_se: float = 0.0,
        concurrency_safe: bool = True,
        linear_form: tuple[np.ndarray, float] | None = None,
    ):
        if dim < 1:
            raise ContractError("dim must be >= 1")
        self.name = name
        self.dim = int(dim)
        self._indicator = indicator
        self.oracle_pf = oracle_pf
        self.oracle_se = float(oracle_se)
        self.concurrency_safe = bool(concurrency_safe)
        self.linear_form = linear_form

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Indicator values for an (n, D) array of points, as uint8."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ContractError(
                f"points shape {points.shape} incompatible with dim {self.dim}"
            )
        out = np.asarray(self._indicator(points))
        if out.shape != (len(points),):
            raise ContractError("indicator returned a malformed result")
        return out.astype(np.uint8)

    def __repr__(self) -> str:
        return f"Testbench({self.name!r}, dim={self.dim})"


def mc_probability(bench: Testbench, n_draws: int, seed: int) -> tuple[float, float]:
    """Brute-force Monte Carlo failure probability and its standard error."""
    rng = substream(seed, rng_mod.ORACLE)
    hits = 0
    remaining = int(n_draws)
    while remaining > 0:
        m = min(_MC_CHUNK, remaining)
        x = rng.standard_normal((m, bench.dim))
        hits += int(np.count_nonzero(bench.evaluate(x)))
        remaining -= m
    pf = hits / n_draws
    se = float(np.sqrt(max(pf * (1.0 - pf), 0.0) / n_draws))
    return pf, se


def linear_bench(a: np.ndarray, b: float) -> Testbench:
    """Half-space failure region a.x >= b with exact oracle Phi(-b/||a||)."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 1 or a.size < 1:
        raise ContractError("a must be a nonempty vector")
    norm = float(np.linalg.norm(a))
    if norm == 0.0:
        raise ContractError("a must be nonzero")
    b = float(b)

    def indicator(points: np.ndarray) -> np.ndarray:
        return points @ a >= b

    return Testbench(
        name=f"linear(b={b:g})",
        dim=a.size,
        indicator=indicator,
        oracle_pf=float(ndtr(-b / norm)),
        linear_form=(a, b),
    )


def sphere_bench(
    center: np.ndarray,
    radius: float,
    oracle_draws: int = _ORACLE_DRAWS,
    oracle_seed: int = _ORACLE_SEED,
) -> Testbench:
    """Ball failure region ||x - center|| <= radius.

    The oracle is a seeded brute-force Monte Carlo estimate with recorded
    standard error; no special-function evaluation is involved.
    """
    center = np.asarray(center, dtype=float)
    if center.ndim != 1 or center.size < 1:
        raise ContractError("center must be a nonempty vector")
    radius = float(radius)
    if radius <= 0.0:
        raise ContractError("radius must be positive")
    r_sq = radius * radius

    def indicator(points: np.ndarray) -> np.ndarray:
        delta = points - center
        return np.einsum("ij,ij->i", delta, delta) <= r_sq

    bench = Testbench(
        name=f"sphere(r={radius:g})",
        dim=center.size,
        indicator=indicator,
    )
    bench.oracle_pf, bench.oracle_se = mc_probability(bench, oracle_draws, oracle_seed)
    return bench


def _collinear_ray_oracle(
    children: list[Testbench], is_union: bool
) -> tuple[float, float] | None:
    """Exact oracle when every child is linear with collinear normals.

    The indicator then depends on one standard-normal projection, and the
    region reduces to rays on the line: covers disjoint tail unions and
    idempotent/nested intersections exactly.
    """
    if any(c.linear_form is None for c in children):
        return None
    a0, _ = children[0].linear_form
    unit0 = a0 / np.linalg.norm(a0)
    lows, highs = [], []  # rays t >= lo and t <= hi on the projection axis
    for child in children:
        a, b = child.linear_form
        norm = np.linalg.norm(a)
        cos = float(a @ unit0) / norm
        if abs(abs(cos) - 1.0) > _COLLINEAR_TOL:
            return None
        if cos > 0:
            lows.append(b / norm)
        else:
            highs.append(-b / norm)
    if is_union:
        lo = min(lows) if lows else None
        hi = max(highs) if highs else None
        if lo is not None and hi is not None:
            if hi >= lo:
                return 1.0, 0.0
            return float(ndtr(-lo) + ndtr(hi)), 0.0
        if lo is not None:
            return float(ndtr(-lo)), 0.0
        return float(ndtr(hi)), 0.0
    lo = max(lows) if lows else None
    hi = min(highs) if highs else None
    if lo is not None and hi is not None:
        if hi <= lo:
            return 0.0, 0.0
        return float(max(ndtr(hi) - ndtr(lo), 0.0)), 0.0
    if lo is not None:
        return float(ndtr(-lo)), 0.0
    return float(ndtr(hi)), 0.0


def _composite_bench(
    children: list[Testbench],
    is_union: bool,
    oracle_draws: int,
    oracle_seed: int,
) -> Testbench:
    if not children:
        raise ContractError("composite bench needs at least one child")
    dims = {c.dim for c in children}
    if len(dims) != 1:
        raise ContractError("children must share one dimension")
    kids = list(children)

    def indicator(points: np.ndarray) -> np.ndarray:
        acc = kids[0].evaluate(points).astype(bool)
        for child in kids[1:]:
            nxt = child.evaluate(points).astype(bool)
            acc = acc | nxt if is_union else acc & nxt
        return acc

    word = "union" if is_union else "intersection"
    bench = Testbench(
        name=f"{word}({', '.join(c.name for c in kids)})",
        dim=kids[0].dim,
        indicator=indicator,
        concurrency_safe=all(c.concurrency_safe for c in kids),
    )
    exact = _collinear_ray_oracle(kids, is_union)
    if exact is not None:
        bench.oracle_pf, bench.oracle_se = exact
    elif bench.concurrency_safe:
        # Monte Carlo fallback; skipped when a child wraps an external
        # process (millions of construction-time evaluations)
        bench.oracle_pf, bench.oracle_se = mc_probability(
            bench, oracle_draws, oracle_seed
        )
    return bench


def union_bench(
    children: list[Testbench],
    oracle_draws: int = _ORACLE_DRAWS,
    oracle_seed: int = _ORACLE_SEED,
) -> Testbench:
    """Failure if any child fails; exact oracle for collinear linear
    children, seeded Monte Carlo otherwise."""
    return _composite_bench(children, True, oracle_draws, oracle_seed)


def intersection_bench(
    children: list[Testbench],
    oracle_draws: int = _ORACLE_DRAWS,
    oracle_seed: int = _ORACLE_SEED,
) -> Testbench:
    """Failure if every child fails; oracle policy as union_bench."""
    return _composite_bench(children, False, oracle_draws, oracle_seed)


class ExternalBench(Testbench):
    """Adapter to an external simulator speaking a line protocol on stdio.

    Handshake ``HELLO <D>`` -> ``READY``; per point ``EVAL v1 .. vD`` ->
    ``FAIL`` or ``PASS``; ``QUIT`` on close.  Values are written with 17
    significant digits so the child sees exact float64 round-trips.
    Evaluation is strictly serial and has no oracle.
    """

    def __init__(self, command: str | list[str], dim: int, timeout: float = 30.0):
        argv = shlex.split(command) if isinstance(command, str) else list(command)
        if not argv:
            raise ContractError("empty command")
        super().__init__(
            name=f"external({argv[0]})",
            dim=dim,
            indicator=None,
            concurrency_safe=False,
        )
        self._timeout = float(timeout)
        self._lines_sent = 0
        self._proc: subprocess.Popen | None = None
        try:
            self._proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise SimulationError(f"cannot launch {argv[0]!r}: {exc}") from exc
        self._send(f"HELLO {self.dim}")
        self._expect("READY")

    def _send(self, line: str) -> None:
        self._lines_sent += 1
        try:
            self._proc.stdin.write(line + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise SimulationError(
                f"line {self._lines_sent}: simulator closed its input "
                f"(exit code {self._proc.poll()})"
            ) from exc

    def _read_reply(self) -> str:
        ready, _, _ = select.select([self._proc.stdout], [], [], self._timeout)
        if not ready:
            raise SimulationError(
                f"line {self._lines_sent}: no reply within {self._timeout:g} s"
            )
        reply = self._proc.stdout.readline()
        if reply == "":
            raise SimulationError(
                f"line {self._lines_sent}: simulator exited "
                f"(exit code {self._proc.poll()})"
            )
        return reply.strip()

    def _expect(self, token: str) -> None:
        got = self._read_reply()
        if got != token:
            raise SimulationError(
                f"line {self._lines_sent}: expected {token!r}, got {got!r}"
            )

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            points = points[None, :]
        if points.ndim != 2 or points.shape[1] != self.dim:
            raise ContractError(
                f"points shape {points.shape} incompatible with dim {self.dim}"
            )
        out = np.empty(len(points), dtype=np.uint8)
        for i, row in enumerate(points):
            self._send("EVAL " + " ".join(format(v, ".17g") for v in row))
            reply = self._read_reply()
            if reply == "FAIL":
                out[i] = 1
            elif reply == "PASS":
                out[i] = 0
            else:
                raise SimulationError(
                    f"line {self._lines_sent}: expected 'FAIL' or 'PASS', "
                    f"got {reply!r}"
                )
        return out

    def close(self) -> None:
        if self._proc is None or self._proc.poll() is not None:
            return
        try:
            self._proc.stdin.write("QUIT\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError):
            pass
        try:
            self._proc.wait(timeout=5.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()

    def __enter__(self) -> "ExternalBench":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def external_bench(command: str | list[str], dim: int, timeout: float = 30.0) -> ExternalBench:
    """Launch ``command`` and wrap it as a serial testbench."""
    return ExternalBench(command, dim, timeout)


@dataclass(frozen=True, eq=False)
class ParameterizedBenchFamily:
    """Linear failure region a.x >= b(z) with a concave quadratic margin
    b(z) = c0 + c1.z - z.C2.z/2 over a box of admissible designs.

    For positive-definite C2 the margin is maximized at the interior
    stationary point C2^-1 c1, so the family has a unique best design.
    """

    a: np.ndarray
    c0: float
    c1: np.ndarray
    c2: np.ndarray
    box: np.ndarray  # (P, 2) rows of (lower, upper)
    name: str = "parameterized-linear"

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float))
        object.__setattr__(self, "c1", np.asarray(self.c1, dtype=float))
        object.__setattr__(self, "c2", np.asarray(self.c2, dtype=float))
        object.__setattr__(self, "box", np.asarray(self.box, dtype=float))
        p = self.c1.size
        if self.a.ndim != 1 or np.linalg.norm(self.a) == 0.0:
            raise ContractError("a must be a nonzero vector")
        if self.c2.shape != (p, p):
            raise ContractError("c2 must be square and match c1")
        if np.max(np.abs(self.c2 - self.c2.T)) > 1e-10:
            raise ContractError("c2 must be symmetric")
        if self.box.shape != (p, 2):
            raise ContractError("box must have one (lower, upper) row per design")
        if np.any(self.box[:, 0] > self.box[:, 1]):
            raise ContractError("box lower bounds exceed upper bounds")

    @property
    def dim(self) -> int:
        return self.a.size

    @property
    def design_dim(self) -> int:
        return self.c1.size

    def contains(self, z: np.ndarray) -> bool:
        z = np.asarray(z, dtype=float)
        return bool(np.all(z >= self.box[:, 0]) and np.all(z <= self.box[:, 1]))

    def threshold(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(self.c0 + self.c1 @ z - 0.5 * z @ self.c2 @ z)

    def threshold_grad(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return self.c1 - self.c2 @ z

    def bench(self, z: np.ndarray) -> Testbench:
        z = np.asarray(z, dtype=float)
        if z.shape != (self.design_dim,):
            raise ContractError("design vector has the wrong dimension")
        if not self.contains(z):
            raise ContractError(f"design {z} outside the declared box")
        return linear_bench(self.a, self.threshold(z))
