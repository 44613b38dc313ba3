"""Design optimization by ascent on the squared norm of the mean-shift
vector: a design whose density-weighted failure mean sits farther from
the origin has its failure region deeper in the Gaussian tail.

Gradients come from central finite differences with common random
numbers: every evaluation inside one outer iteration re-creates the same
substream, so the difference of two probe objectives is free of
independent sampling noise.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .errors import ContractError, InitializationError
from .fitting import true_omsv
from .rng import substream
from .sampling import OnionConfig, mn_omsv, onion_init
from .testbench import ParameterizedBenchFamily

_EVAL_SEED_BOUND = 2 ** 63


class OMSVMode(Enum):
    MIN_NORM = "min_norm"
    TRUE_OMSV = "true_omsv"


@dataclass(frozen=True)
class DesignEvaluation:
    """Mean-shift vector for one design, with its simulation cost.

    sentinel marks a design whose failures were not observable within
    the shell budget; its mu carries the maximal-radius norm so the
    ascent stays defined.
    """

    mu: np.ndarray
    n_simulations: int
    sentinel: bool = False

    @property
    def objective(self) -> float:
        return float(self.mu @ self.mu)


@dataclass(frozen=True)
class OptimizeConfig:
    z0: np.ndarray
    box: np.ndarray  # (P, 2) rows of (lower, upper)
    step: float = 0.1
    fd_step: float = 0.2
    max_outer_iters: int = 30
    omsv_mode: OMSVMode = OMSVMode.TRUE_OMSV
    failures_per_eval: int = 20
    grad_tol: float = 1e-4
    onion: OnionConfig = field(default_factory=OnionConfig)

    def __post_init__(self):
        object.__setattr__(self, "z0", np.asarray(self.z0, dtype=float))
        object.__setattr__(self, "box", np.asarray(self.box, dtype=float))
        p = self.z0.size
        if self.box.shape != (p, 2):
            raise ContractError("box must have one (lower, upper) row per design")
        if np.any(self.box[:, 0] > self.box[:, 1]):
            raise ContractError("box lower bounds exceed upper bounds")
        if np.any(self.z0 < self.box[:, 0]) or np.any(self.z0 > self.box[:, 1]):
            raise ContractError("z0 must lie inside the box")
        if self.step <= 0 or self.fd_step <= 0:
            raise ContractError("step and fd_step must be positive")
        if self.max_outer_iters < 1:
            raise ContractError("max_outer_iters must be >= 1")
        if self.failures_per_eval < 1:
            raise ContractError("failures_per_eval must be >= 1")
        if self.grad_tol <= 0:
            raise ContractError("grad_tol must be positive")


def omsv_of_design(
    z: np.ndarray,
    mode: OMSVMode,
    bench_family: ParameterizedBenchFamily,
    budget: OnionConfig,
    rng: np.random.Generator,
) -> DesignEvaluation:
    """Mean-shift vector of the design's failure region, found by a
    shell search capped at budget.min_failures points.

    A design too good to produce any failure within the budget returns
    the sentinel: norm equal to the maximal search radius, directed
    along the family's failure normal.
    """
    bench = bench_family.bench(z)
    try:
        found = onion_init(bench, budget, rng)
    except InitializationError as err:
        a = bench_family.a
        mu = budget.max_radius * a / np.linalg.norm(a)
        return DesignEvaluation(mu, err.n_evaluations, sentinel=True)
    if mode is OMSVMode.MIN_NORM:
        mu = mn_omsv(found.archive)
    else:
        mu = true_omsv(found.archive)
    return DesignEvaluation(mu, found.n_evaluations)


@dataclass(frozen=True)
class TracePoint:
    iteration: int
    z: np.ndarray
    objective: float  # squared norm of the mean-shift vector
    oracle_pf: float
    n_simulations: int  # cumulative, probe evaluations included
    sentinel: bool

    @property
    def znorm(self) -> float:
        return float(np.linalg.norm(self.z))


def _fmt(v: float) -> str:
    return format(v, ".17g")


@dataclass
class OptimizeTrace:
    mode: str
    points: list
    total_simulations: int
    converged: bool  # gradient tolerance reached before the cap

    @property
    def final(self) -> TracePoint:
        return self.points[-1]

    def write_csv(self, path) -> None:
        lines = ["iter,znorm,obj,oracle_pf,sims"]
        for p in self.points:
            lines.append(
                f"{p.iteration},{_fmt(p.znorm)},{_fmt(p.objective)},"
                f"{_fmt(p.oracle_pf)},{p.n_simulations}"
            )
        Path(path).write_text("\n".join(lines) + "\n")

    def to_json_dict(self) -> dict:
        return {
            "mode": self.mode,
            "converged": self.converged,
            "total_simulations": self.total_simulations,
            "final_z": [float(v) for v in self.final.z],
            "final_objective": self.final.objective,
            "final_oracle_pf": self.final.oracle_pf,
            "initial_oracle_pf": self.points[0].oracle_pf,
            "points": [
                [
                    p.iteration,
                    p.znorm,
                    p.objective,
                    p.oracle_pf,
                    p.n_simulations,
                    p.sentinel,
                ]
                for p in self.points
            ],
        }

    def write_json(self, path) -> None:
        text = json.dumps(self.to_json_dict(), indent=2, sort_keys=True)
        Path(path).write_text(text + "\n")


def run_variational_asais(
    cfg: OptimizeConfig,
    bench_family: ParameterizedBenchFamily,
    rng: np.random.Generator,
) -> OptimizeTrace:
    """Projected fixed-step gradient ascent on the squared mean-shift
    norm over the design box.

    Each outer iteration draws one evaluation key from rng; the center
    and all 2P probe evaluations re-create identical substreams from it,
    so probe differences see common random numbers.  The analytic
    failure probability is recorded at every iterate for reporting only;
    the optimizer never reads it.
    """
    if not np.all(cfg.box[:, 0] >= bench_family.box[:, 0] - 1e-12) or not np.all(
        cfg.box[:, 1] <= bench_family.box[:, 1] + 1e-12
    ):
        raise ContractError("config box must lie within the family's box")
    budget = replace(cfg.onion, min_failures=cfg.failures_per_eval)
    lo, hi = cfg.box[:, 0], cfg.box[:, 1]
    p_dim = cfg.z0.size

    z = np.clip(cfg.z0, lo, hi)
    points = []
    sims = 0
    converged = False
    for it in range(cfg.max_outer_iters + 1):
        eval_seed = int(rng.integers(_EVAL_SEED_BOUND))

        def evaluate(design: np.ndarray) -> DesignEvaluation:
            return omsv_of_design(
                design,
                cfg.omsv_mode,
                bench_family,
                budget,
                substream(eval_seed, rng_mod.DESIGN_EVAL),
            )

        center = evaluate(z)
        sims += center.n_simulations
        points.append(
            TracePoint(
                iteration=it,
                z=z.copy(),
                objective=center.objective,
                oracle_pf=float(bench_family.bench(z).oracle_pf),
                n_simulations=sims,
                sentinel=center.sentinel,
            )
        )
        if it == cfg.max_outer_iters:
            break

        grad = np.zeros(p_dim)
        for j in range(p_dim):
            z_hi = z.copy()
            z_lo = z.copy()
            z_hi[j] = min(z[j] + cfg.fd_step, hi[j])
            z_lo[j] = max(z[j] - cfg.fd_step, lo[j])
            spread = z_hi[j] - z_lo[j]
            if spread <= 0.0:  # box pinched flat in this coordinate
                continue
            ev_hi = evaluate(z_hi)
            ev_lo = evaluate(z_lo)
            sims += ev_hi.n_simulations + ev_lo.n_simulations
            grad[j] = (ev_hi.objective - ev_lo.objective) / spread

        if float(np.max(np.abs(grad))) < cfg.grad_tol:
            converged = True
            break
        z = np.clip(z + cfg.step * grad, lo, hi)

    return OptimizeTrace(
        mode=cfg.omsv_mode.value,
        points=points,
        total_simulations=sims,
        converged=converged,
    )
