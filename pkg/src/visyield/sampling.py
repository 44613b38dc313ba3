"""Rare-event estimators: onion-shell initialization, the adaptive
importance-sampling loop with per-iteration proposal refits, and the
Monte Carlo and min-norm-shift baselines.

Determinism: every random draw comes from a substream keyed by
(seed, role, iteration), and weight accumulation is compensated and
ordered by draw index, so reports are bit-identical for a fixed seed
regardless of thread count or batch partitioning.
"""
from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .clustering import select_clusters
from .distributions import GaussianProposal, log_density_standard_normal
from .errors import ContractError, EstimationError, InitializationError
from .fitting import FailureSet, FitConfig, FitTier, fit_mixture
from .rng import substream
from .testbench import Testbench


class CompensatedSum:
    """Neumaier-compensated accumulator.

    Importance weights can span many orders of magnitude within one run;
    plain summation loses the small terms that the figure of merit needs.
    Exact zeros are skipped, so the result is invariant to how a fixed
    draw sequence is cut into batches.
    """

    __slots__ = ("_sum", "_comp")

    def __init__(self):
        self._sum = 0.0
        self._comp = 0.0

    def add(self, values) -> None:
        for v in np.asarray(values, dtype=float).ravel():
            v = float(v)
            if v == 0.0:
                continue
            t = self._sum + v
            if abs(self._sum) >= abs(v):
                self._comp += (self._sum - t) + v
            else:
                self._comp += (v - t) + self._sum
            self._sum = t

    @property
    def value(self) -> float:
        return self._sum + self._comp

    def reset(self) -> None:
        self._sum = 0.0
        self._comp = 0.0


@dataclass
class EstimatorState:
    """Pooled importance-sampling accumulators plus the failure archive.

    sum_weights/sum_sq_weights/total_draws pool every retained draw as
    one stream; the estimate, its FoM, and the stopping rule all read
    this stream.  discard_stream() empties it (burn-in: the estimator
    restarts as if the run began on the next iteration) while the
    archive and iteration counter persist.
    """

    archive: FailureSet
    draws_per_iter: int = 0
    iteration: int = 0
    total_draws: int = 0
    sum_weights: CompensatedSum = field(default_factory=CompensatedSum)
    sum_sq_weights: CompensatedSum = field(default_factory=CompensatedSum)
    pf_history: list = field(default_factory=list)
    fom_history: list = field(default_factory=list)

    @property
    def pf(self) -> float:
        if self.total_draws == 0:
            return math.nan
        return self.sum_weights.value / self.total_draws

    def discard_stream(self) -> None:
        """Drop every draw accumulated so far from the estimate; the
        archive and iteration count are kept."""
        self.total_draws = 0
        self.sum_weights.reset()
        self.sum_sq_weights.reset()


def fom(state: EstimatorState) -> float:
    """Relative standard error of the pooled estimate.

    Sample variance of the per-draw terms I(x)w(x) over all pooled
    draws, as std-of-mean over the pooled mean.  Infinite while
    undefined (fewer than two draws, or estimate still zero) so callers
    treat those states as unconverged.
    """
    n = state.total_draws
    if n == 0:
        return math.inf
    pf = state.sum_weights.value / n
    if n < 2 or not pf > 0.0:
        return math.inf
    var = (state.sum_sq_weights.value / n - pf * pf) / (n - 1)
    return math.sqrt(max(var, 0.0)) / pf


@dataclass(frozen=True)
class OnionConfig:
    """Expanding-shell search for initial failures.

    samples_per_shell defaults to 10 per dimension when left None.
    Radii are in units of the standard normal's sigma.
    """

    shell_width: float = 1.0
    max_radius: float = 8.0
    samples_per_shell: int | None = None
    min_failures: int = 20

    def __post_init__(self):
        if not 0.0 < self.shell_width <= self.max_radius:
            raise ContractError("need 0 < shell_width <= max_radius")
        if self.samples_per_shell is not None and self.samples_per_shell < 1:
            raise ContractError("samples_per_shell must be >= 1")
        if self.min_failures < 1:
            raise ContractError("min_failures must be >= 1")


@dataclass(frozen=True)
class OnionResult:
    archive: FailureSet
    n_evaluations: int
    radius_reached: float


def _annulus_radii(
    n: int, dim: int, r_lo: float, r_hi: float, rng: np.random.Generator
) -> np.ndarray:
    """Radii distributed as uniform volume in the annulus [r_lo, r_hi].

    Inverse CDF r = (r_lo^D + u (r_hi^D - r_lo^D))^(1/D), evaluated as
    r_hi (ratio + u (1 - ratio))^(1/D) with ratio = (r_lo/r_hi)^D so that
    r^D never overflows at high D.
    """
    u = rng.random(n)
    if r_lo <= 0.0:
        frac = u
    else:
        ratio = math.exp(dim * math.log(r_lo / r_hi))
        frac = ratio + u * (1.0 - ratio)
    return r_hi * frac ** (1.0 / dim)


def _annulus_sample(
    n: int, dim: int, r_lo: float, r_hi: float, rng: np.random.Generator
) -> np.ndarray:
    g = rng.standard_normal((n, dim))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    r = _annulus_radii(n, dim, r_lo, r_hi, rng)
    return g / norms * r[:, None]


def _log_annulus_volume(dim: int, r_lo: float, r_hi: float) -> float:
    # log of vol(ball r_hi) - vol(ball r_lo) without overflowing r^D
    log_unit_ball = 0.5 * dim * math.log(math.pi) - math.lgamma(0.5 * dim + 1.0)
    if r_lo <= 0.0:
        return log_unit_ball + dim * math.log(r_hi)
    return (
        log_unit_ball
        + dim * math.log(r_hi)
        + math.log1p(-math.exp(dim * (math.log(r_lo) - math.log(r_hi))))
    )


def onion_init(
    bench: Testbench,
    cfg: OnionConfig,
    rng: np.random.Generator,
    reweight_by_generator: bool = False,
) -> OnionResult:
    """Search expanding spherical shells until enough failures are found.

    Shells [j Delta, (j+1) Delta] are filled with samples_per_shell
    uniform-in-annulus points each; the search stops at the first shell
    after which the archive holds min_failures points.  A partial archive
    (some failures, fewer than requested) is returned as-is at
    max_radius; only a completely empty archive is an error.

    With reweighting enabled the whole search is registered on the
    archive as one generator (an equal-weight mixture of the per-shell
    uniform densities), so later fits can place its points on the same
    footing as proposal-drawn ones.
    """
    d = bench.dim
    per_shell = (
        cfg.samples_per_shell if cfg.samples_per_shell is not None else 10 * d
    )
    archive = FailureSet(d, reweight_by_generator=reweight_by_generator)
    n_evals = 0
    r_lo = 0.0
    radius = 0.0
    shell_edges = [0.0]
    while r_lo < cfg.max_radius - 1e-12:
        r_hi = min(r_lo + cfg.shell_width, cfg.max_radius)
        pts = _annulus_sample(per_shell, d, r_lo, r_hi, rng)
        fails = bench.evaluate(pts).astype(bool)
        n_evals += per_shell
        radius = r_hi
        shell_edges.append(r_hi)
        if fails.any():
            archive.extend(pts[fails])
        if len(archive) >= cfg.min_failures:
            break
        r_lo = r_hi
    if len(archive) == 0:
        err = InitializationError(
            f"no failures within radius {radius:g} "
            f"after {n_evals} evaluations"
        )
        err.n_evaluations = n_evals
        err.radius_reached = radius
        raise err
    if reweight_by_generator:
        edges = np.asarray(shell_edges)
        n_shells = len(edges) - 1
        log_vols = np.array(
            [
                _log_annulus_volume(d, edges[j], edges[j + 1])
                for j in range(n_shells)
            ]
        )
        radii = np.linalg.norm(archive.points, axis=1)
        shell_of = np.clip(np.searchsorted(edges, radii, side="right") - 1, 0, n_shells - 1)
        log_q = -math.log(n_shells) - log_vols[shell_of]
        archive.add_generator(log_q, n_evals)
    return OnionResult(archive, n_evals, radius)


def mn_omsv(fs: FailureSet) -> np.ndarray:
    """Minimum-norm archived failure point; ties keep the earliest."""
    if len(fs) == 0:
        raise ContractError("failure set is empty")
    sq = np.einsum("ij,ij->i", fs.points, fs.points)
    return fs.points[int(np.argmin(sq))].copy()


def _evaluate_batch(
    bench: Testbench, points: np.ndarray, n_threads: int = 1
) -> np.ndarray:
    """Indicator over a batch, chunked across threads when the bench
    allows it.  Results land by row index, so the output is independent
    of completion order."""
    n_threads = max(1, int(n_threads))
    if n_threads == 1 or not bench.concurrency_safe or len(points) < 2 * n_threads:
        return bench.evaluate(points)
    chunks = [c for c in np.array_split(np.arange(len(points)), n_threads) if len(c)]
    out = np.empty(len(points), dtype=np.uint8)
    with ThreadPoolExecutor(max_workers=n_threads) as pool:
        futures = [(c, pool.submit(bench.evaluate, points[c])) for c in chunks]
        for c, fut in futures:
            out[c] = fut.result()
    return out


def is_step(
    bench: Testbench,
    proposal,
    draws_per_iter: int,
    state: EstimatorState,
    rng: np.random.Generator,
    n_threads: int = 1,
) -> EstimatorState:
    """One importance-sampling iteration.

    Draws K points from the proposal, weights failures by w = p/q,
    accumulates pooled moments in draw order, archives new failure
    points, and appends to the estimate/FoM histories.
    """
    k = int(draws_per_iter)
    if k < 1:
        raise ContractError("draws_per_iter must be >= 1")
    draws = proposal.sample(k, rng)
    ind = _evaluate_batch(bench, draws, n_threads).astype(bool)
    if ind.any():
        log_p = log_density_standard_normal(draws[ind])
        log_q = proposal.log_density(draws[ind])
        w = np.exp(log_p - log_q)
        if not np.all(np.isfinite(w)):
            raise EstimationError(
                "non-finite importance weight: proposal density is broken "
                "at a drawn point"
            )
        state.sum_weights.add(w)
        state.sum_sq_weights.add(w * w)
        state.archive.extend(draws[ind], log_weights=log_p)
    if state.archive.reweight_by_generator and len(state.archive):
        state.archive.add_generator(
            np.atleast_1d(proposal.log_density(state.archive.points)), k
        )
    state.total_draws += k
    state.iteration += 1
    state.draws_per_iter = k
    state.pf_history.append(state.pf)
    state.fom_history.append(fom(state))
    return state


@dataclass(frozen=True)
class IterationRow:
    iteration: int
    pf: float
    fom: float
    n_simulations: int  # cumulative, initialization included


def _fmt(v: float) -> str:
    return format(v, ".17g")


def _json_float(v: float):
    # strict JSON has no Infinity/NaN; undefined metrics serialize as null
    return v if math.isfinite(v) else None


@dataclass
class RunReport:
    """Outcome of one estimation run.

    wall_time and final_n_components are kept in memory for interactive
    use but deliberately left out of the serialized forms, which must be
    byte-identical across repeated runs with one seed.
    """

    method: str
    seed: int
    pf_estimate: float
    fom: float
    n_simulations: int
    n_failures: int
    converged: bool
    wall_time: float
    per_iteration: list
    final_n_components: int | None = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "pf_estimate": _json_float(self.pf_estimate),
            "fom": _json_float(self.fom),
            "n_simulations": self.n_simulations,
            "n_failures": self.n_failures,
            "converged": self.converged,
            "per_iteration": [
                [r.iteration, _json_float(r.pf), _json_float(r.fom), r.n_simulations]
                for r in self.per_iteration
            ],
        }

    def write_json(self, path) -> None:
        text = json.dumps(self.to_json_dict(), indent=2, sort_keys=True)
        Path(path).write_text(text + "\n")

    def write_trajectory_csv(self, path) -> None:
        lines = ["iter,pf,fom,sims"]
        for r in self.per_iteration:
            lines.append(
                f"{r.iteration},{_fmt(r.pf)},{_fmt(r.fom)},{r.n_simulations}"
            )
        Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True)
class BeyondConfig:
    """Adaptive-loop configuration.

    burn_in discards the first burn_in iterations from the estimate
    (the estimator restarts with the archive warm); min_iters blocks
    the FoM stop before that iteration, so a freshly restarted stream
    cannot satisfy the target off a handful of draws.  Defaults leave
    both behaviors off.
    """

    tier: FitTier = FitTier.MIXTURE_SKEW_NORMAL
    draws_per_iter: int = 500
    onion: OnionConfig = field(default_factory=OnionConfig)
    fom_target: float = 0.1
    max_iters: int = 200
    seed: int = 0
    burn_in: int = 0
    min_iters: int = 1
    reweight_archive: bool = False
    cluster_k_max: int = 8
    cluster_accept_threshold: float = 0.25
    n_threads: int = 1

    def __post_init__(self):
        _check_common(self)
        if self.burn_in < 0:
            raise ContractError("burn_in must be >= 0")
        if self.min_iters < 1:
            raise ContractError("min_iters must be >= 1")
        if self.cluster_k_max < 1:
            raise ContractError("cluster_k_max must be >= 1")


@dataclass(frozen=True)
class MNISConfig:
    """Baseline configuration; burn_in and min_iters behave exactly as
    in BeyondConfig so the two methods can be compared under identical
    stopping rules."""

    draws_per_iter: int = 500
    onion: OnionConfig = field(default_factory=OnionConfig)
    fom_target: float = 0.1
    max_iters: int = 200
    seed: int = 0
    burn_in: int = 0
    min_iters: int = 1
    n_threads: int = 1

    def __post_init__(self):
        _check_common(self)
        if self.burn_in < 0:
            raise ContractError("burn_in must be >= 0")
        if self.min_iters < 1:
            raise ContractError("min_iters must be >= 1")


@dataclass(frozen=True)
class MCConfig:
    batch: int = 10_000
    fom_target: float = 0.1
    max_draws: int = 10_000_000
    seed: int = 0
    n_threads: int = 1

    def __post_init__(self):
        if self.batch < 1:
            raise ContractError("batch must be >= 1")
        if not 0.0 < self.fom_target < 1.0:
            raise ContractError("fom_target must lie in (0, 1)")
        if self.max_draws < self.batch:
            raise ContractError("max_draws must cover at least one batch")
        if self.seed < 0:
            raise ContractError("seed must be non-negative")


def _check_common(cfg) -> None:
    if cfg.draws_per_iter < 1:
        raise ContractError("draws_per_iter must be >= 1")
    if not 0.0 < cfg.fom_target < 1.0:
        raise ContractError("fom_target must lie in (0, 1)")
    if cfg.max_iters < 1:
        raise ContractError("max_iters must be >= 1")
    if cfg.seed < 0:
        raise ContractError("seed must be non-negative")


def _drive_adaptive(
    bench: Testbench,
    method: str,
    seed: int,
    onion_cfg: OnionConfig,
    draws_per_iter: int,
    fom_target: float,
    max_iters: int,
    proposal_factory,
    burn_in: int = 0,
    min_iters: int = 1,
    reweight: bool = False,
    n_threads: int = 1,
) -> RunReport:
    """Shared loop: onion init, then refit/draw/accumulate until the FoM
    target or the iteration cap."""
    t0 = time.perf_counter()
    init = onion_init(
        bench,
        onion_cfg,
        substream(seed, rng_mod.ONION),
        reweight_by_generator=reweight,
    )
    state = EstimatorState(archive=init.archive, draws_per_iter=draws_per_iter)
    rows = []
    converged = False
    n_components = None
    for t in range(1, max_iters + 1):
        proposal = proposal_factory(state.archive, t)
        comps = getattr(proposal, "components", None)
        n_components = len(comps) if comps is not None else 1
        is_step(
            bench,
            proposal,
            draws_per_iter,
            state,
            substream(seed, rng_mod.PROPOSAL_DRAW, t),
            n_threads=n_threads,
        )
        rho = state.fom_history[-1]
        sims = init.n_evaluations + t * draws_per_iter
        rows.append(IterationRow(t, state.pf_history[-1], rho, sims))
        if t == burn_in:
            state.discard_stream()
        if t > burn_in and t >= min_iters and rho < fom_target:
            converged = True
            break
    return RunReport(
        method=method,
        seed=seed,
        pf_estimate=state.pf,
        fom=fom(state),
        n_simulations=init.n_evaluations + state.iteration * draws_per_iter,
        n_failures=len(state.archive),
        converged=converged,
        wall_time=time.perf_counter() - t0,
        per_iteration=rows,
        final_n_components=n_components,
    )


def run_beyond(bench: Testbench, cfg: BeyondConfig) -> RunReport:
    """Adaptive IS with the proposal refit each iteration from the
    cumulative archive at the configured tier."""
    fit_cfg = FitConfig(
        tier=cfg.tier,
        cluster_k_max=cfg.cluster_k_max,
        cluster_accept_threshold=cfg.cluster_accept_threshold,
    )

    def factory(archive: FailureSet, t: int):
        if cfg.tier is FitTier.MIXTURE_SKEW_NORMAL:
            crng = substream(cfg.seed, rng_mod.CLUSTERING, t)

            def clusterer(points):
                return select_clusters(
                    points,
                    cfg.cluster_k_max,
                    cfg.cluster_accept_threshold,
                    crng,
                )

            return fit_mixture(archive, fit_cfg, clusterer)
        return fit_mixture(archive, fit_cfg)

    return _drive_adaptive(
        bench,
        method=f"beyond[{cfg.tier.value}]",
        seed=cfg.seed,
        onion_cfg=cfg.onion,
        draws_per_iter=cfg.draws_per_iter,
        fom_target=cfg.fom_target,
        max_iters=cfg.max_iters,
        proposal_factory=factory,
        burn_in=cfg.burn_in,
        min_iters=cfg.min_iters,
        reweight=cfg.reweight_archive,
        n_threads=cfg.n_threads,
    )


def run_mnis(bench: Testbench, cfg: MNISConfig) -> RunReport:
    """Unit-covariance proposal centered on the minimum-norm failure
    point, recomputed from the growing archive each iteration (the shift
    can only move inward, never away from the origin)."""
    eye = np.eye(bench.dim)

    def factory(archive: FailureSet, t: int):
        return GaussianProposal(mn_omsv(archive), eye)

    return _drive_adaptive(
        bench,
        method="mnis",
        seed=cfg.seed,
        onion_cfg=cfg.onion,
        draws_per_iter=cfg.draws_per_iter,
        fom_target=cfg.fom_target,
        max_iters=cfg.max_iters,
        proposal_factory=factory,
        burn_in=cfg.burn_in,
        min_iters=cfg.min_iters,
        n_threads=cfg.n_threads,
    )


def run_mc(bench: Testbench, cfg: MCConfig) -> RunReport:
    """Plain Monte Carlo from the nominal distribution.

    FoM uses the binomial form sqrt((1-pf)/(N pf)); a run that exhausts
    max_draws with zero failures is returned unconverged with pf 0.
    """
    t0 = time.perf_counter()
    hits = 0
    draws = 0
    t = 0
    rows = []
    converged = False
    while draws < cfg.max_draws:
        t += 1
        m = min(cfg.batch, cfg.max_draws - draws)
        x = substream(cfg.seed, rng_mod.MC_DRAW, t).standard_normal((m, bench.dim))
        ind = _evaluate_batch(bench, x, cfg.n_threads)
        hits += int(np.count_nonzero(ind))
        draws += m
        pf = hits / draws
        rho = math.sqrt((1.0 - pf) / (draws * pf)) if hits else math.inf
        rows.append(IterationRow(t, pf, rho, draws))
        if rho < cfg.fom_target:
            converged = True
            break
    return RunReport(
        method="mc",
        seed=cfg.seed,
        pf_estimate=hits / draws,
        fom=rows[-1].fom,
        n_simulations=draws,
        n_failures=hits,
        converged=converged,
        wall_time=time.perf_counter() - t0,
        per_iteration=rows,
    )
