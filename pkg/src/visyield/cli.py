"""Command-line entry point: config loading, single-method sweeps,
baseline comparison tables, design optimization, and report emission.

The config is one strict JSON document with a `version` field; unknown
fields are rejected with their dotted path so a typo in a knob name
fails loudly instead of silently falling back to a default.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .errors import (
    ConfigError,
    ContractError,
    EstimationError,
    FitError,
    InitializationError,
    SimulationError,
)
from .fitting import FitTier
from .optimize import OMSVMode, OptimizeConfig, run_variational_asais
from .rng import substream
from .sampling import (
    BeyondConfig,
    MCConfig,
    MNISConfig,
    OnionConfig,
    run_beyond,
    run_mc,
    run_mnis,
)
from .testbench import (
    ParameterizedBenchFamily,
    Testbench,
    external_bench,
    intersection_bench,
    linear_bench,
    sphere_bench,
    union_bench,
)

CONFIG_VERSION = 1

_TIER_NAMES = {t.value: t for t in FitTier}
_MODE_NAMES = {m.value: m for m in OMSVMode}


# ---------------------------------------------------------------- config


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_keys(section: dict, path: str, allowed: set) -> None:
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown field `{_join(path, unknown[0])}`")


def _require(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"missing required field `{_join(path, key)}`")
    return section[key]


def _as_dict(v, path: str) -> dict:
    if not isinstance(v, dict):
        raise ConfigError(f"`{path}` must be an object")
    return v


def _as_list(v, path: str) -> list:
    if not isinstance(v, list):
        raise ConfigError(f"`{path}` must be an array")
    return v


def _as_str(v, path: str) -> str:
    if not isinstance(v, str):
        raise ConfigError(f"`{path}` must be a string")
    return v


def _as_bool(v, path: str) -> bool:
    if not isinstance(v, bool):
        raise ConfigError(f"`{path}` must be true or false")
    return v


def _as_number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"`{path}` must be a number")
    return float(v)


def _as_int(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"`{path}` must be an integer")
    return v


def _as_vector(v, path: str) -> np.ndarray:
    v = _as_list(v, path)
    if not v:
        raise ConfigError(f"`{path}` must be a nonempty array of numbers")
    return np.array([_as_number(x, f"{path}[{i}]") for i, x in enumerate(v)])


def _as_matrix(v, path: str) -> np.ndarray:
    v = _as_list(v, path)
    rows = [_as_vector(r, f"{path}[{i}]") for i, r in enumerate(v)]
    widths = {r.size for r in rows}
    if not rows or len(widths) != 1:
        raise ConfigError(f"`{path}` must be a rectangular matrix")
    return np.array(rows)


def _as_seeds(v, path: str) -> list:
    seeds = [_as_int(s, f"{path}[{i}]") for i, s in enumerate(_as_list(v, path))]
    if not seeds:
        raise ConfigError(f"`{path}` must be nonempty")
    if len(set(seeds)) != len(seeds):
        raise ConfigError(f"`{path}` must be distinct")
    if any(s < 0 for s in seeds):
        raise ConfigError(f"`{path}` entries must be non-negative")
    return sorted(seeds)


def _build_bench(spec, path: str) -> Testbench:
    spec = _as_dict(spec, path)
    kind = _as_str(_require(spec, "kind", path), _join(path, "kind"))
    if kind == "linear":
        _check_keys(spec, path, {"kind", "a", "b"})
        return linear_bench(
            _as_vector(_require(spec, "a", path), _join(path, "a")),
            _as_number(_require(spec, "b", path), _join(path, "b")),
        )
    if kind == "sphere":
        _check_keys(spec, path, {"kind", "center", "radius", "oracle_draws"})
        return sphere_bench(
            _as_vector(_require(spec, "center", path), _join(path, "center")),
            _as_number(_require(spec, "radius", path), _join(path, "radius")),
            oracle_draws=_as_int(
                spec.get("oracle_draws", 10 ** 7), _join(path, "oracle_draws")
            ),
        )
    if kind in ("union", "intersection"):
        _check_keys(spec, path, {"kind", "children"})
        raw = _as_list(_require(spec, "children", path), _join(path, "children"))
        children = [
            _build_bench(c, f"{_join(path, 'children')}[{i}]")
            for i, c in enumerate(raw)
        ]
        build = union_bench if kind == "union" else intersection_bench
        return build(children)
    if kind == "external":
        _check_keys(spec, path, {"kind", "command", "dim", "timeout"})
        command = _require(spec, "command", path)
        if isinstance(command, list):
            command = [
                _as_str(c, f"{_join(path, 'command')}[{i}]")
                for i, c in enumerate(command)
            ]
        else:
            command = _as_str(command, _join(path, "command"))
        return external_bench(
            command,
            _as_int(_require(spec, "dim", path), _join(path, "dim")),
            timeout=_as_number(spec.get("timeout", 30.0), _join(path, "timeout")),
        )
    raise ConfigError(
        f"`{_join(path, 'kind')}` must be one of "
        "linear, sphere, union, intersection, external"
    )


def _parse_tier(v, path: str) -> FitTier:
    name = _as_str(v, path)
    if name not in _TIER_NAMES:
        raise ConfigError(
            f"`{path}` must be one of {', '.join(sorted(_TIER_NAMES))}"
        )
    return _TIER_NAMES[name]


def _parse_method(v, path: str, default_tier: FitTier) -> tuple:
    """Returns (tag, runner name, tier).  Methods are `mc`, `mnis`,
    `beyond` (top-level tier), or `beyond:<tier>`."""
    name = _as_str(v, path)
    if name == "mc":
        return "mc", "mc", None
    if name == "mnis":
        return "mnis", "mnis", None
    if name == "beyond":
        return f"beyond-{default_tier.value}", "beyond", default_tier
    if name.startswith("beyond:"):
        tier = _parse_tier(name.split(":", 1)[1], path)
        return f"beyond-{tier.value}", "beyond", tier
    raise ConfigError(
        f"`{path}` must be one of mc, mnis, beyond, beyond:<tier>"
    )


def _parse_onion(section, path: str) -> OnionConfig:
    section = _as_dict(section, path)
    _check_keys(
        section,
        path,
        {"shell_width", "max_radius", "samples_per_shell", "min_failures"},
    )
    sps = section.get("samples_per_shell")
    if sps is not None:
        sps = _as_int(sps, _join(path, "samples_per_shell"))
    try:
        return OnionConfig(
            shell_width=_as_number(
                section.get("shell_width", 1.0), _join(path, "shell_width")
            ),
            max_radius=_as_number(
                section.get("max_radius", 8.0), _join(path, "max_radius")
            ),
            samples_per_shell=sps,
            min_failures=_as_int(
                section.get("min_failures", 20), _join(path, "min_failures")
            ),
        )
    except ContractError as err:
        raise ConfigError(f"`{path}`: {err}") from err


def _validate_run_config(doc: dict, command: str) -> dict:
    allowed = {
        "version",
        "bench",
        "seeds",
        "fom_target",
        "output_dir",
        "tier",
        "draws_per_iter",
        "max_iters",
        "burn_in",
        "min_iters",
        "reweight_archive",
        "cluster_k_max",
        "cluster_accept_threshold",
        "onion",
        "mc",
    }
    allowed.add("method" if command == "estimate" else "methods")
    _check_keys(doc, "", allowed)

    conf = {
        "bench_spec": _require(doc, "bench", ""),
        "seeds": _as_seeds(_require(doc, "seeds", ""), "seeds"),
        "output_dir": _as_str(doc.get("output_dir", "out"), "output_dir"),
        "fom_target": _as_number(doc.get("fom_target", 0.1), "fom_target"),
        "tier": _parse_tier(doc.get("tier", "mixture_skew_normal"), "tier"),
        "draws_per_iter": _as_int(doc.get("draws_per_iter", 500), "draws_per_iter"),
        "max_iters": _as_int(doc.get("max_iters", 200), "max_iters"),
        "burn_in": _as_int(doc.get("burn_in", 0), "burn_in"),
        "min_iters": _as_int(doc.get("min_iters", 1), "min_iters"),
        "reweight_archive": _as_bool(
            doc.get("reweight_archive", False), "reweight_archive"
        ),
        "cluster_k_max": _as_int(doc.get("cluster_k_max", 8), "cluster_k_max"),
        "cluster_accept_threshold": _as_number(
            doc.get("cluster_accept_threshold", 0.25), "cluster_accept_threshold"
        ),
        "onion": _parse_onion(doc.get("onion", {}), "onion"),
    }
    if not 0.0 < conf["fom_target"] < 1.0:
        raise ConfigError("`fom_target` must lie in (0, 1)")
    if not 0.0 <= conf["cluster_accept_threshold"] <= 1.0:
        raise ConfigError("`cluster_accept_threshold` must lie in [0, 1]")

    mc = _as_dict(doc.get("mc", {}), "mc")
    _check_keys(mc, "mc", {"batch", "max_draws"})
    conf["mc_batch"] = _as_int(mc.get("batch", 10_000), "mc.batch")
    conf["mc_max_draws"] = _as_int(mc.get("max_draws", 10_000_000), "mc.max_draws")

    if command == "estimate":
        conf["methods"] = [
            _parse_method(_require(doc, "method", ""), "method", conf["tier"])
        ]
    else:
        raw = _as_list(_require(doc, "methods", ""), "methods")
        if len(raw) < 2:
            raise ConfigError("`methods` must list at least two methods")
        conf["methods"] = [
            _parse_method(m, f"methods[{i}]", conf["tier"])
            for i, m in enumerate(raw)
        ]
        tags = [m[0] for m in conf["methods"]]
        if len(set(tags)) != len(tags):
            raise ConfigError("`methods` entries must be distinct")
    return conf


def _validate_optimize_config(doc: dict) -> dict:
    _check_keys(doc, "", {"version", "seeds", "output_dir", "optimize"})
    sect = _as_dict(_require(doc, "optimize", ""), "optimize")
    _check_keys(
        sect,
        "optimize",
        {
            "family",
            "z0",
            "box",
            "step",
            "fd_step",
            "max_outer_iters",
            "modes",
            "failures_per_eval",
            "grad_tol",
            "onion",
        },
    )
    fam = _as_dict(_require(sect, "family", "optimize"), "optimize.family")
    _check_keys(fam, "optimize.family", {"a", "c0", "c1", "c2", "box"})
    family = ParameterizedBenchFamily(
        a=_as_vector(_require(fam, "a", "optimize.family"), "optimize.family.a"),
        c0=_as_number(_require(fam, "c0", "optimize.family"), "optimize.family.c0"),
        c1=_as_vector(_require(fam, "c1", "optimize.family"), "optimize.family.c1"),
        c2=_as_matrix(_require(fam, "c2", "optimize.family"), "optimize.family.c2"),
        box=_as_matrix(
            _require(fam, "box", "optimize.family"), "optimize.family.box"
        ),
    )

    modes_raw = _as_list(sect.get("modes", ["true_omsv"]), "optimize.modes")
    modes = []
    for i, m in enumerate(modes_raw):
        name = _as_str(m, f"optimize.modes[{i}]")
        if name not in _MODE_NAMES:
            raise ConfigError(
                f"`optimize.modes[{i}]` must be one of "
                f"{', '.join(sorted(_MODE_NAMES))}"
            )
        modes.append(_MODE_NAMES[name])
    if not modes or len(set(modes)) != len(modes):
        raise ConfigError("`optimize.modes` must be nonempty and distinct")

    box = sect.get("box")
    return {
        "seeds": _as_seeds(_require(doc, "seeds", ""), "seeds"),
        "output_dir": _as_str(doc.get("output_dir", "out"), "output_dir"),
        "family": family,
        "z0": _as_vector(_require(sect, "z0", "optimize"), "optimize.z0"),
        "box": _as_matrix(box, "optimize.box") if box is not None else family.box,
        "step": _as_number(sect.get("step", 0.1), "optimize.step"),
        "fd_step": _as_number(sect.get("fd_step", 0.2), "optimize.fd_step"),
        "max_outer_iters": _as_int(
            sect.get("max_outer_iters", 30), "optimize.max_outer_iters"
        ),
        "failures_per_eval": _as_int(
            sect.get("failures_per_eval", 20), "optimize.failures_per_eval"
        ),
        "grad_tol": _as_number(sect.get("grad_tol", 1e-4), "optimize.grad_tol"),
        "modes": modes,
        "onion": _parse_onion(sect.get("onion", {}), "optimize.onion"),
    }


def load_config(path, command: str) -> dict:
    try:
        raw = Path(path).read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config: {err}") from err
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from err
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    if _as_int(_require(doc, "version", ""), "version") != CONFIG_VERSION:
        raise ConfigError(f"`version` must be {CONFIG_VERSION}")
    if command == "optimize":
        return _validate_optimize_config(doc)
    return _validate_run_config(doc, command)


# ---------------------------------------------------------------- output


def _fmt(v: float) -> str:
    return format(v, ".17g")


def _sanitize(obj):
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.floating,)):
        return _sanitize(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    return obj


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_sanitize(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, header: str, rows: list) -> None:
    lines = [header]
    for row in rows:
        cells = []
        for v in row:
            if isinstance(v, bool):
                cells.append(str(int(v)))
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                cells.append(_fmt(float(v)))
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _aggregate(reports: list) -> dict:
    pfs = [r.pf_estimate for r in reports]
    sims = [r.n_simulations for r in reports]
    return {
        "mean_pf": float(np.mean(pfs)),
        "std_pf": float(np.std(pfs, ddof=1)) if len(pfs) > 1 else 0.0,
        "mean_sims": float(np.mean(sims)),
        "median_sims": float(np.median(sims)),
        "n_converged": int(sum(r.converged for r in reports)),
    }


# -------------------------------------------------------------- commands


def _run_method(tag, runner, tier, bench, conf, seed, n_threads):
    if runner == "mc":
        return run_mc(
            bench,
            MCConfig(
                batch=conf["mc_batch"],
                fom_target=conf["fom_target"],
                max_draws=conf["mc_max_draws"],
                seed=seed,
                n_threads=n_threads,
            ),
        )
    if runner == "mnis":
        return run_mnis(
            bench,
            MNISConfig(
                draws_per_iter=conf["draws_per_iter"],
                onion=conf["onion"],
                fom_target=conf["fom_target"],
                max_iters=conf["max_iters"],
                seed=seed,
                burn_in=conf["burn_in"],
                min_iters=conf["min_iters"],
                n_threads=n_threads,
            ),
        )
    return run_beyond(
        bench,
        BeyondConfig(
            tier=tier,
            draws_per_iter=conf["draws_per_iter"],
            onion=conf["onion"],
            fom_target=conf["fom_target"],
            max_iters=conf["max_iters"],
            seed=seed,
            burn_in=conf["burn_in"],
            min_iters=conf["min_iters"],
            reweight_archive=conf["reweight_archive"],
            cluster_k_max=conf["cluster_k_max"],
            cluster_accept_threshold=conf["cluster_accept_threshold"],
            n_threads=n_threads,
        ),
    )


def _sweep(fn, seeds: list, threads: int, parallel_ok: bool) -> list:
    """Run fn(seed) over the sweep; parallel seeds when allowed.  Results
    come back in seed order either way."""
    if threads > 1 and parallel_ok and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, seeds))
    return [fn(s) for s in seeds]


def _say(quiet: bool, msg: str) -> None:
    if not quiet:
        print(msg)


def cmd_estimate(conf, out_dir: Path, threads: int, quiet: bool, figures: bool) -> int:
    bench = _build_bench(conf["bench_spec"], "bench")
    tag, runner, tier = conf["methods"][0]
    seeds = conf["seeds"]
    inner_threads = threads if len(seeds) == 1 else 1

    def one(seed):
        return _run_method(tag, runner, tier, bench, conf, seed, inner_threads)

    reports = _sweep(one, seeds, threads, bench.concurrency_safe)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for rep in reports:
        rep.write_json(out_dir / f"run_{rep.seed}.json")
        rep.write_trajectory_csv(out_dir / f"traj_{rep.seed}.csv")
        rows.append(
            (rep.seed, rep.pf_estimate, rep.fom, rep.n_simulations, rep.converged)
        )
        _say(
            quiet,
            f"{rep.method} seed={rep.seed} pf={rep.pf_estimate:.6g} "
            f"fom={rep.fom:.4g} sims={rep.n_simulations} "
            f"{'converged' if rep.converged else 'NOT converged'}",
        )
    _write_csv(out_dir / "table.csv", "seed,pf,fom,sims,converged", rows)

    agg = _aggregate(reports)
    oracle = bench.oracle_pf
    summary = {
        "command": "estimate",
        "method": tag,
        "bench": bench.name,
        "dim": bench.dim,
        "oracle_pf": oracle,
        "oracle_se": bench.oracle_se,
        "fom_target": conf["fom_target"],
        "seeds": seeds,
        "aggregate": agg,
        "relative_error": (
            abs(agg["mean_pf"] / oracle - 1.0) if oracle else None
        ),
        "per_seed": [
            {
                "seed": r.seed,
                "pf": r.pf_estimate,
                "fom": r.fom,
                "n_simulations": r.n_simulations,
                "n_failures": r.n_failures,
                "converged": r.converged,
            }
            for r in reports
        ],
    }
    _write_json(out_dir / "summary.json", summary)
    if figures:
        from .plotting import render_estimate_figure

        render_estimate_figure(
            reports, oracle, conf["fom_target"], out_dir / "trajectory.png"
        )
    _say(
        quiet,
        f"mean pf {agg['mean_pf']:.6g} over {len(seeds)} seeds; "
        f"{agg['n_converged']} converged; outputs in {out_dir}",
    )
    return 0 if agg["n_converged"] == len(seeds) else 2


def cmd_compare(conf, out_dir: Path, threads: int, quiet: bool, figures: bool) -> int:
    bench = _build_bench(conf["bench_spec"], "bench")
    seeds = conf["seeds"]
    tags = [m[0] for m in conf["methods"]]
    if bench.oracle_pf is None and "mc" not in tags:
        raise ConfigError(
            "bench has no oracle; include \"mc\" in `methods` as the reference"
        )

    out_dir.mkdir(parents=True, exist_ok=True)
    by_method = {}
    for tag, runner, tier in conf["methods"]:
        def one(seed, _t=tag, _r=runner, _tier=tier):
            return _run_method(_t, _r, _tier, bench, conf, seed, 1)

        reports = _sweep(one, seeds, threads, bench.concurrency_safe)
        by_method[tag] = reports
        for rep in reports:
            rep.write_json(out_dir / f"run_{tag}_{rep.seed}.json")
            rep.write_trajectory_csv(out_dir / f"traj_{tag}_{rep.seed}.csv")
            _say(
                quiet,
                f"{tag} seed={rep.seed} pf={rep.pf_estimate:.6g} "
                f"sims={rep.n_simulations}",
            )

    if bench.oracle_pf is not None:
        reference = {"source": "oracle", "value": bench.oracle_pf}
    else:
        mc_agg = _aggregate(by_method["mc"])
        reference = {"source": "mc", "value": mc_agg["mean_pf"]}
    ref = reference["value"]
    mc_mean_sims = (
        float(np.mean([r.n_simulations for r in by_method["mc"]]))
        if "mc" in by_method
        else None
    )

    table = []
    for tag in tags:
        reports = by_method[tag]
        agg = _aggregate(reports)
        rel = abs(agg["mean_pf"] / ref - 1.0) if ref else math.inf
        speedup = (
            mc_mean_sims / agg["mean_sims"] if mc_mean_sims is not None else math.nan
        )
        incorrect = sum(
            1
            for r in reports
            if not ref or abs(r.pf_estimate / ref - 1.0) > 0.30
        )
        table.append(
            {
                "method": tag,
                "mean_pf": agg["mean_pf"],
                "rel_error": rel,
                "mean_sims": agg["mean_sims"],
                "speedup": speedup,
                "n_incorrect": incorrect,
                "n_converged": agg["n_converged"],
            }
        )

    _write_csv(
        out_dir / "table.csv",
        "method,mean_pf,rel_error,mean_sims,speedup,n_incorrect",
        [
            (
                r["method"],
                r["mean_pf"],
                r["rel_error"],
                r["mean_sims"],
                r["speedup"],
                r["n_incorrect"],
            )
            for r in table
        ],
    )
    widths = (24, 13, 11, 12, 9, 11)
    names = ("method", "mean_pf", "rel_error", "mean_sims", "speedup", "incorrect")
    text = ["".join(n.ljust(w) for n, w in zip(names, widths))]
    for r in table:
        cells = (
            r["method"],
            f"{r['mean_pf']:.5g}",
            f"{r['rel_error']:.4g}",
            f"{r['mean_sims']:.6g}",
            f"{r['speedup']:.4g}",
            str(r["n_incorrect"]),
        )
        text.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
    (out_dir / "table.txt").write_text("\n".join(text) + "\n")
    if not quiet:
        print("\n".join(text))

    summary = {
        "command": "compare",
        "bench": bench.name,
        "dim": bench.dim,
        "oracle_pf": bench.oracle_pf,
        "oracle_se": bench.oracle_se,
        "fom_target": conf["fom_target"],
        "seeds": seeds,
        "reference": reference,
        "methods": table,
        "per_seed": {
            tag: [
                {
                    "seed": r.seed,
                    "pf": r.pf_estimate,
                    "fom": r.fom,
                    "n_simulations": r.n_simulations,
                    "converged": r.converged,
                }
                for r in by_method[tag]
            ]
            for tag in tags
        },
    }
    _write_json(out_dir / "summary.json", summary)
    if figures:
        from .plotting import render_compare_figure

        render_compare_figure(table, out_dir / "comparison.png")
    all_converged = all(r.converged for reps in by_method.values() for r in reps)
    return 0 if all_converged else 2


def cmd_optimize(conf, out_dir: Path, threads: int, quiet: bool, figures: bool) -> int:
    seeds = conf["seeds"]
    out_dir.mkdir(parents=True, exist_ok=True)
    traces_by_mode = {}
    summary_modes = {}
    for mode in conf["modes"]:
        cfg = OptimizeConfig(
            z0=conf["z0"],
            box=conf["box"],
            step=conf["step"],
            fd_step=conf["fd_step"],
            max_outer_iters=conf["max_outer_iters"],
            omsv_mode=mode,
            failures_per_eval=conf["failures_per_eval"],
            grad_tol=conf["grad_tol"],
            onion=conf["onion"],
        )

        def one(seed, _cfg=cfg):
            return run_variational_asais(
                _cfg, conf["family"], substream(seed, rng_mod.DESIGN_EVAL)
            )

        traces = _sweep(one, seeds, threads, True)
        traces_by_mode[mode.value] = traces
        per_seed = []
        for seed, trace in zip(seeds, traces):
            trace.write_csv(out_dir / f"trace_{mode.value}_{seed}.csv")
            trace.write_json(out_dir / f"trace_{mode.value}_{seed}.json")
            per_seed.append(
                {
                    "seed": seed,
                    "initial_oracle_pf": trace.points[0].oracle_pf,
                    "final_oracle_pf": trace.final.oracle_pf,
                    "final_objective": trace.final.objective,
                    "total_simulations": trace.total_simulations,
                    "converged": trace.converged,
                }
            )
            _say(
                quiet,
                f"{mode.value} seed={seed} oracle_pf "
                f"{trace.points[0].oracle_pf:.4g} -> {trace.final.oracle_pf:.4g} "
                f"sims={trace.total_simulations}",
            )
        summary_modes[mode.value] = {
            "per_seed": per_seed,
            "median_final_oracle_pf": float(
                np.median([p["final_oracle_pf"] for p in per_seed])
            ),
            "median_total_simulations": float(
                np.median([p["total_simulations"] for p in per_seed])
            ),
        }
    summary = {
        "command": "optimize",
        "seeds": seeds,
        "z0": [float(v) for v in conf["z0"]],
        "modes": summary_modes,
    }
    _write_json(out_dir / "summary.json", summary)
    if figures:
        from .plotting import render_optimize_figure

        render_optimize_figure(traces_by_mode, out_dir / "optimization.png")
    return 0


_COMMANDS = {
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "optimize": cmd_optimize,
}


# ------------------------------------------------------------------ main


def _parse_seed_flag(text: str) -> list:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip() != ""]
    except ValueError as err:
        raise ConfigError(f"--seeds must be a comma-separated integer list") from err
    if not seeds or len(set(seeds)) != len(seeds) or any(s < 0 for s in seeds):
        raise ConfigError("--seeds must be nonempty, distinct, non-negative")
    return sorted(seeds)


def _resolve_threads(flag) -> int:
    if flag is not None:
        value = flag
    else:
        env = os.environ.get("VIS_YIELD_THREADS", "").strip()
        if not env:
            return 1
        try:
            value = int(env)
        except ValueError as err:
            raise ConfigError(
                f"VIS_YIELD_THREADS must be an integer, got {env!r}"
            ) from err
    if value < 1:
        raise ConfigError("thread count must be >= 1")
    return value


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="visyield",
        description="Rare-event yield estimation and design optimization "
        "with variationally fitted importance-sampling proposals.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("estimate", "run one method over a seed sweep"),
        ("compare", "run several methods on identical seeds"),
        ("optimize", "ascend the mean-shift norm over design parameters"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--output", default=None, help="output directory override")
        p.add_argument(
            "--seeds", default=None, help="comma-separated seed list override"
        )
        p.add_argument(
            "--threads",
            type=int,
            default=None,
            help="worker threads (default: VIS_YIELD_THREADS or 1)",
        )
        p.add_argument("--quiet", action="store_true", help="suppress progress lines")
        p.add_argument(
            "--no-figures",
            action="store_true",
            help="skip PNG rendering next to the delimited outputs",
        )
    args = parser.parse_args(argv)

    try:
        conf = load_config(args.config, args.command)
        if args.seeds is not None:
            conf["seeds"] = _parse_seed_flag(args.seeds)
        threads = _resolve_threads(args.threads)
        out_dir = Path(args.output) if args.output else Path(conf["output_dir"])
        return _COMMANDS[args.command](
            conf, out_dir, threads, args.quiet, not args.no_figures
        )
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (
        ContractError,
        EstimationError,
        FitError,
        InitializationError,
        SimulationError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
