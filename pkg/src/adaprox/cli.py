"""Command-line experiment runner.

Subcommands
-----------
run        sweep controllers x parameters x steplengths x seeds, write traces
reference  compute phi* with the deterministic method (cached by config hash)
emit       long-format plot data from an artifact directory
verify     statistical and exhaustive checks, reported as JSON

Exit codes: 0 success, 1 configuration or input error, 2 numerical failure
in at least one cell, 3 a verification check did not pass.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from copy import deepcopy
from pathlib import Path

import numpy as np
import yaml

from . import prox as proxmod
from .controllers import CONTROLLER_KINDS, ControllerConfig
from .data import read_libsvm, scale_features, subsample
from .exceptions import ConfigError, NumericalFailure, ReferenceDivergence
from .problems import LogisticL1Instance, exact_phi, make_pool_quadratic
from .solver import SolverConfig, solve, solve_deterministic

log = logging.getLogger("adaprox")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 1, 2, 3

# 2^-10, 2^-7, ..., 2^14, then the stated upper end 2^15
DEFAULT_EXPONENTS = list(range(-10, 15, 3)) + [15]
DEFAULT_SWEEP = [
    {"kind": "norm", "eta": [0.5, 0.7, 0.9, 0.99]},
    {"kind": "ip", "beta": [0.5, 0.7, 0.9, 0.99]},
    {"kind": "geometric", "gamma": [0.1, 0.2, 0.5]},
]
DEFAULT_N_SEEDS = 5
TRACE_COLUMNS = ["k", "S_k", "batch_fraction", "cum_samples", "eff_grad_evals", "phi_gap",
                 "step_norm_over_alpha", "resampled", "wall_ms"]


# ---------------------------------------------------------------------------
# configuration


def load_config(path) -> dict:
    """Read a YAML or JSON config file (JSON is valid YAML)."""
    try:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    cfg.setdefault("_base_dir", str(Path(path).resolve().parent))
    return cfg


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def expand_controllers(entries) -> list[ControllerConfig]:
    """Turn sweep entries like ``{kind: norm, eta: [0.5, 0.9]}`` into configs."""
    out = []
    for entry in entries:
        entry = dict(entry)
        kind = str(entry.pop("kind", "")).lower()
        if kind not in CONTROLLER_KINDS:
            raise ConfigError(f"unknown controller {kind!r}; choose from {CONTROLLER_KINDS}")
        common = {k: entry.pop(k) for k in ("S0", "cap") if k in entry}
        if kind == "ip" and "eta" in entry and "beta" not in entry:
            for eta in _as_list(entry.pop("eta")):
                out.append(ControllerConfig.ip_from_eta(float(eta), **common))
        else:
            param = {"norm": "eta", "oracle": "eta", "ip": "beta", "geometric": "gamma"}[kind]
            values = _as_list(entry.pop(param, getattr(ControllerConfig, param)))
            for v in values:
                out.append(ControllerConfig(kind, **{param: float(v)}, **common))
        if entry:
            raise ConfigError(f"unexpected keys for {kind} controller: {sorted(entry)}")
    labels = [c.label for c in out]
    if len(set(labels)) != len(labels):
        raise ConfigError("duplicate controller settings in sweep")
    return out


def resolve_config(raw: dict, args=None) -> dict:
    """Fill defaults and apply flag overrides; the result is JSON-serialisable."""
    cfg = deepcopy(raw)
    base_dir = cfg.pop("_base_dir", None)
    problem = dict(cfg.get("problem") or {})
    if args is not None and getattr(args, "dataset", None):
        problem = {"dataset": args.dataset}
        base_dir = None
    if "dataset" in problem and "quadratic" in problem:
        raise ConfigError("problem needs exactly one of 'dataset' or 'quadratic'")
    if "dataset" in problem:
        path = Path(problem["dataset"])
        if not path.is_absolute() and base_dir is not None and not path.exists():
            path = Path(base_dir) / path
        problem["dataset"] = str(path)
        problem.setdefault("label_map", "auto")
        problem.setdefault("expected_dim", None)
        problem.setdefault("subsample", None)
        problem.setdefault("scaling", "none")
    elif "quadratic" in problem:
        q = dict(problem["quadratic"])
        for key in ("dimension", "mu", "L", "sigma"):
            if key not in q:
                raise ConfigError(f"quadratic problem needs '{key}'")
        q.setdefault("pool_size", None)
        q.setdefault("seed", 0)
        q.setdefault("singular", 0)
        q.setdefault("constraint", None)
        problem["quadratic"] = q
    else:
        raise ConfigError("problem needs a 'dataset' path or a 'quadratic' spec")
    problem.setdefault("lam", None)
    problem.setdefault("h", None)
    cfg["problem"] = problem

    sweep = cfg.get("controllers") or deepcopy(DEFAULT_SWEEP)
    if args is not None and args.controller:
        entry = {"kind": args.controller}
        for name in ("eta", "beta", "gamma"):
            v = getattr(args, name)
            if v is not None:
                entry[name] = v
        if entry.keys() == {"kind"}:
            # keep the configured grid for that kind
            picked = [dict(e) for e in sweep if str(e.get("kind", "")).lower() == args.controller]
            sweep = picked or [entry]
        else:
            sweep = [entry]
    expand_controllers(sweep)  # validate early
    cfg["controllers"] = sweep

    step = dict(cfg.get("steplength") or {})
    step.setdefault("mode", "grid")
    if args is not None and args.alpha is not None:
        step = {"mode": "theory"} if args.alpha == "theory" else {"mode": "grid", "values": [float(args.alpha)]}
    if step.get("mode") == "grid":
        if "values" not in step:
            step["values"] = [2.0**e for e in step.get("exponents", DEFAULT_EXPONENTS)]
        step.pop("exponents", None)
        step["values"] = [float(a) for a in step["values"]]
        if not step["values"] or min(step["values"]) <= 0:
            raise ConfigError("steplengths must be positive")
    elif step.get("mode") != "theory":
        raise ConfigError("steplength mode must be 'grid' or 'theory'")
    cfg["steplength"] = step

    if args is not None and args.seed is not None:
        cfg["seeds"] = [int(args.seed)]
    elif "seeds" not in cfg:
        base = int(os.environ.get("ADAPROX_SEED", "0"))
        cfg["seeds"] = list(range(base, base + DEFAULT_N_SEEDS))
    cfg["seeds"] = [int(s) for s in _as_list(cfg["seeds"])]
    if args is not None and args.max_epochs is not None:
        cfg["max_epochs"] = float(args.max_epochs)
    cfg.setdefault("max_epochs", 100.0)
    cfg.setdefault("max_iter", None)
    cfg.setdefault("step_tolerance", 1e-8)
    cfg.setdefault("record_every", 1)
    if args is not None and getattr(args, "timing", False):
        cfg["timing"] = True
    cfg.setdefault("timing", False)
    ref = dict(cfg.get("reference") or {})
    ref.setdefault("iterations", 50_000)
    ref.setdefault("alpha", "auto")
    ref.setdefault("divergence_window", 100)
    cfg["reference"] = ref
    if args is not None and args.out:
        cfg["output"] = args.out
    cfg.setdefault("output", "adaprox-out")
    return cfg


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(cfg: dict) -> str:
    """Hash of everything that determines the numbers (not the output location)."""
    body = {k: v for k, v in cfg.items() if k not in ("output", "config_hash")}
    return hashlib.sha256(_canonical(body).encode()).hexdigest()[:16]


def reference_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical({"problem": cfg["problem"], "reference": cfg["reference"]}).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# problems


def build_problem(problem_cfg: dict):
    """Return ``(problem, h, info)`` for a resolved problem section."""
    if "dataset" in problem_cfg:
        path = problem_cfg["dataset"]
        if not os.path.exists(path):
            raise ConfigError(f"dataset not found: {path}")
        ds = read_libsvm(path, expected_dim=problem_cfg["expected_dim"], label_map=problem_cfg["label_map"])
        sub = problem_cfg.get("subsample")
        if sub:
            ds = subsample(ds, int(sub["n"]), int(sub.get("seed", 0)))
        ds = scale_features(ds, problem_cfg.get("scaling", "none"))
        p = LogisticL1Instance.from_dataset(ds, lam=problem_cfg["lam"])
        info = {"name": ds.name, "N": ds.n_samples, "d": ds.n_features,
                "source_checksum": ds.source_checksum, "lam": p.lam, "provenance": ds.provenance}
    else:
        q = problem_cfg["quadratic"]
        p = make_pool_quadratic(int(q["dimension"]), float(q["mu"]), float(q["L"]), float(q["sigma"]),
                                pool_size=q["pool_size"], seed=int(q["seed"]), singular=int(q["singular"]),
                                constraint=q["constraint"])
        info = {"name": "pool-quadratic", "N": p.n_samples, "d": p.dimension, "mu": p.mu, "L": p.L}
    h_spec = problem_cfg.get("h")
    if h_spec is None:
        h = p.default_h()
    else:
        h_spec = dict(h_spec)
        if h_spec.get("kind") == "l1" and "weight" not in h_spec and hasattr(p, "lam"):
            h_spec["weight"] = p.lam
        h = proxmod.from_spec(h_spec, p.dimension)
    info["h"] = h.describe()
    return p, h, info


# ---------------------------------------------------------------------------
# reference


def _auto_reference_alpha(p, h, trial_iters=500):
    """Largest-decrease steplength among ``2^j / L``, ``j = 0..10``, over a short run."""
    best = None
    for j in range(11):
        alpha = 2.0**j / p.L
        try:
            path = solve_deterministic(p, h, alpha, trial_iters, divergence_window=20)
        except (NumericalFailure, ValueError):
            continue
        if best is None or path.best_phi < best[1]:
            best = (alpha, path.best_phi)
    if best is None:
        raise ReferenceDivergence("no steplength 2^j/L gave a stable run", iteration=0)
    return best[0]


def compute_reference(cfg: dict, out_dir: Path, problem=None) -> dict:
    """phi* by deterministic proximal gradient; reuses ``reference.json`` on a hash match."""
    out_dir = Path(out_dir)
    target = out_dir / "reference.json"
    rhash = reference_hash(cfg)
    if target.exists():
        try:
            cached = json.loads(target.read_text())
            if cached.get("reference_hash") == rhash:
                log.info("reference cache hit (%s)", rhash)
                cached["cached"] = True
                return cached
        except json.JSONDecodeError:
            pass
    p, h, info = problem if problem is not None else build_problem(cfg["problem"])
    rcfg = cfg["reference"]
    if "phi_star" in rcfg:
        rec = {"phi_star": float(rcfg["phi_star"]), "x_star_norm": None, "alpha": None,
               "iterations": 0, "source": "config"}
    else:
        if rcfg["alpha"] == "auto":
            alpha = _auto_reference_alpha(p, h)
        elif rcfg["alpha"] == "theory":
            alpha = 1.0 / p.L
        else:
            alpha = float(rcfg["alpha"])
        path = solve_deterministic(p, h, alpha, int(rcfg["iterations"]),
                                   divergence_window=rcfg["divergence_window"])
        rec = {"phi_star": float(path.best_phi), "x_star_norm": float(np.linalg.norm(path.best_x)),
               "alpha": alpha, "iterations": int(rcfg["iterations"]),
               "final_step_norm_over_alpha": float(np.linalg.norm(path.x - path.best_x)) / alpha,
               "source": "deterministic proximal gradient"}
    rec.update(reference_hash=rhash, problem=info, cached=False)
    out_dir.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(rec, indent=2, default=str) + "\n")
    return rec


# ---------------------------------------------------------------------------
# sweep


def _alpha_tag(alpha) -> str:
    if alpha == "theory":
        return "theory"
    m, e = math.frexp(alpha)
    return f"2^{e - 1}" if m == 0.5 else repr(float(alpha))


def _setting_tag(c: ControllerConfig) -> str:
    meta = c.metadata()
    key = {"norm": "eta", "oracle": "eta", "ip": "beta", "geometric": "gamma"}[c.kind]
    return f"{c.kind.upper()}_{key}={meta[key]:g}"


def enumerate_cells(cfg: dict) -> list[dict]:
    alphas = ["theory"] if cfg["steplength"]["mode"] == "theory" else cfg["steplength"]["values"]
    cells = []
    for c in expand_controllers(cfg["controllers"]):
        for alpha in alphas:
            for seed in cfg["seeds"]:
                cells.append({
                    "cell": f"{_setting_tag(c)}_alpha={_alpha_tag(alpha)}_seed={seed}",
                    "label": c.label,
                    "controller": c,
                    "alpha": alpha,
                    "seed": seed,
                })
    return cells


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def trace_rows(records, N, S0, phi0_gap):
    """Rows for ``trace_<cell>.csv``; row 0 is the starting point."""
    rows = [[0, S0, S0 / N, 0, 0.0, phi0_gap, math.nan, False, math.nan]]
    for r in records:
        rows.append([r.k, r.batch_size, r.batch_size / N, r.cumulative_samples,
                     r.effective_gradient_evaluations, r.phi_gap, r.step_norm_over_alpha,
                     r.resampled, r.wall_time * 1e3])
    return rows


def write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    path.write_bytes(buf.getvalue().encode())


_WORKER = {}


def _init_worker(problem_cfg):
    _WORKER["problem"] = build_problem(problem_cfg)


def run_cell(cell: dict, cfg: dict, phi_star: float, out_dir: str, problem=None) -> dict:
    """Run one (controller, alpha, seed) cell and write its trace."""
    p, h, info = problem if problem is not None else _WORKER["problem"]
    c = cell["controller"]
    scfg = SolverConfig(controller=c, alpha=cell["alpha"], max_epochs=float(cfg["max_epochs"]),
                        max_iter=cfg["max_iter"], step_tolerance=float(cfg["step_tolerance"]),
                        seed=int(cell["seed"]), record_every=int(cfg["record_every"]),
                        timing=bool(cfg["timing"]))
    result = {k: cell[k] for k in ("cell", "label", "seed")}
    result.update(c.metadata())
    result["kind"] = c.kind
    result["alpha_tag"] = _alpha_tag(cell["alpha"])
    try:
        alpha = scfg.resolve_alpha(p)
        result["alpha"] = alpha
        # divergence is reported as a failed cell, not as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            _, records = solve(p, h, scfg, phi_star=phi_star)
    except ConfigError as exc:
        result.update(status="config_error", error=str(exc))
        return result
    except ArithmeticError as exc:
        result.update(status="numerical_failure", error=f"{type(exc).__name__}: {exc}")
        return result
    N = p.n_samples
    phi0_gap = exact_phi(p, h, np.zeros(p.dimension)) - phi_star
    S0 = c.S0 if c.cap is None else min(c.S0, c.cap)
    fname = f"trace_{cell['cell']}.csv"
    write_csv(Path(out_dir) / fname, TRACE_COLUMNS, trace_rows(records, N, min(S0, N), phi0_gap))
    last = records[-1]
    result.update(status="ok", trace=fname, iterations=last.k, stop_reason=last.stop_reason,
                  final_phi=last.phi, final_gap=last.phi_gap, cum_samples=last.cumulative_samples,
                  eff_grad_evals=last.effective_gradient_evaluations,
                  final_batch_fraction=last.batch_size / N)
    return result


def select_best(results: list[dict]) -> dict:
    """Best steplength per setting and best setting per method.

    Argmin of the seed-mean final gap; ties go to fewer mean effective
    gradient evaluations, then to the smaller steplength. Cells with any
    failed seed are not eligible.
    """
    groups = {}
    for r in results:
        groups.setdefault(r["label"], {}).setdefault(r["alpha_tag"], []).append(r)
    settings = {}
    for label, by_alpha in groups.items():
        table = {}
        for tag, rs in by_alpha.items():
            ok = [r for r in rs if r["status"] == "ok"]
            gaps = np.array([r["final_gap"] for r in ok])
            evals = np.array([r["eff_grad_evals"] for r in ok])
            table[tag] = {
                "alpha": ok[0]["alpha"] if ok else None,
                "n_seeds": len(rs),
                "failures": len(rs) - len(ok),
                "mean_final_gap": float(gaps.mean()) if ok else None,
                "sem_final_gap": float(gaps.std(ddof=1) / math.sqrt(len(ok))) if len(ok) > 1 else 0.0,
                "mean_eff_grad_evals": float(evals.mean()) if ok else None,
                "mean_cum_samples": float(np.mean([r["cum_samples"] for r in ok])) if ok else None,
                "mean_final_batch_fraction": float(np.mean([r["final_batch_fraction"] for r in ok])) if ok else None,
            }
        eligible = [(t, v) for t, v in table.items() if v["failures"] == 0 and np.isfinite(v["mean_final_gap"])]
        best = min(eligible, key=lambda tv: (tv[1]["mean_final_gap"], tv[1]["mean_eff_grad_evals"], tv[1]["alpha"])) \
            if eligible else (None, None)
        first = next(iter(by_alpha.values()))[0]
        settings[label] = {"kind": first["kind"], "best_alpha_tag": best[0],
                           "best_alpha": best[1]["alpha"] if best[1] else None, "by_alpha": table}
    methods = {}
    for label, s in settings.items():
        if s["best_alpha_tag"] is None:
            continue
        v = s["by_alpha"][s["best_alpha_tag"]]
        key = (v["mean_final_gap"], v["mean_eff_grad_evals"], v["alpha"])
        cur = methods.get(s["kind"])
        if cur is None or key < cur["_key"]:
            methods[s["kind"]] = {"label": label, "alpha_tag": s["best_alpha_tag"], "alpha": v["alpha"],
                                  "mean_final_gap": v["mean_final_gap"],
                                  "mean_eff_grad_evals": v["mean_eff_grad_evals"], "_key": key}
    for m in methods.values():
        m.pop("_key")
    return {"settings": settings, "best_per_method": methods}


def read_trace(path: Path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {col: np.array([float(r[col]) for r in rows]) for col in TRACE_COLUMNS}


def best_comparison_rows(out_dir: Path, results, selection):
    """Per-seed and seed-mean traces of the best run for each method."""
    rows = []
    for kind in sorted(selection["best_per_method"]):
        b = selection["best_per_method"][kind]
        cells = [r for r in results if r["label"] == b["label"] and r["alpha_tag"] == b["alpha_tag"]]
        traces = []
        for r in sorted(cells, key=lambda r: r["seed"]):
            t = read_trace(out_dir / r["trace"])
            traces.append(t)
            for i in range(len(t["k"])):
                rows.append([b["label"], b["alpha_tag"], str(r["seed"]), int(t["k"][i]),
                             t["eff_grad_evals"][i], t["phi_gap"][i], t["batch_fraction"][i]])
        n = min(len(t["k"]) for t in traces)
        for i in range(n):
            rows.append([b["label"], b["alpha_tag"], "mean", i,
                         float(np.mean([t["eff_grad_evals"][i] for t in traces])),
                         float(np.mean([t["phi_gap"][i] for t in traces])),
                         float(np.mean([t["batch_fraction"][i] for t in traces]))])
    return rows


def run_experiment(cfg: dict, jobs: int = 1) -> tuple[Path, dict]:
    """Run every cell of a resolved config; returns the artifact dir and summary."""
    out_dir = Path(cfg["output"])
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        probe = out_dir / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out_dir} is not writable: {exc}") from exc
    chash = config_hash(cfg)
    problem = build_problem(cfg["problem"])
    resolved = dict(cfg, config_hash=chash)
    (out_dir / "config.json").write_text(json.dumps(resolved, indent=2, sort_keys=True, default=str) + "\n")
    ref = compute_reference(cfg, out_dir, problem)
    phi_star = ref["phi_star"]
    cells = enumerate_cells(cfg)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker, initargs=(cfg["problem"],)) as ex:
            futures = [ex.submit(run_cell, cell, cfg, phi_star, str(out_dir)) for cell in cells]
            results = [f.result() for f in futures]
    else:
        results = [run_cell(cell, cfg, phi_star, str(out_dir), problem) for cell in cells]
    selection = select_best(results)
    summary = {
        "config_hash": chash,
        "phi_star": phi_star,
        "problem": problem[2],
        "selection_rule": "argmin seed-mean final phi_gap; ties: fewer effective gradient evaluations, then smaller alpha",
        "cells": [{k: v for k, v in r.items()} for r in results],
        "failures": [r["cell"] for r in results if r["status"] != "ok"],
        **selection,
    }
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    write_csv(out_dir / "best_comparison.csv",
              ["series_label", "alpha", "seed", "k", "eff_grad_evals", "phi_gap", "batch_fraction"],
              best_comparison_rows(out_dir, results, selection))
    return out_dir, summary


# ---------------------------------------------------------------------------
# plot data


def emit_plot_data(out_dir) -> tuple[list[Path], list[str]]:
    """Write ``plot_gap_vs_evals.csv`` and ``plot_batch_fraction.csv``.

    Returns the written paths and the cells whose traces are missing.
    """
    out_dir = Path(out_dir)
    cfg_path = out_dir / "config.json"
    if not cfg_path.exists():
        raise ConfigError(f"{out_dir} has no config.json; run the sweep first")
    cfg = json.loads(cfg_path.read_text())
    cells = enumerate_cells(cfg)
    missing, present = [], []
    for cell in cells:
        f = out_dir / f"trace_{cell['cell']}.csv"
        (present if f.exists() else missing).append((cell, f))
    gap_rows, frac_rows = [], []
    for cell, f in present:
        t = read_trace(f)
        tag = _alpha_tag(cell["alpha"])
        for i in range(len(t["k"])):
            gap_rows.append([cell["label"], tag, cell["seed"], t["eff_grad_evals"][i], t["phi_gap"][i]])
            frac_rows.append([cell["label"], tag, cell["seed"], int(t["k"][i]), t["batch_fraction"][i]])
    header = ["series_label", "alpha", "seed", "x", "y"]
    paths = [out_dir / "plot_gap_vs_evals.csv", out_dir / "plot_batch_fraction.csv"]
    write_csv(paths[0], header, gap_rows)
    write_csv(paths[1], header, frac_rows)
    return paths, [c["cell"] for c, _ in missing]


# ---------------------------------------------------------------------------
# verification suites


def run_verify(which: str, seeds: int, horizon: int | None, base_seed: int) -> dict:
    from . import verify

    reports = {}
    if which in ("linear", "all"):
        p = make_pool_quadratic(5, 0.1, 1.0, 1.0, seed=base_seed)
        reports["linear"] = verify.check_linear_rate(
            p, 0.5, range(base_seed, base_seed + seeds), horizon or 30, x0=np.full(5, 3.0)).as_dict()
    if which in ("sublinear", "all"):
        p = make_pool_quadratic(5, 0.1, 1.0, 1.0, seed=base_seed, singular=2)
        reports["sublinear"] = verify.check_sublinear_rate(
            p, 0.5, range(base_seed, base_seed + seeds), horizon or 50, x0=np.full(5, 3.0), k_min=5).as_dict()
    if which in ("eq-test", "all"):
        rng = np.random.default_rng(base_seed)
        results = []
        for i in range(50):
            d = int(rng.integers(2, 4))
            con = rng.normal(size=d) if i % 2 else None
            p = make_pool_quadratic(d, 0.2, 1.0, float(rng.uniform(0.1, 2.0)),
                                    pool_size=int(rng.integers(3, 7)), seed=base_seed + i, constraint=con)
            h = p.default_h()
            x = h.prox(1.0, rng.normal(size=d))
            for S in (1, 2, 3, 4, 6):
                r = verify.check_eq_test_implied(p, x, 0.5 / p.L, 0.5, S)
                results.append({"instance": i, "S": S, "lhs": r.lhs, "rhs": r.rhs, "ptest": r.ptest_holds,
                                "eq_test": r.eq_test_holds, "implication": r.implication_holds})
        reports["eq-test"] = {"passed": all(r["implication"] for r in results), "cases": results}
    if which in ("figure1", "all"):
        r = verify.check_figure1_phenomenon()
        reports["figure1"] = {**{k: v for k, v in vars(r).items()}, "passed": r.passed}
    return reports


# ---------------------------------------------------------------------------
# entry point


def _add_run_flags(sp):
    sp.add_argument("config", nargs="?", help="YAML or JSON experiment config")
    sp.add_argument("--dataset", help="LIBSVM file; replaces the config's problem section")
    sp.add_argument("--controller", choices=CONTROLLER_KINDS)
    sp.add_argument("--eta", type=float)
    sp.add_argument("--beta", type=float)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--alpha", help="steplength, or 'theory' for (1-eta)/L")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--max-epochs", type=float)
    sp.add_argument("--out")
    sp.add_argument("--jobs", type=int, default=1)
    sp.add_argument("--timing", action="store_true", help="record wall_ms (breaks byte-identical replay)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adaprox", description="Adaptive-sampling proximal gradient experiments")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="run a sweep"))
    sp = sub.add_parser("reference", help="compute phi* into reference.json")
    _add_run_flags(sp)
    sp.add_argument("--iterations", type=int, help="deterministic iterations (default 50000)")
    sp.add_argument("--ref-alpha", help="steplength for the reference run, 'auto' or 'theory'")
    sp = sub.add_parser("emit", help="write long-format plot data")
    sp.add_argument("artifact_dir")
    sp = sub.add_parser("verify", help="run verification checks and print JSON")
    sp.add_argument("check", nargs="?", default="all", choices=["all", "linear", "sublinear", "eq-test", "figure1"])
    sp.add_argument("--seeds", type=int, default=200)
    sp.add_argument("--horizon", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", help="write the JSON report here as well")
    return ap


def _raw_config(args) -> dict:
    if args.config:
        return load_config(args.config)
    if args.dataset:
        return {}
    raise ConfigError("give a config file or --dataset")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "run":
            cfg = resolve_config(_raw_config(args), args)
            out_dir, summary = run_experiment(cfg, jobs=max(1, args.jobs))
            n_fail = len(summary["failures"])
            print(f"{len(summary['cells'])} cells, {n_fail} failed; artifacts in {out_dir}")
            for cell in summary["failures"]:
                print(f"  failed: {cell}", file=sys.stderr)
            if any(r["status"] == "config_error" for r in summary["cells"]):
                return EXIT_CONFIG
            return EXIT_NUMERIC if n_fail else EXIT_OK
        if args.command == "reference":
            raw = _raw_config(args)
            cfg = resolve_config(raw, args)
            if args.iterations is not None:
                cfg["reference"]["iterations"] = args.iterations
            if args.ref_alpha is not None:
                ra = args.ref_alpha
                cfg["reference"]["alpha"] = ra if ra in ("auto", "theory") else float(ra)
            rec = compute_reference(cfg, Path(cfg["output"]))
            print(json.dumps({k: rec[k] for k in ("phi_star", "x_star_norm", "alpha", "cached")}))
            return EXIT_OK
        if args.command == "emit":
            paths, missing = emit_plot_data(args.artifact_dir)
            for p in paths:
                print(p)
            if missing:
                print(f"{len(missing)} traces missing:", file=sys.stderr)
                for m in missing:
                    print(f"  {m}", file=sys.stderr)
                return EXIT_CONFIG
            return EXIT_OK
        if args.command == "verify":
            base = args.seed if args.seed is not None else int(os.environ.get("ADAPROX_SEED", "0"))
            reports = run_verify(args.check, args.seeds, args.horizon, base)
            text = json.dumps(reports, indent=2, default=str)
            if args.out:
                Path(args.out).write_text(text + "\n")
            print(text)
            return EXIT_OK if all(r["passed"] for r in reports.values()) else EXIT_CHECK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ReferenceDivergence as exc:
        print(f"reference diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
