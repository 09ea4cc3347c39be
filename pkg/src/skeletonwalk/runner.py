"""Experiment runner: subcommands, serialization and the run manifest.

Each subcommand produces CSV tables plus a summary entry and a set of named
checks.  Checks flagged theorem-backed decide the exit status; the others
are reported only.  Statistical theorem-backed checks use ``z_threshold``
standard errors, so a fresh seed does not flip them.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import diagnostics as dg
from .config import SUBCOMMANDS, ConfigError, ExperimentConfig
from .discrete_calculus import bracket_of_bracket, project, reconstruct
from .exit_sampler import exit_scale, unit_exit_moment
from .functionals import make_functional
from .skeleton import simulate_paths

CSV_SCHEMAS = {
    "exit_law.csv": ("level", "n_draws", "mean", "variance", "target_mean",
                     "target_variance", "ks_statistic", "ks_pvalue"),
    "simulate_levels.csv": ("level", "n_paths", "mean_nodes", "mean_bracket_T",
                            "mean_terminal_square", "max_identity_error"),
    "skeleton.csv": ("n", "time", "sign", "value"),
    "projected.csv": ("n", "time", "sign", "value", "node_value", "jump", "derivative"),
    "martingale_bins.csv": ("level", "bin", "lower", "upper", "count", "mean_duration",
                            "mean_jump", "se", "z"),
    "counterexample.csv": ("level", "slope", "slope_se", "intercept", "intercept_se",
                           "target_intercept", "control_slope", "control_slope_se",
                           "max_abs_z"),
    "covariation.csv": ("level", "estimate", "half_width", "target", "error",
                        "sandwich_low", "sandwich_high"),
    "derivative_rates.csv": ("level", "mean_abs_error", "nodes"),
    "jump_bound.csv": ("level", "path", "left", "right", "tolerance", "passed"),
}
SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "SKELETONWALK_OUTPUT_DIR"
_MARTINGALES = ("identity", "constant")


@dataclass
class Check:
    passed: bool
    theorem_backed: bool
    detail: str = ""


@dataclass
class SubResult:
    files: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


@dataclass
class RunResult:
    status: int
    output_dir: Path
    files: list
    checks: dict


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: _fmt(r.get(c, "")) for c in columns})
    return buf.getvalue()


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else repr(f)
    return obj


def _dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


# -- subcommands ---------------------------------------------------------------

def _sample_exit(cfg: ExperimentConfig) -> SubResult:
    res = SubResult()
    m2, m3, m4 = (unit_exit_moment(m) for m in (2, 3, 4))
    # central moments of the unit law: var 2/3 and mu4
    var = m2 - 1
    mu4 = m4 - 4 * m3 + 6 * m2 - 3
    rows = []
    for k in cfg.levels:
        r = dg.exit_law_check(k, cfg.n_draws, cfg.master_seed)
        s = exit_scale(k)
        se_mean = math.sqrt(var / r.n_draws) * s
        se_var = math.sqrt((mu4 - var ** 2) / r.n_draws) * s * s
        z_mean = (r.mean - r.target_mean) / se_mean
        z_var = (r.variance - r.target_variance) / se_var
        ok = abs(z_mean) < cfg.z_threshold and abs(z_var) < cfg.z_threshold \
            and r.ks_pvalue > 1e-6
        res.checks[f"sample-exit/k={k}/law"] = Check(
            ok, True, f"z_mean={z_mean:.3f} z_var={z_var:.3f} ks={r.ks_statistic:.5f}")
        rows.append(vars(r))
        res.summary[f"k={k}"] = {**vars(r), "z_mean": z_mean, "z_var": z_var}
    res.files["exit_law.csv"] = _csv(rows, CSV_SCHEMAS["exit_law.csv"])
    return res


def _simulate(cfg: ExperimentConfig) -> SubResult:
    res = SubResult()
    spec = make_functional(cfg.functional, cfg.T, **cfg.functional_params())
    rows = []
    for k in cfg.levels:
        h2 = exit_scale(k)
        nodes, brackets, squares, worst = [], [], [], 0.0
        for batch in dg._batches(cfg.n_paths):
            for p_idx, path in zip(batch, simulate_paths(k, cfg.T, cfg.master_seed, batch)):
                proj = project(path, spec, p_idx)
                steps_ok = np.all(np.abs(np.diff(path.values)) == math.ldexp(1.0, -k))
                br = float(np.sum(path.increments ** 2))
                scale = max(1.0, float(np.max(np.abs(proj.node_values))))
                bb = bracket_of_bracket(proj.jumps, path)
                err = max(
                    abs(br - h2 * path.n_nodes) / max(br, 1e-300),
                    abs(bb - h2 * float(np.sum(proj.jumps ** 2))) / max(bb, 1e-300),
                    float(np.max(np.abs(reconstruct(proj) - proj.node_values))) / scale,
                    0.0 if steps_ok else math.inf)
                worst = max(worst, err)
                nodes.append(path.n_nodes)
                brackets.append(br)
                squares.append(path.values[path.n_nodes] ** 2)
                if p_idx < cfg.n_dump:
                    res.files[f"skeleton_k{k}_p{p_idx}.csv"] = path.to_csv()
                    res.files[f"projected_k{k}_p{p_idx}.csv"] = proj.to_csv()
        rows.append({"level": k, "n_paths": cfg.n_paths, "mean_nodes": float(np.mean(nodes)),
                     "mean_bracket_T": float(np.mean(brackets)),
                     "mean_terminal_square": float(np.mean(squares)),
                     "max_identity_error": worst})
        res.checks[f"simulate/k={k}/identities"] = Check(worst <= 1e-10, True,
                                                         f"max relative error {worst:.3g}")
    res.files["simulate_levels.csv"] = _csv(rows, CSV_SCHEMAS["simulate_levels.csv"])
    res.summary["levels"] = rows
    return res


def _martingale(cfg: ExperimentConfig) -> SubResult:
    res = SubResult()
    spec = make_functional(cfg.functional, cfg.T, **cfg.functional_params())
    rows = []
    for k in cfg.levels:
        rep = dg.martingale_test(spec, k, cfg.T, cfg.n_paths, cfg.bins, cfg.z_threshold,
                                 cfg.master_seed, cfg.prior_bins, cfg.workers)
        for r in rep.rows():
            rows.append({"level": k, **r})
        backed = spec.name in _MARTINGALES
        res.checks[f"martingale-test/{spec.name}/k={k}"] = Check(
            rep.passed, backed,
            f"verdict={rep.verdict} max|z|={rep.max_abs_z:.3f}")
        res.summary[f"k={k}"] = rep.summary()
    res.files["martingale_bins.csv"] = _csv(rows, CSV_SCHEMAS["martingale_bins.csv"])
    return res


def _counterexample(cfg: ExperimentConfig) -> SubResult:
    res = SubResult()
    rows = []
    for k in cfg.levels:
        rep = dg.counterexample_regression(k, cfg.T, cfg.n_paths, cfg.bins, cfg.z_threshold,
                                           cfg.master_seed, cfg.workers)
        slope_z = rep.slope_error / rep.slope_se
        ok = (not rep.martingale.passed) and abs(slope_z) < cfg.z_threshold \
            and abs(rep.intercept_z) < cfg.z_threshold and abs(rep.control_z) < cfg.z_threshold
        res.checks[f"counterexample/k={k}"] = Check(
            ok, True, f"slope={rep.slope:.4f} (z={slope_z:.2f}) "
                      f"intercept_z={rep.intercept_z:.2f} control_z={rep.control_z:.2f}")
        rows.append({"level": k, "slope": rep.slope, "slope_se": rep.slope_se,
                     "intercept": rep.intercept, "intercept_se": rep.intercept_se,
                     "target_intercept": rep.target_intercept,
                     "control_slope": rep.control_slope,
                     "control_slope_se": rep.control_slope_se,
                     "max_abs_z": rep.martingale.max_abs_z})
        res.summary[f"k={k}"] = rep.summary()
    res.files["counterexample.csv"] = _csv(rows, CSV_SCHEMAS["counterexample.csv"])
    return res


def _covariation(cfg: ExperimentConfig) -> SubResult:
    res = SubResult()
    spec = make_functional(cfg.functional, cfg.T, **cfg.functional_params())
    table = dg.covariation_limit_experiment(spec, cfg.levels, cfg.T, cfg.n_paths,
                                            cfg.master_seed, antithetic=cfg.antithetic,
                                            workers=cfg.workers)
    z99 = dg.stats.norm.ppf(0.5 + dg.CI_LEVEL / 2)
    for k, est, hw, lo, hi in zip(table.levels, table.estimates, table.half_widths,
                                  table.sandwich_low, table.sandwich_high):
        if spec.name == "identity":
            slack = hw / z99 * cfg.z_threshold
            ok = lo - slack <= est <= hi + slack
            res.checks[f"covariation/identity/k={k}/wald"] = Check(
                ok, True, f"estimate={est:.6f} in [{lo:.6f}, {hi:.6f}] +/- {slack:.2g}")
        else:
            res.checks[f"covariation/{spec.name}/k={k}/covers"] = Check(
                True, False, f"estimate={est:.6f} target={table.target} hw={hw:.3g}")
    res.files["covariation.csv"] = _csv(table.rows(), CSV_SCHEMAS["covariation.csv"])
    res.summary[spec.name] = table.summary()
    return res


def _derivative(cfg: ExperimentConfig) -> SubResult:
    res = SubResult()
    spec = make_functional(cfg.functional, cfg.T, **cfg.functional_params())
    rep = dg.derivative_error_experiment(spec, cfg.levels, cfg.T, cfg.n_paths,
                                         cfg.master_seed, cfg.workers)
    if spec.name == "identity":
        res.checks["derivative-rates/identity/exact"] = Check(
            all(e == 0.0 for e in rep.mean_abs_error), True, str(rep.mean_abs_error))
    else:
        slope = None if rep.fit is None else rep.fit.slope
        res.checks[f"derivative-rates/{spec.name}/decreasing"] = Check(
            rep.strictly_decreasing(), False, f"slope={slope}")
    res.files["derivative_rates.csv"] = _csv(rep.rows(), CSV_SCHEMAS["derivative_rates.csv"])
    res.summary[spec.name] = rep.summary()
    return res


def _jump_bound(cfg: ExperimentConfig) -> SubResult:
    res = SubResult()
    spec = make_functional(cfg.functional, cfg.T, **cfg.functional_params())
    rows = []
    for k in cfg.levels:
        summ = dg.jump_bound_experiment(spec, k, cfg.n_coupled, cfg.dt, cfg.master_seed)
        rows.extend({"level": k, **r} for r in summ.rows())
        res.checks[f"jump-bound/{spec.name}/k={k}"] = Check(
            summ.passed, True, f"violations={summ.violations} worst_margin={summ.worst_margin:.3g}")
        res.summary[f"k={k}"] = {"violations": summ.violations,
                                 "worst_margin": summ.worst_margin, "n_paths": summ.n_paths}
    res.files["jump_bound.csv"] = _csv(rows, CSV_SCHEMAS["jump_bound.csv"])
    return res


HANDLERS = {
    "sample-exit": _sample_exit,
    "simulate": _simulate,
    "martingale-test": _martingale,
    "counterexample": _counterexample,
    "covariation": _covariation,
    "derivative-rates": _derivative,
    "jump-bound": _jump_bound,
}


def validate_for(subcommand: str, cfg: ExperimentConfig) -> None:
    """Checks that depend on the subcommand; raises ConfigError."""
    spec = make_functional(cfg.functional, cfg.T, **cfg.functional_params())
    if subcommand == "jump-bound":
        for k in cfg.levels:
            if cfg.dt > exit_scale(k) / 100:
                raise ConfigError(f"dt: {cfg.dt} is too coarse for level {k} "
                                  f"(need <= {exit_scale(k) / 100:.3g})")
        if not spec.is_markovian_closed_form:
            raise ConfigError(f"functional: jump-bound needs a closed-form functional, "
                              f"got {cfg.functional!r}")
    if subcommand == "derivative-rates" and spec.true_derivative is None:
        raise ConfigError(f"functional: {cfg.functional!r} has no closed-form derivative")


def run(subcommand: str, cfg: ExperimentConfig, output_dir: str | os.PathLike | None = None
        ) -> RunResult:
    """Run one subcommand (or ``all``) and write its outputs.

    Writes CSV tables, ``summary.json`` and ``manifest.json`` into the output
    directory.  Status 0 iff every theorem-backed check passed, else 1.
    """
    if subcommand != "all" and subcommand not in HANDLERS:
        raise ValueError(f"unknown subcommand {subcommand!r}; "
                         f"choose from {list(SUBCOMMANDS) + ['all']}")
    names = list(SUBCOMMANDS) if subcommand == "all" else [subcommand]
    configs = {n: cfg.for_subcommand(n) for n in names}
    for n, c in configs.items():
        validate_for(n, c)
    out = Path(output_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    files: dict[str, str] = {}
    checks: dict[str, Check] = {}
    summary: dict = {"config_hash": cfg.content_hash(), "seed": cfg.master_seed,
                     "version": __version__, "experiments": {}}
    for n in names:
        sub = HANDLERS[n](configs[n])
        prefix = "" if subcommand != "all" else f"{n}__"
        files.update({prefix + f: text for f, text in sub.files.items()})
        checks.update(sub.checks)
        summary["experiments"][n] = sub.summary
    summary["verdicts"] = {name: {"passed": c.passed, "theorem_backed": c.theorem_backed,
                                  "detail": c.detail} for name, c in checks.items()}
    files["summary.json"] = _dumps(summary)
    hashes = {}
    for fname, text in sorted(files.items()):
        data = text.encode()
        (out / fname).write_bytes(data)
        hashes[fname] = hashlib.sha256(data).hexdigest()
    status = 0 if all(c.passed for c in checks.values() if c.theorem_backed) else 1
    manifest = {
        "artifact_version": __version__,
        "subcommand": subcommand,
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
        "csv_schema_version": SCHEMA_VERSION,
        "csv_schemas": {k: list(v) for k, v in CSV_SCHEMAS.items()},
        "wall_clock_seconds": time.time() - started,
        "verdicts": {name: c.passed for name, c in checks.items()},
        "status": status,
        "file_hashes": hashes,
    }
    (out / "manifest.json").write_text(_dumps(manifest))
    return RunResult(status, out, sorted(files) + ["manifest.json"], checks)
