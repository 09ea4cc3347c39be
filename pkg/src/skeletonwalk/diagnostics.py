"""Statistical checks of the skeleton scheme.

Every experiment draws path p at level k from the substream
(master_seed, k, p), processes paths in fixed-size batches and merges
results in path order, so a report depends only on its arguments.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import streams
from .discrete_calculus import covariation_with_walk, max_jump, project
from .exit_sampler import DEFAULT_LAW, UnitExitLaw, exit_scale, sample_exit
from .functionals import FunctionalSpec, compensated_square
from .skeleton import SkeletonPath, simulate_paths

DEFAULT_Z_THRESHOLD = 4.0
DEFAULT_BINS = 10
MIN_PER_BIN = 100
BATCH_PATHS = 2000
CI_LEVEL = 0.99


class InsufficientSamplesError(ValueError):
    """Too few samples for the requested test."""


class MissingTargetError(ValueError):
    """Experiment needs an analytic target the functional does not supply."""


class GridTooCoarseError(ValueError):
    """Fine grid cannot resolve the requested skeleton level."""


# -- small statistics helpers ------------------------------------------------

def confidence_interval(samples, level: float = CI_LEVEL) -> tuple[float, float]:
    """Mean and normal-approximation half-width at ``level``."""
    x = np.asarray(samples, dtype=float)
    if x.size < 2:
        raise InsufficientSamplesError("a confidence interval needs at least 2 samples")
    z = stats.norm.ppf(0.5 + level / 2)
    return float(x.mean()), float(z * x.std(ddof=1) / math.sqrt(x.size))


def _z_scores(mean, se):
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, mean / np.where(se > 0, se, 1.0),
                     np.where(mean == 0, 0.0, np.copysign(np.inf, mean)))
    return z


@dataclass
class RateFit:
    """Least-squares line log2(error) = slope * k + intercept."""

    levels: list
    errors: list
    slope: float
    intercept: float
    residual_norm: float

    def to_dict(self) -> dict:
        return asdict(self)


def fit_rate(levels: Sequence[int], errors: Sequence[float]) -> RateFit:
    levels = [int(k) for k in levels]
    err = np.asarray(errors, dtype=float)
    if len(levels) < 3:
        raise ValueError("a rate fit needs at least 3 levels")
    if np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ValueError("rate fit needs positive finite errors")
    y = np.log2(err)
    (slope, intercept), residuals, *_ = np.polyfit(levels, y, 1, full=True)
    res = float(math.sqrt(residuals[0])) if len(residuals) else 0.0
    return RateFit(levels, [float(e) for e in err], float(slope), float(intercept), res)


@dataclass
class LinearFit:
    slope: float
    intercept: float
    slope_se: float
    intercept_se: float
    chi2: float


def weighted_line(x, y, se) -> LinearFit:
    """Weighted least squares with known per-point standard errors."""
    x, y, se = (np.asarray(a, dtype=float) for a in (x, y, se))
    w = 1.0 / se ** 2
    X = np.column_stack([np.ones_like(x), x])
    cov = np.linalg.inv(X.T @ (w[:, None] * X))
    beta = cov @ (X.T @ (w * y))
    chi2 = float(np.sum(w * (y - X @ beta) ** 2))
    return LinearFit(float(beta[1]), float(beta[0]), float(math.sqrt(cov[1, 1])),
                     float(math.sqrt(cov[0, 0])), chi2)


# -- batching ----------------------------------------------------------------

def _batches(n_paths: int, batch: int = BATCH_PATHS):
    for start in range(0, n_paths, batch):
        yield range(start, min(start + batch, n_paths))


def _run_tasks(fn: Callable, tasks: list, workers: int):
    """Map in task order; ProcessPoolExecutor.map preserves ordering."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


# -- node samples ------------------------------------------------------------

@dataclass
class NodeSamples:
    """Pooled per-node records, sorted by (path, node).

    ``duration`` is Delta T_n, ``prior_value`` A_{T_{n-1}} and ``prior_time``
    T_{n-1}; together with the earlier history they generate G_{n-}.  The
    sign sigma_n is the withheld coordinate.
    """

    path_index: np.ndarray
    node_index: np.ndarray
    duration: np.ndarray
    sign: np.ndarray
    prior_value: np.ndarray
    prior_time: np.ndarray
    jump: np.ndarray
    control: Optional[np.ndarray] = None

    def __len__(self):
        return int(self.jump.size)

    @classmethod
    def concatenate(cls, parts: Sequence["NodeSamples"]) -> "NodeSamples":
        names = ["path_index", "node_index", "duration", "sign", "prior_value",
                 "prior_time", "jump"]
        kw = {n: np.concatenate([getattr(p, n) for p in parts]) for n in names}
        if parts and parts[0].control is not None:
            kw["control"] = np.concatenate([p.control for p in parts])
        return cls(**kw)


def _node_batch(spec: FunctionalSpec, k: int, T: float, master_seed: int,
                indices: range, with_control: bool) -> NodeSamples:
    paths = simulate_paths(k, T, master_seed, indices)
    cols = {n: [] for n in ("path_index", "node_index", "duration", "sign",
                            "prior_value", "prior_time", "jump", "control")}
    h = exit_scale(k) ** 0.5
    for p_idx, path in zip(indices, paths):
        n = path.n_nodes
        if n == 0:
            continue
        proj = project(path, spec, p_idx)
        cols["path_index"].append(np.full(n, p_idx))
        cols["node_index"].append(np.arange(1, n + 1))
        cols["duration"].append(path.durations[:n])
        cols["sign"].append(path.signs[:n])
        cols["prior_value"].append(path.values[:n])
        cols["prior_time"].append(path.times[:n])
        cols["jump"].append(proj.jumps)
        if with_control:
            # sign-carried part of the jump, with the true sign replaced by an
            # independent one: sigma' (u(T_n, x + h) - u(T_n, x - h)) / 2
            t_n = path.times[1:n + 1]
            x = path.values[:n]
            odd = 0.5 * (np.asarray(spec.node_mean(t_n, x + h), dtype=float)
                         - np.asarray(spec.node_mean(t_n, x - h), dtype=float))
            rng = streams.path_stream(master_seed, k, p_idx, streams.CONTROL)
            cols["control"].append(streams.random_signs(rng, n) * odd)
    if not cols["jump"]:
        empty = np.empty(0)
        return NodeSamples(empty.astype(int), empty.astype(int), empty, empty.astype(np.int8),
                           empty, empty, empty, empty if with_control else None)
    out = {c: np.concatenate(v) for c, v in cols.items() if v}
    return NodeSamples(out["path_index"], out["node_index"], out["duration"], out["sign"],
                       out["prior_value"], out["prior_time"], out["jump"],
                       out.get("control"))


def collect_nodes(spec: FunctionalSpec, k: int, T: float, n_paths: int,
                  master_seed: int = 0, with_control: bool = False,
                  workers: int = 1) -> NodeSamples:
    """Pool node records of ``n_paths`` skeletons of the projected functional."""
    if n_paths < 1:
        raise InsufficientSamplesError("n_paths must be at least 1")
    tasks = [(spec, k, T, master_seed, r, with_control) for r in _batches(n_paths)]
    return NodeSamples.concatenate(_run_tasks(_node_batch, tasks, workers))


# -- martingale criterion ----------------------------------------------------

@dataclass
class TestReport:
    """Binned conditional means of the jumps given the predictable history."""

    functional: str
    level: int
    horizon: float
    n_paths: int
    sample_count: int
    bin_edges: list
    bin_counts: list
    bin_mean_duration: list
    bin_mean: list
    bin_se: list
    bin_z: list
    z_threshold: float
    verdict: str
    fit: Optional[dict] = None
    seed: int = 0

    __test__ = False  # keep pytest from collecting this class

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.bin_z)))

    def rows(self) -> list[dict]:
        return [{"bin": i, "lower": self.bin_edges[i], "upper": self.bin_edges[i + 1],
                 "count": self.bin_counts[i], "mean_duration": self.bin_mean_duration[i],
                 "mean_jump": self.bin_mean[i], "se": self.bin_se[i], "z": self.bin_z[i]}
                for i in range(len(self.bin_counts))]

    def summary(self) -> dict:
        d = asdict(self)
        d["max_abs_z"] = self.max_abs_z
        return d


def _quantile_bins(duration: np.ndarray, n_bins: int):
    edges = np.quantile(duration, np.linspace(0.0, 1.0, n_bins + 1))
    labels = np.clip(np.searchsorted(edges[1:-1], duration, side="right"), 0, n_bins - 1)
    return edges, labels


def binned_means(samples: NodeSamples, values: np.ndarray, n_bins: int,
                 min_per_bin: int = MIN_PER_BIN, prior_bins: int = 1):
    """Per-bin mean, standard error, mean duration and count of ``values``.

    Bins are duration quantiles, optionally crossed with ``prior_bins``
    quantile bins of the prior walk value.
    """
    edges, labels = _quantile_bins(samples.duration, n_bins)
    if prior_bins > 1:
        p_edges = np.quantile(samples.prior_value, np.linspace(0, 1, prior_bins + 1))
        p_lab = np.clip(np.searchsorted(p_edges[1:-1], samples.prior_value, side="right"),
                        0, prior_bins - 1)
        labels = labels * prior_bins + p_lab
    n_cells = n_bins * prior_bins
    counts = np.bincount(labels, minlength=n_cells)
    if np.any(counts < min_per_bin):
        raise InsufficientSamplesError(
            f"smallest bin holds {int(counts.min())} samples, need {min_per_bin}; "
            f"pool at least {min_per_bin * n_cells} nodes")
    sums = np.bincount(labels, weights=values, minlength=n_cells)
    sq = np.bincount(labels, weights=values ** 2, minlength=n_cells)
    dur = np.bincount(labels, weights=samples.duration, minlength=n_cells) / counts
    mean = sums / counts
    var = np.maximum(sq / counts - mean ** 2, 0.0) * counts / (counts - 1)
    se = np.sqrt(var / counts)
    return edges, counts, mean, se, dur


def _required_paths(k: int, T: float, n_bins: int, prior_bins: int = 1) -> int:
    nodes_per_path = max(T / exit_scale(k) - 1, 0.5)
    return int(math.ceil(2 * MIN_PER_BIN * n_bins * prior_bins / nodes_per_path))


def martingale_test(spec: FunctionalSpec, k: int, T: float, n_paths: int,
                    n_bins: int = DEFAULT_BINS, z_threshold: float = DEFAULT_Z_THRESHOLD,
                    master_seed: int = 0, prior_bins: int = 1, workers: int = 1,
                    samples: Optional[NodeSamples] = None) -> TestReport:
    """Test E[xi_n | G_{n-}] = 0 by binning jumps on Delta T_n.

    Passes iff every bin mean is within ``z_threshold`` standard errors of 0.
    """
    if n_bins < 5:
        raise ValueError("martingale_test needs at least 5 bins")
    if n_paths < 1:
        raise InsufficientSamplesError(
            f"no paths given; about {_required_paths(k, T, n_bins, prior_bins)} are needed")
    if samples is None:
        samples = collect_nodes(spec, k, T, n_paths, master_seed, workers=workers)
    if len(samples) < MIN_PER_BIN * n_bins * prior_bins:
        raise InsufficientSamplesError(
            f"{len(samples)} pooled nodes is too few; use about "
            f"{_required_paths(k, T, n_bins, prior_bins)} paths")
    edges, counts, mean, se, dur = binned_means(samples, samples.jump, n_bins,
                                                prior_bins=prior_bins)
    z = _z_scores(mean, se)
    verdict = "pass" if np.all(np.abs(z) < z_threshold) else "fail"
    return TestReport(spec.name, k, T, n_paths, len(samples), edges.tolist(), counts.tolist(),
                      dur.tolist(), mean.tolist(), se.tolist(), z.tolist(), z_threshold,
                      verdict, seed=master_seed)


@dataclass
class CounterexampleReport:
    """Regression of binned jump means on binned durations for B^2 - t."""

    level: int
    horizon: float
    n_paths: int
    sample_count: int
    slope: float
    slope_se: float
    intercept: float
    intercept_se: float
    chi2: float
    target_slope: float
    target_intercept: float
    control_slope: float
    control_slope_se: float
    martingale: TestReport

    @property
    def slope_error(self) -> float:
        return self.slope - self.target_slope

    @property
    def intercept_z(self) -> float:
        return (self.intercept - self.target_intercept) / self.intercept_se

    @property
    def control_z(self) -> float:
        return self.control_slope / self.control_slope_se

    def check(self, slope_tol: float = 0.05, intercept_z: float = 2.0,
              z_threshold: float = DEFAULT_Z_THRESHOLD) -> dict:
        return {
            "martingale_rejected": not self.martingale.passed,
            "slope_within_tol": abs(self.slope_error) <= slope_tol,
            "intercept_within_se": abs(self.intercept_z) <= intercept_z,
            "control_slope_null": abs(self.control_z) < z_threshold,
        }

    def summary(self) -> dict:
        d = asdict(self)
        d["martingale"] = self.martingale.summary()
        d.update(intercept_z=self.intercept_z, control_z=self.control_z)
        return d


def counterexample_regression(k: int, T: float, n_paths: int, n_bins: int = DEFAULT_BINS,
                              z_threshold: float = DEFAULT_Z_THRESHOLD, master_seed: int = 0,
                              workers: int = 1) -> CounterexampleReport:
    """Fit binned E[xi | Delta T] for X = B^2 - t against 2^-2k - Delta T.

    The control replaces every sign by an independent one in the
    sign-carried part of the jump; its slope against Delta T must vanish.
    """
    spec = compensated_square(T)
    samples = collect_nodes(spec, k, T, n_paths, master_seed, with_control=True,
                            workers=workers)
    report = martingale_test(spec, k, T, n_paths, n_bins, z_threshold, master_seed,
                             samples=samples)
    fit = weighted_line(report.bin_mean_duration, report.bin_mean, report.bin_se)
    _, _, c_mean, c_se, c_dur = binned_means(samples, samples.control, n_bins)
    c_fit = weighted_line(c_dur, c_mean, c_se)
    report.fit = {"slope": fit.slope, "intercept": fit.intercept}
    return CounterexampleReport(k, T, n_paths, len(samples), fit.slope, fit.slope_se,
                                fit.intercept, fit.intercept_se, fit.chi2, -1.0,
                                exit_scale(k), c_fit.slope, c_fit.slope_se, report)


# -- covariation limit -------------------------------------------------------

def _covariation_batch(specs: Sequence[FunctionalSpec], k: int, T: float, master_seed: int,
                       indices: range, antithetic: Sequence[bool]) -> np.ndarray:
    paths = simulate_paths(k, T, master_seed, indices)
    out = np.empty((len(specs), len(paths)))
    for j, (p_idx, path) in enumerate(zip(indices, paths)):
        mirror = mirror_path(path) if any(antithetic) else None
        for i, spec in enumerate(specs):
            v = covariation_with_walk(project(path, spec, p_idx).jumps, path, T)
            if antithetic[i]:
                v = 0.5 * (v + covariation_with_walk(project(mirror, spec, p_idx).jumps,
                                                     mirror, T))
            out[i, j] = v
    return out


def mirror_path(path: SkeletonPath) -> SkeletonPath:
    """The reflected skeleton: same durations, every sign flipped."""
    return SkeletonPath(path.level, path.horizon, path.times, -path.signs, -path.values)


@dataclass
class CovariationTable:
    """Per-level Monte Carlo estimates of E[delta^k X, A^k]_T."""

    functional: str
    horizon: float
    n_paths: int
    antithetic: bool
    target: float
    levels: list
    estimates: list
    half_widths: list
    sandwich_low: list
    sandwich_high: list
    seed: int = 0

    @property
    def errors(self) -> list:
        return [e - self.target for e in self.estimates]

    def covers_target(self, level: int) -> bool:
        i = self.levels.index(level)
        return abs(self.estimates[i] - self.target) <= self.half_widths[i]

    def within_sandwich(self, level: int) -> bool:
        i = self.levels.index(level)
        e, hw = self.estimates[i], self.half_widths[i]
        return self.sandwich_low[i] - hw <= e <= self.sandwich_high[i] + hw

    def abs_error_decreasing(self) -> bool:
        err = np.abs(self.errors)
        return bool(np.all(np.diff(err) < 0))

    def rows(self) -> list[dict]:
        return [{"level": k, "estimate": e, "half_width": hw, "target": self.target,
                 "error": e - self.target, "sandwich_low": lo, "sandwich_high": hi}
                for k, e, hw, lo, hi in zip(self.levels, self.estimates, self.half_widths,
                                            self.sandwich_low, self.sandwich_high)]

    def summary(self) -> dict:
        d = asdict(self)
        d["errors"] = self.errors
        return d


def covariation_limit_experiments(specs: Sequence[FunctionalSpec], levels: Iterable[int],
                                  T: float, n_paths: int, master_seed: int = 0,
                                  targets: Optional[dict] = None,
                                  antithetic: bool | Iterable[str] = False,
                                  workers: int = 1) -> dict[str, CovariationTable]:
    """Covariation experiment for several functionals on shared skeleton paths.

    ``antithetic`` is a flag for all functionals or a collection of functional
    names.  An antithetic sample averages a path with its reflection, which
    is the same skeleton with every sign flipped.
    """
    specs = list(specs)
    if isinstance(antithetic, bool):
        anti = [antithetic] * len(specs)
    else:
        names = set(antithetic)
        anti = [s.name in names for s in specs]
    levels = [int(k) for k in levels]
    targets = dict(targets or {})
    for s in specs:
        if s.horizon != T:
            raise ValueError(f"functional {s.name!r} has horizon {s.horizon}, expected {T}")
        if s.name not in targets:
            if s.covariation_target is None:
                raise MissingTargetError(
                    f"functional {s.name!r} has no known E[X,B]_T; supply a target")
            targets[s.name] = s.covariation_target
    if n_paths < 2:
        raise InsufficientSamplesError("need at least 2 paths for a confidence interval")
    per_level = {}
    for k in levels:
        tasks = [(specs, k, T, master_seed, r, anti) for r in _batches(n_paths)]
        per_level[k] = np.concatenate(_run_tasks(_covariation_batch, tasks, workers), axis=1)
    tables = {}
    for i, s in enumerate(specs):
        est, hws = [], []
        for k in levels:
            m, hw = confidence_interval(per_level[k][i])
            est.append(m)
            hws.append(hw)
        tables[s.name] = CovariationTable(
            s.name, T, n_paths, anti[i], float(targets[s.name]), levels, est, hws,
            [T - exit_scale(k) for k in levels], [T for _ in levels], master_seed)
    return tables


def covariation_limit_experiment(spec: FunctionalSpec, levels: Iterable[int], T: float,
                                 n_paths: int, master_seed: int = 0,
                                 target: Optional[float] = None, antithetic: bool = False,
                                 workers: int = 1) -> CovariationTable:
    """Estimate E[delta^k X, A^k]_T per level, with 99% intervals.

    The target E[X, B]_T comes from the functional unless ``target`` is given.
    The Wald bounds [T - 2^-2k, T] apply to the identity functional.
    """
    targets = None if target is None else {spec.name: target}
    return covariation_limit_experiments([spec], levels, T, n_paths, master_seed, targets,
                                         antithetic, workers)[spec.name]


# -- discrete derivative -----------------------------------------------------

def _derivative_batch(spec: FunctionalSpec, k: int, T: float, master_seed: int,
                      indices: range) -> tuple[float, int]:
    total, count = 0.0, 0
    for p_idx, path in zip(indices, simulate_paths(k, T, master_seed, indices)):
        n = path.n_nodes
        if n == 0:
            continue
        proj = project(path, spec, p_idx)
        truth = np.asarray(spec.derivative(path.times[:n], path.values[:n]), dtype=float)
        diff = np.abs(proj.derivatives - truth)
        total += float(diff.sum())
        count += n
    return total, count


@dataclass
class DerivativeErrorReport:
    """Mean |D^k_n - DX(T_{n-1}, A_{n-1})| pooled over paths and nodes."""

    functional: str
    horizon: float
    n_paths: int
    levels: list
    mean_abs_error: list
    node_counts: list
    fit: Optional[RateFit]
    seed: int = 0

    def strictly_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.mean_abs_error) < 0))

    def rows(self) -> list[dict]:
        return [{"level": k, "mean_abs_error": e, "nodes": c}
                for k, e, c in zip(self.levels, self.mean_abs_error, self.node_counts)]

    def summary(self) -> dict:
        d = asdict(self)
        d["fit"] = None if self.fit is None else self.fit.to_dict()
        return d


def derivative_error_experiment(spec: FunctionalSpec, levels: Iterable[int], T: float,
                                n_paths: int, master_seed: int = 0,
                                workers: int = 1) -> DerivativeErrorReport:
    """Pooled mean absolute error of the discrete derivative, per level.

    The log2 slope is fitted when at least 3 levels have nonzero error;
    otherwise ``fit`` is None (e.g. the identity, where the error is 0).
    """
    if spec.true_derivative is None:
        raise MissingTargetError(f"functional {spec.name!r} has no true derivative")
    if n_paths < 1:
        raise InsufficientSamplesError("n_paths must be at least 1")
    levels = [int(k) for k in levels]
    errors, counts = [], []
    for k in levels:
        tasks = [(spec, k, T, master_seed, r) for r in _batches(n_paths)]
        parts = _run_tasks(_derivative_batch, tasks, workers)
        total = sum(p[0] for p in parts)
        count = sum(p[1] for p in parts)
        if count == 0:
            raise InsufficientSamplesError(f"no skeleton nodes at level {k}")
        errors.append(total / count)
        counts.append(count)
    fit = fit_rate(levels, errors) if len(levels) >= 3 and all(e > 0 for e in errors) else None
    return DerivativeErrorReport(spec.name, T, n_paths, levels, errors, counts, fit,
                                 master_seed)


# -- fine-grid coupled oracle ------------------------------------------------

@dataclass(frozen=True, eq=False)
class FineGridPath:
    """Brownian path observed at times 0, dt, 2 dt, ..."""

    dt: float
    values: np.ndarray

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.values.size)


def _fine_increments(rng: np.random.Generator, dt: float, n: int) -> np.ndarray:
    return math.sqrt(dt) * rng.standard_normal(n)


def _check_grid(dt: float, k: int):
    if not dt > 0:
        raise ValueError("dt must be positive")
    if dt > exit_scale(k) / 100:
        raise GridTooCoarseError(
            f"dt={dt} is too coarse for level {k}; need dt <= {exit_scale(k) / 100:.3g}")


def _next_crossing(values: np.ndarray, start: int, level: float, h: float,
                   window: int) -> int:
    """First index > start with |values - level| >= h, or -1."""
    i = start + 1
    n = values.size
    while i < n:
        seg = values[i:i + window]
        hits = np.flatnonzero(np.abs(seg - level) >= h)
        if hits.size:
            return i + int(hits[0])
        i += window
        window *= 2
    return -1


def extract_skeleton_from_path(fine_path: FineGridPath, k: int, T: float) -> SkeletonPath:
    """Read the level-k skeleton off a grid path.

    A node is recorded at the first grid time where the path leaves the open
    band (L - 2^-k, L + 2^-k) around the last recorded level L; the new level
    is L +/- 2^-k.  The grid path must extend past the first crossing after T.
    """
    _check_grid(fine_path.dt, k)
    h = math.ldexp(1.0, -k)
    window = max(64, int(4 * exit_scale(k) / fine_path.dt))
    b = fine_path.values
    idx, signs = [0], []
    level = 0.0
    while True:
        i = _next_crossing(b, idx[-1], level, h, window)
        if i < 0:
            raise ValueError("fine path ends before the first crossing after the horizon")
        s = 1 if b[i] > level else -1
        level += s * h
        idx.append(i)
        signs.append(s)
        if i * fine_path.dt > T:
            break
    times = fine_path.dt * np.asarray(idx, dtype=float)
    signs = np.asarray(signs, dtype=np.int8)
    values = np.concatenate(([0.0], h * np.cumsum(signs, dtype=np.int64)))
    return SkeletonPath(k, float(T), times, signs, values)


def simulate_coupled_path(k: int, T: float, dt: float, master_seed: int,
                          path_index: int) -> tuple[FineGridPath, SkeletonPath]:
    """Grid Brownian path on [0, T] (extended to the overshoot) and its skeleton."""
    _check_grid(dt, k)
    rng = streams.path_stream(master_seed, k, path_index, streams.FINE_GRID)
    n = int(math.ceil(T / dt))
    incs = [_fine_increments(rng, dt, n)]
    extra = max(64, int(4 * exit_scale(k) / dt))
    while True:
        b = np.concatenate(([0.0], np.cumsum(np.concatenate(incs))))
        try:
            fine = FineGridPath(dt, b)
            return fine, extract_skeleton_from_path(fine, k, T)
        except ValueError as exc:
            if "ends before" not in str(exc):
                raise
            incs.append(_fine_increments(rng, dt, extra))


def fine_grid_durations(k: int, dt: float, count: int, master_seed: int = 0,
                        chunk_steps: int = 2_000_000) -> np.ndarray:
    """``count`` successive level-k crossing durations of one long grid path.

    Durations are i.i.d. by the strong Markov property (up to grid effects),
    unlike the durations of a horizon-truncated path.
    """
    _check_grid(dt, k)
    h = math.ldexp(1.0, -k)
    rng = streams.substream(master_seed, k, 0, streams.FINE_GRID)
    out = np.empty(count)
    found = 0
    level, last_idx, offset, carry = 0.0, 0, 0, 0.0
    while found < count:
        b = carry + np.cumsum(_fine_increments(rng, dt, chunk_steps))
        start = -1
        while found < count:
            # indices in this chunk are global offset + 1 + local
            i = _next_crossing(b, start, level, h, max(64, int(4 * exit_scale(k) / dt)))
            if i < 0:
                break
            g = offset + 1 + i
            out[found] = (g - last_idx) * dt
            found += 1
            level += h if b[i] > level else -h
            last_idx, start = g, i
        carry = b[-1]
        offset += chunk_steps
    return out


@dataclass
class JumpBoundResult:
    """max_n |xi_n| against 2 sup_t |delta^k X_t - X_t| on a grid."""

    left: float
    right: float
    tolerance: float
    passed: bool


def jump_bound_check(spec: FunctionalSpec, k: int, fine_path: FineGridPath,
                     skeleton: Optional[SkeletonPath] = None) -> JumpBoundResult:
    """Check sup|jump of delta^k X| <= 2 sup|delta^k X - X| on coupled paths.

    The grid tolerance is the largest one-step change of X over the grid
    steps that contain a skeleton node: at such a step the triangle
    inequality picks up exactly that oscillation.
    """
    if not spec.is_markovian_closed_form:
        raise ValueError("jump_bound_check needs a closed-form Markovian functional")
    T = spec.horizon
    if skeleton is None:
        skeleton = extract_skeleton_from_path(fine_path, k, T)
    proj = project(skeleton, spec)
    left = max_jump(proj)
    n_grid = int(math.floor(T / fine_path.dt + 1e-9)) + 1
    t = fine_path.times[:n_grid]
    t = np.minimum(t, T)
    b = fine_path.values[:n_grid]
    x = np.asarray(spec.node_mean(t, b), dtype=float)
    c = np.searchsorted(skeleton.times[: skeleton.n_nodes + 1], t, side="right") - 1
    delta = proj.node_values[c]
    right = 2.0 * float(np.max(np.abs(delta - x)))
    node_idx = np.rint(skeleton.times[1: skeleton.n_nodes + 1] / fine_path.dt).astype(int)
    if node_idx.size:
        osc = float(np.max(np.abs(x[node_idx] - x[node_idx - 1])))
    else:
        osc = 0.0
    tol = osc + 64 * np.finfo(float).eps * max(1.0, float(np.max(np.abs(x))))
    return JumpBoundResult(left, right, tol, bool(left <= right + tol))


@dataclass
class JumpBoundSummary:
    functional: str
    level: int
    n_paths: int
    dt: float
    violations: int
    worst_margin: float
    results: list = field(repr=False, default_factory=list)

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def rows(self) -> list[dict]:
        return [{"path": i, "left": r.left, "right": r.right, "tolerance": r.tolerance,
                 "passed": r.passed} for i, r in enumerate(self.results)]


def jump_bound_experiment(spec: FunctionalSpec, k: int, n_paths: int, dt: float,
                          master_seed: int = 0) -> JumpBoundSummary:
    """Run :func:`jump_bound_check` on ``n_paths`` coupled paths."""
    results = []
    for p in range(n_paths):
        fine, skel = simulate_coupled_path(k, spec.horizon, dt, master_seed, p)
        results.append(jump_bound_check(spec, k, fine, skel))
    margins = [r.right + r.tolerance - r.left for r in results]
    return JumpBoundSummary(spec.name, k, n_paths, dt, sum(not r.passed for r in results),
                            float(min(margins)) if margins else math.inf, results)


# -- exit-law checks ---------------------------------------------------------

@dataclass
class ExitLawReport:
    level: int
    n_draws: int
    mean: float
    variance: float
    target_mean: float
    target_variance: float
    ks_statistic: float
    ks_pvalue: float


def exit_law_check(k: int, n_draws: int, master_seed: int = 0,
                   law: UnitExitLaw = DEFAULT_LAW) -> ExitLawReport:
    """Moments of ``n_draws`` exact level-k exit times and their KS distance."""
    rng = streams.substream(master_seed, k, 0, streams.SKELETON)
    draws = sample_exit(k, rng, n_draws, law)
    scale = exit_scale(k)
    ks = stats.kstest(draws / scale, law.cdf)
    return ExitLawReport(k, n_draws, float(draws.mean()), float(draws.var(ddof=1)),
                         scale, (2 / 3) * scale ** 2, float(ks.statistic), float(ks.pvalue))
