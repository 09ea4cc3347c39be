"""Level-k skeleton of Brownian motion.

At level k the stopping times T_n are the successive first exits of B from a
band of half-width 2^-k around the last recorded level.  The durations are
i.i.d. copies of 2^-2k times the unit exit law, the signs are i.i.d. fair and
independent of the durations, and the embedded walk is
A_{T_n} = 2^-k (sigma_1 + ... + sigma_n).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import streams
from .exit_sampler import DEFAULT_LAW, UnitExitLaw, exit_scale

DEFAULT_MAX_STEPS = 10**8


class SkeletonTooLargeError(ValueError):
    """Expected step count of a path exceeds the memory cap."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class StepFunction:
    """Right-continuous piecewise-constant function of time."""

    jump_times: np.ndarray
    jump_sizes: np.ndarray
    initial_value: float = 0.0

    def __post_init__(self):
        if len(self.jump_times) != len(self.jump_sizes):
            raise ValueError("jump_times and jump_sizes differ in length")
        if np.any(np.diff(self.jump_times) < 0):
            raise ValueError("jump_times must be non-decreasing")
        object.__setattr__(self, "_levels",
                           self.initial_value + np.concatenate(([0.0], np.cumsum(self.jump_sizes))))

    def __call__(self, t):
        idx = np.searchsorted(self.jump_times, t, side="right")
        out = self._levels[idx]
        return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class SkeletonPath:
    """One realisation of the level-k stopping-time grid up to horizon T.

    ``times`` holds T_0 = 0 < T_1 < ... < T_N <= T and one overshoot time
    T_{N+1} > T; ``signs[n-1]`` is sigma_n and ``values[n]`` is A at T_n, for
    n = 0..N+1.
    """

    level: int
    horizon: float
    times: np.ndarray
    signs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times, signs, values = self.times, self.signs, self.values
        if len(times) < 2 or len(signs) != len(times) - 1 or len(values) != len(times):
            raise ValueError("inconsistent skeleton array lengths")
        if times[0] != 0.0 or values[0] != 0.0:
            raise ValueError("skeleton must start at time 0 and level 0")
        assert np.all(np.diff(times) > 0), "skeleton times must increase strictly"
        if not (times[-2] <= self.horizon < times[-1]):
            raise ValueError("last time must be the single overshoot past the horizon")
        if not np.all(np.isin(signs, (-1, 1))):
            raise ValueError("signs must be +1 or -1")
        walk = math.ldexp(1.0, -self.level) * np.cumsum(signs, dtype=np.int64)
        if not np.array_equal(values[1:], walk):
            raise ValueError("values must be the partial sums of 2^-k * signs")
        for name in ("times", "signs", "values"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    @property
    def n_nodes(self) -> int:
        """N, the number of stopping times in (0, T]."""
        return len(self.times) - 2

    @property
    def step(self) -> float:
        return math.ldexp(1.0, -self.level)

    @property
    def durations(self) -> np.ndarray:
        """Delta T_1 .. Delta T_{N+1} (overshoot step included)."""
        return np.diff(self.times)

    @property
    def increments(self) -> np.ndarray:
        """Delta A_1 .. Delta A_N over the retained nodes."""
        return self.step * self.signs[: self.n_nodes].astype(np.float64)

    def walk(self) -> StepFunction:
        n = self.n_nodes
        return StepFunction(self.times[1:n + 1], self.increments, 0.0)

    def to_csv(self) -> str:
        """Columnar text dump: n, time, sign, value (sign empty at n = 0)."""
        buf = io.StringIO()
        buf.write("n,time,sign,value\n")
        for n, (t, a) in enumerate(zip(self.times, self.values)):
            sign = "" if n == 0 else str(int(self.signs[n - 1]))
            buf.write(f"{n},{float(t)!r},{sign},{float(a)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, level: int, horizon: float) -> "SkeletonPath":
        rows = [line.split(",") for line in text.strip().splitlines()[1:]]
        times = np.array([float(r[1]) for r in rows])
        signs = np.array([int(r[2]) for r in rows[1:]], dtype=np.int8)
        values = np.array([float(r[3]) for r in rows])
        return cls(level, horizon, times, signs, values)


def _check_level_horizon(k: int, T: float, max_steps: int) -> float:
    if k < 0:
        raise ValueError(f"level must be >= 0, got {k}")
    if not T > 0:
        raise ValueError(f"horizon must be positive, got {T}")
    expected = T / exit_scale(k)
    if expected > max_steps:
        raise SkeletonTooLargeError(
            f"level {k} over horizon {T} needs ~{expected:.3g} steps per path, "
            f"above the cap of {max_steps}")
    return expected


def _chunk_size(expected: float) -> int:
    # mean + 6 sd of the step count (Var tau / E tau = 2/3), plus slack
    return int(expected + 6 * math.sqrt(expected * 2 / 3) + 8)


def _chained_total(total: float, durations: np.ndarray) -> float:
    # cumsum is sequential, so chaining reproduces the final time of the
    # cumulative sum over all chunks bit for bit
    return float(np.cumsum(np.concatenate(([total], durations)))[-1])


def _build_path(k: int, T: float, durations: np.ndarray, signs: np.ndarray) -> SkeletonPath:
    times = np.concatenate(([0.0], np.cumsum(durations)))
    n_keep = int(np.searchsorted(times, T, side="right"))  # N + 1 points <= T
    times = times[: n_keep + 1]
    signs = signs[:n_keep]
    values = np.concatenate(([0.0], math.ldexp(1.0, -k) * np.cumsum(signs, dtype=np.int64)))
    return SkeletonPath(k, float(T), times, signs, values)


def simulate_skeleton(k: int, T: float, uniform_source: np.random.Generator,
                      law: UnitExitLaw = DEFAULT_LAW,
                      max_steps: int = DEFAULT_MAX_STEPS) -> SkeletonPath:
    """Simulate one level-k skeleton path on [0, T].

    Each step consumes one 53-bit word of ``uniform_source``: the low bit is
    the sign, the rest drives the inverse-transform duration draw.  Drawing
    stops at the first time past ``T``, which is kept as the overshoot.
    """
    expected = _check_level_horizon(k, T, max_steps)
    scale = exit_scale(k)
    chunk = _chunk_size(expected)
    durations, signs, total = [], [], 0.0
    while total <= T:
        u, s = streams.split_words(streams.skeleton_words(uniform_source, chunk))
        d = scale * law.quantile_survival(u)
        durations.append(d)
        signs.append(s)
        total = _chained_total(total, d)
    return _build_path(k, T, np.concatenate(durations), np.concatenate(signs))


def simulate_paths(k: int, T: float, master_seed: int, path_indices: Iterable[int],
                   law: UnitExitLaw = DEFAULT_LAW,
                   max_steps: int = DEFAULT_MAX_STEPS) -> list[SkeletonPath]:
    """Simulate many paths, path p driven by the substream (master_seed, k, p).

    Bit-identical to calling :func:`simulate_skeleton` on each substream; the
    inverse transforms of a whole batch are done in one vectorised call.
    """
    expected = _check_level_horizon(k, T, max_steps)
    scale = exit_scale(k)
    chunk = _chunk_size(expected)
    indices = list(path_indices)
    rngs = [streams.path_stream(master_seed, k, p, streams.SKELETON) for p in indices]
    durations = [[] for _ in indices]
    signs = [[] for _ in indices]
    pending = list(range(len(indices)))
    totals = np.zeros(len(indices))
    while pending:
        words = np.concatenate([streams.skeleton_words(rngs[i], chunk) for i in pending])
        u, s = streams.split_words(words)
        d = scale * law.quantile_survival(u)
        d = d.reshape(len(pending), chunk)
        s = s.reshape(len(pending), chunk)
        still = []
        for row, i in enumerate(pending):
            durations[i].append(d[row])
            signs[i].append(s[row])
            totals[i] = _chained_total(totals[i], d[row])
            if totals[i] <= T:
                still.append(i)
        pending = still
    return [_build_path(k, T, np.concatenate(durations[i]), np.concatenate(signs[i]))
            for i in range(len(indices))]


def _check_time(path: SkeletonPath, t) -> np.ndarray:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(t_arr > path.horizon) or np.any(np.isnan(t_arr)):
        raise ValueError(f"t must lie in [0, {path.horizon}]")
    return t_arr


def counting(path: SkeletonPath, t):
    """C_t = max{n : T_n <= t}."""
    t_arr = _check_time(path, t)
    c = np.searchsorted(path.times[: path.n_nodes + 1], t_arr, side="right") - 1
    return int(c) if c.ndim == 0 else c


def walk_value(path: SkeletonPath, t):
    """A^k_t, the walk value of the last node at or before t."""
    out = path.values[counting(path, t)]
    return float(out) if np.ndim(out) == 0 else out


def bracket_walk(path: SkeletonPath, t):
    """[A^k, A^k]_t = 2^-2k C_t."""
    c = counting(path, t)
    return exit_scale(path.level) * c


def terminal_values(paths: Sequence[SkeletonPath]) -> np.ndarray:
    """A^k_T for each path."""
    return np.array([p.values[p.n_nodes] for p in paths])
