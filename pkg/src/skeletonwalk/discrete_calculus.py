"""Projection onto the skeleton filtration and its pathwise calculus.

Arrays indexed by jump use position ``i`` for node ``n = i + 1``: ``jumps[i]``
is xi_{i+1} = d[i+1] - d[i], and an integrand ``H`` has ``H[i]`` held on
[T_i, T_{i+1}), so it multiplies the walk increment at T_{i+1}.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .functionals import FunctionalSpec
from .skeleton import SkeletonPath, StepFunction, counting


class ProjectionError(RuntimeError):
    """node_mean failed at a specific skeleton node."""

    def __init__(self, node_index: int, cause: Exception):
        super().__init__(f"node_mean failed at node {node_index}: {cause}")
        self.node_index = node_index


@dataclass(frozen=True, eq=False)
class ProjectedPath:
    """delta^k X along one skeleton path.

    ``node_values`` has N + 1 entries d[0..N]; ``jumps`` and ``derivatives``
    have N entries, one per retained stopping time.
    """

    path: SkeletonPath
    node_values: np.ndarray
    jumps: np.ndarray
    derivatives: np.ndarray

    def step_function(self) -> StepFunction:
        n = self.path.n_nodes
        return StepFunction(self.path.times[1:n + 1], self.jumps, float(self.node_values[0]))

    def to_csv(self) -> str:
        """n, time, sign, value, node_value, jump, derivative."""
        p = self.path
        buf = io.StringIO()
        buf.write("n,time,sign,value,node_value,jump,derivative\n")
        for n in range(p.n_nodes + 1):
            if n == 0:
                sign = jump = deriv = ""
            else:
                sign = str(int(p.signs[n - 1]))
                jump = repr(float(self.jumps[n - 1]))
                deriv = repr(float(self.derivatives[n - 1]))
            buf.write(f"{n},{float(p.times[n])!r},{sign},{float(p.values[n])!r},"
                      f"{float(self.node_values[n])!r},{jump},{deriv}\n")
        return buf.getvalue()


def project(path: SkeletonPath, spec: FunctionalSpec, path_index: int = 0) -> ProjectedPath:
    """Node values d[n] = E[X_T | G_n] = u(T_n, A_{T_n}) for n <= N."""
    if spec.horizon != path.horizon:
        raise ValueError(f"functional horizon {spec.horizon} differs from path horizon {path.horizon}")
    n = path.n_nodes
    t = path.times[: n + 1]
    x = path.values[: n + 1]
    try:
        d = np.asarray(spec.node_mean(t, x, level=path.level, path_index=path_index,
                                      node_index=np.arange(n + 1)), dtype=float)
    except Exception as exc:
        bad = _first_failing_node(spec, path, path_index)
        raise ProjectionError(bad, exc) from exc
    if not np.all(np.isfinite(d)):
        raise ProjectionError(int(np.nonzero(~np.isfinite(d))[0][0]),
                              ValueError("non-finite node mean"))
    jumps = np.diff(d)
    derivatives = jumps / path.increments
    return ProjectedPath(path, d, jumps, derivatives)


def _first_failing_node(spec, path, path_index) -> int:
    for i in range(path.n_nodes + 1):
        try:
            spec.node_mean(path.times[i], path.values[i], level=path.level,
                           path_index=path_index, node_index=i)
        except Exception:
            return i
    return -1


def _prefix(seq, path: SkeletonPath, t) -> np.ndarray:
    c = counting(path, t)
    arr = np.asarray(seq, dtype=float)
    if arr.shape[0] < c:
        raise IndexError(f"sequence of length {arr.shape[0]} does not cover the {c} "
                         f"nodes up to t={t}")
    return arr[:c]


def discrete_integral(H, path: SkeletonPath, t: float) -> float:
    """Predictable integral sum_{T_n <= t} H[n-1] (A_{T_n} - A_{T_{n-1}})."""
    h = _prefix(H, path, t)
    return float(np.dot(h, path.increments[: h.size]))


def covariation_with_walk(Y_jumps, path: SkeletonPath, t: float) -> float:
    """[Y, A^k]_t = sum_{T_n <= t} Delta Y_{T_n} Delta A_{T_n}."""
    y = _prefix(Y_jumps, path, t)
    return float(np.dot(y, path.increments[: y.size]))


def bracket_of_bracket(Y_jumps, path: SkeletonPath) -> float:
    """[[Y, A^k], [Y, A^k]]_T = sum_n (Delta Y_n Delta A_n)^2."""
    y = _prefix(Y_jumps, path, path.horizon)
    return float(np.sum((y * path.increments[: y.size]) ** 2))


def max_jump(proj: ProjectedPath) -> float:
    """sup_t |delta^k X_t - delta^k X_{t-}| over [0, T]."""
    if proj.jumps.size == 0:
        return 0.0
    return float(np.max(np.abs(proj.jumps)))


def reconstruct(proj: ProjectedPath) -> np.ndarray:
    """d[0] + sum_{m <= n} D[m] Delta A_m for every node n."""
    terms = proj.derivatives * proj.path.increments
    return proj.node_values[0] + np.concatenate(([0.0], np.cumsum(terms)))
