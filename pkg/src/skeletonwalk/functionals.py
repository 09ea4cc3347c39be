"""Catalog of square-integrable Brownian functionals.

A functional X_t = E[X_T | F_t] enters the scheme only through its node
conditional expectations.  For a Markovian functional these are
u(t, x) = E[X_T | B_t = x] evaluated at the skeleton nodes (T_n, A_{T_n});
the walk value equals B at every stopping time, so no further averaging is
needed.  ``true_derivative`` is the representation integrand d/dx u(t, x),
when it is known in closed form.

All closed forms are module-level functions bound with ``functools.partial``
so that specs pickle cleanly for worker pools.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import partial
from typing import Callable, Optional

import numpy as np
from scipy.special import erfc

from . import streams

Array = np.ndarray
NodeMap = Callable[[Array, Array], Array]

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class FunctionalConfigError(ValueError):
    """Invalid functional parameters."""


def norm_cdf(z):
    """Standard normal CDF through erfc (no cancellation in the left tail)."""
    return 0.5 * erfc(-np.asarray(z, dtype=float) / _SQRT2)


def norm_pdf(z):
    z = np.asarray(z, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _broadcast(t, x):
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    return np.broadcast_arrays(t, x)


def _as_output(out):
    return float(out) if np.ndim(out) == 0 else out


# -- closed forms ----------------------------------------------------------

def _identity_mean(t, x):
    t, x = _broadcast(t, x)
    return x.copy()


def _one(t, x):
    t, x = _broadcast(t, x)
    return np.ones_like(x)


def _square_mean(t, x):
    t, x = _broadcast(t, x)
    return x * x - t


def _square_derivative(t, x):
    t, x = _broadcast(t, x)
    return 2.0 * x


def _constant_mean(t, x, c):
    t, x = _broadcast(t, x)
    return np.full_like(x, c)


def _zero(t, x):
    t, x = _broadcast(t, x)
    return np.zeros_like(x)


def _remaining(t, T):
    tau = T - t
    if np.any(tau < 0):
        raise ValueError(f"node time beyond the horizon {T}")
    return tau


def _call_mean(t, x, K, T):
    t, x = _broadcast(t, x)
    tau = _remaining(t, T)
    m = x - K
    live = tau > 0
    s = np.sqrt(np.where(live, tau, 1.0))
    d = m / s
    price = m * norm_cdf(d) + s * norm_pdf(d)
    return np.where(live, price, np.maximum(m, 0.0))


def _call_delta(t, x, K, T):
    t, x = _broadcast(t, x)
    tau = _remaining(t, T)
    m = x - K
    live = tau > 0
    s = np.sqrt(np.where(live, tau, 1.0))
    expired = np.where(m > 0, 1.0, np.where(m < 0, 0.0, 0.5))
    return np.where(live, norm_cdf(m / s), expired)


def _call_payoff(x, K):
    return np.maximum(np.asarray(x, dtype=float) - K, 0.0)


def _digital_mean(t, x, K, T):
    t, x = _broadcast(t, x)
    tau = _remaining(t, T)
    m = x - K
    live = tau > 0
    s = np.sqrt(np.where(live, tau, 1.0))
    return np.where(live, norm_cdf(m / s), _digital_payoff(x, K))


def _digital_derivative(t, x, K, T):
    t, x = _broadcast(t, x)
    tau = _remaining(t, T)
    live = tau > 0
    s = np.sqrt(np.where(live, tau, 1.0))
    # the expiry-time slope is a point mass; report 0 off the strike
    return np.where(live, norm_pdf((x - K) / s) / s, 0.0)


def _digital_payoff(x, K):
    return np.where(np.asarray(x, dtype=float) > K, 1.0, 0.0)


def _identity_payoff(x):
    return np.asarray(x, dtype=float).copy()


def _square_payoff(x, T):
    x = np.asarray(x, dtype=float)
    return x * x - T


# -- the functional object ---------------------------------------------------

@dataclass(frozen=True)
class FunctionalSpec:
    """A Wiener functional exposed through its node conditional means.

    Attributes
    ----------
    name : str
    horizon : float
        Maturity T of the terminal variable X_T.
    closed_form : callable or None
        u(t, x); ``None`` for functionals estimated by nested Monte Carlo.
    true_derivative : callable or None
        d/dx u(t, x), the integrand of the martingale representation.
    payoff : callable or None
        Terminal map g with X_T = g(B_T).
    mc_inner_count : int or None
        Inner sample size of the nested estimator.
    covariation_target : float or None
        E[X, B]_T = E int_0^T DX_s ds when known analytically.
    params : dict
    """

    name: str
    horizon: float
    closed_form: Optional[NodeMap]
    true_derivative: Optional[NodeMap] = None
    payoff: Optional[Callable[[Array], Array]] = None
    mc_inner_count: Optional[int] = None
    covariation_target: Optional[float] = None
    params: dict = field(default_factory=dict)
    inner_seed: int = 0

    def __post_init__(self):
        if not self.horizon > 0:
            raise FunctionalConfigError(f"horizon must be positive, got {self.horizon}")
        if self.closed_form is None:
            if self.payoff is None:
                raise FunctionalConfigError("a nested functional needs a payoff")
            if not self.mc_inner_count or self.mc_inner_count < 1:
                raise FunctionalConfigError("mc_inner_count must be a positive integer")

    @property
    def is_markovian_closed_form(self) -> bool:
        return self.closed_form is not None

    def node_mean(self, t, x, *, level: int = 0, path_index: int = 0, node_index=None):
        """E[X_T | B_t = x], vectorised over matching ``t`` and ``x``.

        The nested estimator keys the inner normal draws of node n of path p
        at level k by the substream (inner_seed, k, p, INNER_MC, n); the
        default node indices are 0, 1, 2, ... in array order.
        """
        if self.closed_form is not None:
            return _as_output(self.closed_form(t, x))
        t_b, x_b = _broadcast(t, x)
        if np.any(t_b > self.horizon) or np.any(t_b < 0):
            raise ValueError(f"node time outside [0, {self.horizon}]")
        flat_t, flat_x = t_b.ravel(), x_b.ravel()
        if node_index is None:
            nodes = np.arange(flat_t.size)
        else:
            nodes = np.broadcast_to(np.asarray(node_index), t_b.shape).ravel()
        out = np.empty(flat_t.size)
        for i, (ti, xi, n) in enumerate(zip(flat_t, flat_x, nodes)):
            rng = streams.substream(self.inner_seed, level, path_index,
                                    streams.INNER_MC, int(n))
            z = rng.standard_normal(self.mc_inner_count)
            out[i] = float(np.mean(self.payoff(xi + math.sqrt(self.horizon - ti) * z)))
        return _as_output(out.reshape(t_b.shape))

    def derivative(self, t, x):
        if self.true_derivative is None:
            raise ValueError(f"functional {self.name!r} has no closed-form derivative")
        return _as_output(self.true_derivative(t, x))


def _check_horizon(T):
    if not T > 0:
        raise FunctionalConfigError(f"horizon must be positive, got {T}")


def brownian_identity(T: float) -> FunctionalSpec:
    """X = B: u(t, x) = x, DX = 1."""
    _check_horizon(T)
    return FunctionalSpec("identity", T, _identity_mean, _one, _identity_payoff,
                          covariation_target=T)


def compensated_square(T: float) -> FunctionalSpec:
    """X_t = B_t^2 - t: u(t, x) = x^2 - t, DX = 2x."""
    _check_horizon(T)
    return FunctionalSpec("compensated_square", T, _square_mean, _square_derivative,
                          partial(_square_payoff, T=T), covariation_target=0.0)


def bachelier_call(K: float, T: float) -> FunctionalSpec:
    """Call on arithmetic Brownian motion with unit volatility.

    u(t, x) = (x - K) Phi(d) + sqrt(T - t) phi(d), d = (x - K)/sqrt(T - t),
    and DX = Phi(d).  Since E Phi((B_s - K)/sqrt(T - s)) = Phi(-K/sqrt(T)) for
    every s, E[X, B]_T = T Phi(-K/sqrt(T)).
    """
    _check_horizon(T)
    return FunctionalSpec("bachelier_call", T, partial(_call_mean, K=K, T=T),
                          partial(_call_delta, K=K, T=T), partial(_call_payoff, K=K),
                          covariation_target=T * float(norm_cdf(-K / math.sqrt(T))),
                          params={"K": K})


def digital(K: float, T: float) -> FunctionalSpec:
    """Cash-or-nothing digital 1{B_T > K}: u = Phi((x - K)/sqrt(T - t)).

    E[X, B]_T = E int phi(d)/sqrt(T - s) ds = sqrt(T) phi(K/sqrt(T)), the
    density of B_T at K integrated over [0, T].
    """
    _check_horizon(T)
    return FunctionalSpec("digital", T, partial(_digital_mean, K=K, T=T),
                          partial(_digital_derivative, K=K, T=T), partial(_digital_payoff, K=K),
                          covariation_target=math.sqrt(T) * float(norm_pdf(K / math.sqrt(T))),
                          params={"K": K})


def constant(c: float, T: float) -> FunctionalSpec:
    """X identically c; every jump and every covariation vanishes."""
    _check_horizon(T)
    return FunctionalSpec("constant", T, partial(_constant_mean, c=c), _zero,
                          covariation_target=0.0, params={"c": c})


def generic_terminal(g: Callable[[Array], Array], T: float, mc_inner_count: int,
                     inner_seed: int = 0, name: str = "generic_terminal") -> FunctionalSpec:
    """X_T = g(B_T) with node means averaged over ``mc_inner_count`` normals.

    ``g`` must act elementwise on arrays.  No derivative is available.
    """
    _check_horizon(T)
    if not isinstance(mc_inner_count, (int, np.integer)) or mc_inner_count < 1:
        raise FunctionalConfigError("mc_inner_count must be a positive integer")
    return FunctionalSpec(name, T, None, payoff=g, mc_inner_count=int(mc_inner_count),
                          inner_seed=inner_seed)


def nested_call(K: float, T: float, mc_inner_count: int, inner_seed: int = 0) -> FunctionalSpec:
    """The Bachelier call payoff with node means from nested Monte Carlo.

    Same target as :func:`bachelier_call`; useful for checking the nested
    estimator against the closed form.
    """
    spec = generic_terminal(partial(_call_payoff, K=K), T, mc_inner_count, inner_seed,
                            name="nested_call")
    return replace(spec, covariation_target=T * float(norm_cdf(-K / math.sqrt(T))),
                   params={"K": K})


CATALOG = {
    "identity": lambda T, **kw: brownian_identity(T),
    "compensated_square": lambda T, **kw: compensated_square(T),
    "bachelier_call": lambda T, K=0.0, **kw: bachelier_call(K, T),
    "digital": lambda T, K=0.0, **kw: digital(K, T),
    "constant": lambda T, c=0.0, **kw: constant(c, T),
    "nested_call": lambda T, K=0.0, mc_inner_count=1000, **kw: nested_call(K, T, mc_inner_count),
}


def make_functional(name: str, T: float, **params) -> FunctionalSpec:
    """Look up a catalog functional by name."""
    try:
        factory = CATALOG[name]
    except KeyError:
        raise FunctionalConfigError(
            f"unknown functional {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(T, **params)
