"""First exit time of Brownian motion from a symmetric interval.

The unit law (exit from [-1, 1] started at 0) has two classical series for its
survival function S(t) = P(tau > t):

* spectral (large t)::

      S(t) = 4/pi * sum_j (-1)^j / (2j+1) * exp(-(2j+1)^2 pi^2 t / 8)

* method of images (small t)::

      1 - S(t) = 2 * sum_n (-1)^n * erfc((2n+1) / sqrt(2t))

Both are alternating with decreasing terms, so the first omitted term bounds
the truncation error.  Exit from [-h, h] is h^2 times the unit law; the
skeleton at level k uses h = 2^-k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erfc, erfcinv

from .streams import open_uniforms

_ROOT_RTOL = 1e-10
_MAX_ITER = 200
_NEWTON_ACCEPT = 1e-6
# S(_T_MAX) ~ 4/pi exp(-pi^2 _T_MAX / 8) is far below the smallest uniform
# produced by open_uniforms (2^-53).
_T_MAX = 60.0


class RootSearchError(RuntimeError):
    """Inverse-transform root search did not converge."""


def _terms_needed(bound, tol: float, cap: int = 64) -> int:
    n = 1
    while bound(n) > tol:
        n += 1
        if n > cap:
            raise ValueError(f"series does not reach tolerance {tol} within {cap} terms")
    return n


@dataclass(frozen=True)
class UnitExitLaw:
    """Law of the exit time of standard Brownian motion from [-1, 1].

    Parameters
    ----------
    series_truncation_tolerance : float
        Absolute error bound on survival / CDF evaluations.
    crossover_time : float
        Times below use the image series, times at or above the spectral one.
    """

    series_truncation_tolerance: float = 1e-14
    crossover_time: float = 0.5
    _n_large: int = field(init=False, repr=False)
    _n_small: int = field(init=False, repr=False)

    def __post_init__(self):
        tol = self.series_truncation_tolerance
        c = self.crossover_time
        if not tol > 0:
            raise ValueError("series_truncation_tolerance must be positive")
        if not c > 0:
            raise ValueError("crossover_time must be positive")
        # first omitted term at the worst-case end of each regime; one extra
        # term covers the density series, whose terms carry a (2j+1) factor
        n_large = _terms_needed(
            lambda j: 4 / math.pi / (2 * j + 1)
            * math.exp(-(2 * j + 1) ** 2 * math.pi ** 2 * c / 8) * (2 * j + 1) ** 2,
            tol)
        n_small = _terms_needed(
            lambda n: 2 * math.erfc((2 * n + 1) / math.sqrt(2 * c)) * (2 * n + 1) ** 2,
            tol)
        object.__setattr__(self, "_n_large", n_large + 1)
        object.__setattr__(self, "_n_small", n_small + 1)

    # -- series pieces, all vectorised over t -----------------------------
    # exp(-(2j+1)^2 a) = e * q^(j(j+1)/2) with e = exp(-a), q = e^8, so one
    # exponential per point serves every term.

    def _large(self, t):
        """Spectral survival and density at t >= crossover."""
        e = np.exp(-(math.pi ** 2 / 8) * t)
        q = e ** 8
        s_sum = np.ones_like(e)
        f_sum = np.ones_like(e)
        qj = np.ones_like(e)
        qpow = np.ones_like(e)
        for j in range(1, self._n_large):
            qj = qj * q
            qpow = qpow * qj
            sign = -1.0 if j % 2 else 1.0
            s_sum += (sign / (2 * j + 1)) * qpow
            f_sum += (sign * (2 * j + 1)) * qpow
        return (4 / math.pi) * e * s_sum, (math.pi / 2) * e * f_sum

    def _small(self, t):
        """Image-series CDF and density at 0 <= t < crossover."""
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            r = 1.0 / np.sqrt(2 * t)
            cdf = erfc(r)
            for n in range(1, self._n_small):
                sign = -1.0 if n % 2 else 1.0
                cdf += sign * erfc((2 * n + 1) * r)
            e = np.exp(-r * r)
            q = e ** 8
            f_sum = np.ones_like(e)
            qn = np.ones_like(e)
            qpow = np.ones_like(e)
            for n in range(1, self._n_small):
                qn = qn * q
                qpow = qpow * qn
                sign = -1.0 if n % 2 else 1.0
                f_sum += (sign * (2 * n + 1)) * qpow
            dens = 2 * r ** 3 * (2 / math.sqrt(math.pi)) * e * f_sum
        dens = np.where(t > 0, dens, 0.0)
        return 2 * cdf, dens

    # -- public distribution functions ------------------------------------

    def survival(self, t):
        """P(tau > t); accepts scalars or arrays."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
            raise ValueError("exit-time survival is defined for t >= 0 only")
        small = t_arr < self.crossover_time
        out = np.empty_like(t_arr)
        if np.any(small):
            out[small] = 1.0 - self._small(t_arr[small])[0]
        if np.any(~small):
            out[~small] = self._large(t_arr[~small])[0]
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def cdf(self, t):
        """P(tau <= t), computed directly (no cancellation) for small t."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
            raise ValueError("exit-time cdf is defined for t >= 0 only")
        small = t_arr < self.crossover_time
        out = np.empty_like(t_arr)
        if np.any(small):
            out[small] = self._small(t_arr[small])[0]
        if np.any(~small):
            out[~small] = 1.0 - self._large(t_arr[~small])[0]
        out = np.clip(out, 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def density(self, t):
        """Probability density of tau."""
        t_arr = np.asarray(t, dtype=float)
        if np.any(t_arr < 0):
            raise ValueError("exit-time density is defined for t >= 0 only")
        small = t_arr < self.crossover_time
        out = np.empty_like(t_arr)
        if np.any(small):
            out[small] = self._small(t_arr[small])[1]
        if np.any(~small):
            out[~small] = self._large(t_arr[~small])[1]
        return float(out) if out.ndim == 0 else out

    def quantile_survival(self, u):
        """Solve S(t) = u elementwise for u in (0, 1).

        Analytic one-term inversions give the starting point and a bracket
        per regime; a safeguarded Newton iteration (bisection whenever the
        Newton step leaves the bracket) then runs on log S for u below
        S(crossover) and on log(1 - S) above it.  An element is frozen as soon
        as its step falls below the tolerance, so each result depends on its
        own u only.
        """
        u = np.asarray(u, dtype=float)
        scalar = u.ndim == 0
        u = np.atleast_1d(u)
        if np.any(~((u > 0) & (u < 1))):
            raise ValueError("uniforms must lie strictly inside (0, 1)")
        c = self.crossover_time
        s_c = self.survival(c)
        large = u <= s_c
        t = np.empty_like(u)
        if np.any(large):
            t[large] = self._solve(u[large], large_regime=True)
        if np.any(~large):
            t[~large] = self._solve(u[~large], large_regime=False)
        return float(t[0]) if scalar else t

    def _solve(self, u, large_regime: bool):
        c = self.crossover_time
        if large_regime:
            target = np.log(u)
            t = (8 / math.pi ** 2) * np.log(4 / (math.pi * u))
            # second term of the spectral series
            t += (8 / math.pi ** 2) * np.log1p(-np.exp(-math.pi ** 2 * t) / 3)
            lo = np.full_like(u, c)
            hi = np.full_like(u, _T_MAX)
        else:
            # 1 - u is exact for u in [1/2, 1) by Sterbenz's lemma
            target = np.log1p(-u)
            t = 1.0 / (2 * erfcinv((1 - u) / 2) ** 2)
            lo = np.zeros_like(u)
            hi = np.full_like(u, c)
        t = np.clip(t, lo + (hi - lo) * 1e-6, hi)
        active = np.arange(u.size)
        for _ in range(_MAX_ITER):
            if active.size == 0:
                return t
            ti, tg = t[active], target[active]
            if large_regime:
                s, f = self._large(ti)
                g = np.log(s) - tg
                dg = -f / s
                # log S decreases in t: g > 0 puts the root above ti
                above = g > 0
            else:
                cdf, f = self._small(ti)
                with np.errstate(divide="ignore"):
                    g = np.log(cdf) - tg
                dg = f / cdf
                above = g < 0
            lo_i = np.where(above, ti, lo[active])
            hi_i = np.where(above, hi[active], ti)
            with np.errstate(divide="ignore", invalid="ignore"):
                newton = ti - g / dg
            inside = np.isfinite(newton) & (newton > lo_i) & (newton < hi_i)
            t_new = np.where(inside, newton, 0.5 * (lo_i + hi_i))
            # Newton error after a step of relative size r is O(r^2)
            step = np.abs(t_new - ti)
            done = inside & (step <= _NEWTON_ACCEPT * t_new)
            done |= (hi_i - lo_i) <= _ROOT_RTOL * t_new
            t[active] = t_new
            lo[active] = lo_i
            hi[active] = hi_i
            active = active[~done]
        raise RootSearchError(
            f"{active.size} exit-time inversions did not converge "
            f"within {_MAX_ITER} iterations")


DEFAULT_LAW = UnitExitLaw()


def unit_exit_survival(t, law: UnitExitLaw = DEFAULT_LAW):
    """P(tau > t) for the exit time of standard BM from [-1, 1]."""
    return law.survival(t)


def unit_exit_from_uniforms(u, law: UnitExitLaw = DEFAULT_LAW):
    """Map uniforms on (0, 1) to unit exit times by inverse transform."""
    return law.quantile_survival(u)


def sample_unit_exit(uniform_source: np.random.Generator, size: int | None = None,
                     law: UnitExitLaw = DEFAULT_LAW):
    """Draw unit exit times, consuming exactly one uniform per draw."""
    n = 1 if size is None else size
    tau = law.quantile_survival(open_uniforms(uniform_source, n))
    return float(tau[0]) if size is None else tau


def exit_scale(k: int) -> float:
    """Time scale 2^-2k of the exit from [-2^-k, 2^-k]."""
    if k < 0:
        raise ValueError(f"level must be >= 0, got {k}")
    return math.ldexp(1.0, -2 * k)


def sample_exit(k: int, uniform_source: np.random.Generator, size: int | None = None,
                law: UnitExitLaw = DEFAULT_LAW):
    """Exit times from [-2^-k, 2^-k]: Brownian scaling of the unit law."""
    scale = exit_scale(k)
    tau = sample_unit_exit(uniform_source, size, law)
    return scale * tau


def unit_exit_moment(m: int, law: UnitExitLaw = DEFAULT_LAW) -> float:
    """E[tau^m] = int_0^inf m t^(m-1) S(t) dt by adaptive quadrature."""
    from scipy.integrate import quad

    if m < 1:
        raise ValueError("moment order must be >= 1")
    c = law.crossover_time
    f = lambda t: m * t ** (m - 1) * law.survival(t)  # noqa: E731
    return quad(f, 0.0, c, epsabs=1e-13, epsrel=1e-12)[0] + \
        quad(f, c, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
