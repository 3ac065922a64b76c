"""Limiting laws of the magnetization and the threshold variable ``Z_lambda``.

Four regimes of the interaction range ``r ~ n**a``:

* ``long`` (``r >> n**0.75``): ``S_n / n**0.75`` has density
  ``sqrt(2)/Gamma(1/4) * exp(-x**4/4)``.
* ``threshold`` (``r ~ lam * n**0.75``): density ``f(x**2) / int f(t**2) dt``
  with ``f`` the density of ``Z_lambda``.
* ``finite`` (``r`` fixed): ``S_n / sqrt(n) -> N(0, sigma_r**2)``.
* ``intermediate`` (``sqrt(n) << r << n**0.75``):
  ``S_n / (r**(1/3) sqrt(n)) -> N(0, (2/3)**(1/3))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special, stats
from scipy.optimize import brentq

from .errors import ConvergenceError, DomainError, UnknownRegime
from .spectrum import ModelParams, compute_spectrum

__all__ = [
    "LimitLaw",
    "ZLambdaConfig",
    "QUARTIC_NORM",
    "INTERMEDIATE_VARIANCE",
    "INTERMEDIATE_RATE",
    "quartic_pdf",
    "quartic_cdf",
    "sample_quartic",
    "big_F",
    "sigma_r",
    "zlambda_sample",
    "zlambda_cf",
    "zlambda_pdf",
    "zlambda_cdf",
    "threshold_pdf",
    "threshold_cdf",
    "limit_for_regime",
    "fluctuation_exponent",
    "rectangle_sum",
    "rectangle_sum_bound",
    "shifted_square_sum",
]

QUARTIC_NORM = math.sqrt(2.0) / math.gamma(0.25)
INTERMEDIATE_RATE = 3.0 ** (1.0 / 3.0) / 2.0 ** (4.0 / 3.0)
INTERMEDIATE_VARIANCE = (2.0 / 3.0) ** (1.0 / 3.0)
REGIMES = ("long", "threshold", "finite", "intermediate")


# ---------------------------------------------------------------- quartic law

def quartic_pdf(x):
    """``sqrt(2)/Gamma(1/4) * exp(-x**4 / 4)``."""
    x = np.asarray(x, dtype=float)
    return QUARTIC_NORM * np.exp(-x ** 4 / 4.0)


def quartic_cdf(x):
    x = np.asarray(x, dtype=float)
    return 0.5 + 0.5 * np.sign(x) * special.gammainc(0.25, x ** 4 / 4.0)


def sample_quartic(rng: np.random.Generator, size: int) -> np.ndarray:
    """Exact draws from the quartic law by rejection from ``N(0, 1)``.

    ``exp(-x**4/4) <= exp(1/4) exp(-x**2/2)``, so a normal proposal is
    accepted with probability ``exp(-x**4/4 + x**2/2 - 1/4)`` (about 0.80).
    """
    out = np.empty(size)
    filled = 0
    while filled < size:
        m = int(1.3 * (size - filled)) + 16
        x = rng.standard_normal(m)
        keep = x[rng.random(m) < np.exp(-x ** 4 / 4 + x ** 2 / 2 - 0.25)]
        take = min(keep.size, size - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


# ------------------------------------------------------------ sigma_r machinery

def rectangle_sum(f_values) -> float:
    """``(1/n) sum_{j=1}^n f(j/n)`` for values sampled at ``j/n``."""
    return float(np.mean(np.asarray(f_values, dtype=float)))


def rectangle_sum_bound(f_values, lipschitz_K: float, n: int) -> float:
    """Guaranteed error ``K / (2n)`` of the right rectangle rule on [0, 1]."""
    if n < 1:
        raise DomainError("n must be >= 1")
    if lipschitz_K <= 0:
        raise DomainError("Lipschitz constant must be positive")
    return lipschitz_K / (2.0 * n)


def _grid_betas(N: int, r: int) -> np.ndarray:
    """``beta(k/N) = 1 - (1/r) sum_m cos(2 pi m k / N)`` for ``k = 0..N-1``."""
    if 2 * r < N:
        spec = compute_spectrum(ModelParams(N, r), method="fast")
        return np.concatenate(([0.0], spec.betas))
    t = np.arange(N) / N
    m = np.arange(1, r + 1)
    return 2.0 * np.sum(np.sin(np.pi * np.outer(t, m)) ** 2, axis=1) / r


def big_F(x: float, r: int, tol: float = 1e-13, max_points: int = 1 << 22) -> float:
    """``int_0^1 dt / (x + 1 - (1/r) sum_{m<=r} cos(2 pi m t))``.

    The integrand is smooth and 1-periodic, so the rectangle rule converges
    geometrically once the grid resolves the peak of width ``~sqrt(x)/r`` at
    ``t = 0``.  The grid is doubled until two successive sums agree to
    ``tol`` (relative).  If ``max_points`` is reached first the last sum is
    returned; sampling the peak at ``t = 0`` makes it an over-estimate, which
    keeps the sign of ``F - 1`` right when bracketing a root.
    """
    if x <= 0:
        raise DomainError("F is defined for x > 0")
    r = int(r)
    width = math.sqrt(x) / (2.6 * r)
    N = 1 << max(7, min(int(math.log2(max_points)) - 1,
                        math.ceil(math.log2(8.0 / width))))
    N = max(N, 1 << math.ceil(math.log2(2 * r + 2)))
    prev = float(np.mean(1.0 / (x + _grid_betas(N, r))))
    while N < max_points:
        N *= 2
        cur = float(np.mean(1.0 / (x + _grid_betas(N, r))))
        if abs(cur - prev) <= tol * abs(cur):
            return cur
        prev = cur
    return prev


@lru_cache(maxsize=256)
def sigma_r(r: int) -> float:
    """Solution ``sigma > 0`` of ``F(1/sigma**2, r) = 1``.

    ``F`` is strictly decreasing from ``+inf`` to ``0``, so the root in
    ``x = 1/sigma**2`` is unique inside ``[1e-8, 10 max(1, r)]``.  A bracket
    is grown geometrically from the large-``r`` estimate
    ``sigma**2 ~ (2/3)**(1/3) r**(2/3)`` and refined by Brent's method on
    ``log x``.
    """
    r = int(r)
    if r < 1:
        raise DomainError("r must be >= 1")
    lo_lim, hi_lim = math.log(1e-8), math.log(10.0 * max(1, r))

    def g(logx):
        return big_F(math.exp(logx), r) - 1.0

    guess = -math.log(INTERMEDIATE_VARIANCE * r ** (2.0 / 3.0) + 1.5)
    lo = hi = min(max(guess, lo_lim), hi_lim)
    step = math.log(1.5)
    if g(lo) > 0:
        while True:
            hi = min(hi + step, hi_lim)
            if g(hi) < 0:
                break
            if hi == hi_lim:
                raise ConvergenceError("F(x) - 1 does not change sign on the bracket")
            lo = hi
    else:
        while True:
            lo = max(lo - step, lo_lim)
            if g(lo) > 0:
                break
            if lo == lo_lim:
                raise ConvergenceError("F(x) - 1 does not change sign on the bracket")
            hi = lo
    logx = brentq(g, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=200)
    x = math.exp(logx)
    if abs(big_F(x, r) - 1.0) > 1e-10:
        raise ConvergenceError("sigma_r residual above 1e-10")
    return 1.0 / math.sqrt(x)


def shifted_square_sum(y: float) -> float:
    """``sum_{j>=1} 1 / (y + j**2)``: direct terms plus an Euler-Maclaurin tail.

    The sum is explicit below ``J = max(10 sqrt(y), 1000)``.  From ``J`` on
    the integral ``atan(sqrt(y)/J)/sqrt(y)`` is corrected by the first three
    Euler-Maclaurin terms; the first omitted one is of order ``J**-6``.
    """
    if y <= 0:
        raise DomainError("y must be positive")
    sy = math.sqrt(y)
    J = int(max(10.0 * sy, 1000.0))
    js = np.arange(1, J, dtype=float)
    head = math.fsum(1.0 / (y + js * js))
    d = y + J * J
    f0 = 1.0 / d
    f1 = -2.0 * J / d ** 2
    f3 = 24.0 * J * (y - J * J) / d ** 4
    tail = math.atan(sy / J) / sy + f0 / 2 - f1 / 12 + f3 / 720
    return head + tail


# --------------------------------------------------------------- Z_lambda law

@dataclass(frozen=True)
class ZLambdaConfig:
    """Truncation settings for sampling ``Z_lambda``.

    ``truncation_J`` pairs ``+-j`` are drawn exactly; the remaining ones are
    replaced by their mean when ``tail_compensation`` is on.
    """

    lam: float
    truncation_J: int = 10_000
    tail_compensation: bool = True

    def __post_init__(self):
        if self.lam <= 0:
            raise DomainError("lambda must be positive")
        if self.truncation_J < 1:
            raise DomainError("truncation_J must be >= 1")


def _tail_inverse_squares(J: int) -> float:
    # sum_{j>J} 1/j^2
    return float(special.zeta(2.0, J + 1))


def zlambda_sample(cfg: ZLambdaConfig, rng: np.random.Generator, size: int,
                   chunk: int = 1 << 22) -> np.ndarray:
    """Draws of ``sqrt(2) Y_0 - 3/(2 lam^2 pi^2) sum_{j != 0} Y_j^2 / j^2``.

    ``Y_j^2 + Y_{-j}^2`` is drawn as ``2 E_j`` with ``E_j`` standard
    exponential.
    """
    J = cfg.truncation_J
    coef = 3.0 / (2.0 * cfg.lam ** 2 * math.pi ** 2)
    w = 2.0 / np.arange(1, J + 1, dtype=float) ** 2
    out = np.empty(size)
    rows = max(1, chunk // J)
    for start in range(0, size, rows):
        m = min(rows, size - start)
        y0 = rng.standard_normal(m)
        e = rng.standard_exponential((m, J))
        out[start:start + m] = math.sqrt(2.0) * y0 - coef * (e @ w)
    if cfg.tail_compensation:
        out -= 2.0 * coef * _tail_inverse_squares(J)
    return out


def zlambda_cf(u, lam: float, constant: float = 3.0, n_explicit: int = 1000):
    """``exp(-u^2 - sum_{j>=1} log(1 + c i u / (pi^2 lam^2 j^2)))``.

    ``c = 3`` is the characteristic function of ``Z_lambda``.  The first
    ``n_explicit`` logarithms are summed directly; the rest are expanded as
    ``sum_k (-1)^(k+1) a^k / k * zeta(2k, n_explicit + 1)`` and truncated
    once a term falls below ``1e-17``.
    """
    from .charfn import principal_log

    if lam <= 0:
        raise DomainError("lambda must be positive")
    scalar = np.ndim(u) == 0
    u = np.atleast_1d(np.asarray(u, dtype=float))
    a = constant * 1j * u / (math.pi ** 2 * lam ** 2)
    J = int(n_explicit)
    # grow the explicit part until the tail series converges quickly
    while np.max(np.abs(a)) / (J + 1) ** 2 > 0.25:
        J *= 2
    j2 = np.arange(1, J + 1, dtype=float) ** 2
    head = np.zeros(u.shape, dtype=complex)
    for start in range(0, u.size, 512):
        aa = a[start:start + 512, None]
        head[start:start + 512] = principal_log(1.0 + aa / j2[None, :]).sum(axis=1)
    tail = np.zeros_like(head)
    k = 1
    while True:
        term = (-1) ** (k + 1) * a ** k / k * special.zeta(2.0 * k, J + 1)
        tail += term
        if np.max(np.abs(term)) < 1e-17 or k > 60:
            break
        k += 1
    out = np.exp(-u ** 2 - head - tail)
    return complex(out[0]) if scalar else out


def zlambda_pdf(x, lam: float, abs_tol: float = 1e-10, constant: float = 3.0):
    """Density of ``Z_lambda`` by Fourier inversion of :func:`zlambda_cf`.

    ``|CF(u)| <= exp(-u^2)``, so the ``u`` integral is cut where
    ``exp(-u^2) < abs_tol / 10``.  ``Z_lambda`` is ``sqrt(2) Y_0`` minus a
    nonnegative variable, so for ``x >= 0`` its density is at most the
    ``N(0, 2)`` density; points where that bound is below ``abs_tol`` are
    returned as 0 without quadrature.
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros(x.shape)
    live = (x < 0) | (stats.norm.pdf(x, scale=math.sqrt(2.0)) >= abs_tol)
    xl = x[live]
    u_max = math.sqrt(math.log(10.0 / abs_tol))

    def integrand(u):
        cf = zlambda_cf(u, lam, constant=constant)
        return np.real(np.exp(-1j * u * xl) * cf)

    if xl.size:
        val, err, info = integrate.quad_vec(integrand, 0.0, u_max, epsabs=abs_tol,
                                            epsrel=0.0, limit=2000, full_output=True)
        if not info.success:
            raise ConvergenceError("zlambda_pdf quadrature did not converge")
        out[live] = np.maximum(val / math.pi, 0.0)
    return float(out[0]) if scalar else out


class _Table:
    """Cached pdf/cdf of a limit law on a uniform grid."""

    def __init__(self, x, pdf):
        self.x = x
        self.pdf = pdf
        cdf = integrate.cumulative_simpson(pdf, x=x, initial=0.0)
        self.mass = cdf[-1]
        self.cdf = np.clip(cdf / cdf[-1], 0.0, 1.0)

    def eval_pdf(self, x):
        return np.interp(x, self.x, self.pdf, left=0.0, right=0.0)

    def eval_cdf(self, x):
        return np.interp(x, self.x, self.cdf, left=0.0, right=1.0)


@lru_cache(maxsize=32)
def _zlambda_table(lam: float) -> _Table:
    # left tail is a weighted chi-square, right tail Gaussian
    mean = -1.0 / (2.0 * lam ** 2)
    sd = math.sqrt(2.0 + 1.0 / (10.0 * lam ** 4))
    lo = mean - 12.0 * sd - 40.0 / lam ** 2
    hi = mean + 12.0 * sd
    x = np.linspace(lo, hi, 4001)
    return _Table(x, zlambda_pdf(x, lam))


def zlambda_cdf(x, lam: float):
    return _zlambda_table(float(lam)).eval_cdf(np.asarray(x, dtype=float))


@lru_cache(maxsize=32)
def _threshold_table(lam: float) -> _Table:
    t = np.linspace(-5.0, 5.0, 4001)
    f = zlambda_pdf(t ** 2, lam)
    return _Table(t, f)


def threshold_pdf(x, lam: float):
    """``f(x^2) / int f(t^2) dt`` with ``f`` the density of ``Z_lambda``."""
    table = _threshold_table(float(lam))
    x = np.asarray(x, dtype=float)
    return zlambda_pdf(x ** 2, lam) / table.mass


def threshold_cdf(x, lam: float):
    return _threshold_table(float(lam)).eval_cdf(np.asarray(x, dtype=float))


# ---------------------------------------------------------------- regime map

def fluctuation_exponent(a: float) -> float:
    """``b = min(1/2 + a/3, 3/4)``: ``S_n`` fluctuates on scale ``n**b``."""
    return min(0.5 + a / 3.0, 0.75)


@dataclass(frozen=True)
class LimitLaw:
    """Limit distribution of the rescaled magnetization in one regime.

    ``kind`` is one of ``quartic``, ``threshold``, ``gaussian``,
    ``intermediate_gaussian``.  ``a`` is the range exponent (``r ~ n**a``)
    when known and ``b`` the matching fluctuation exponent.
    """

    kind: str
    variance: float | None = None
    lam: float | None = None
    a: float | None = None
    b: float = field(default=0.5)

    def scale(self, n: int, r: int) -> float:
        """Normalisation of ``S_n`` for this regime."""
        if self.kind in ("quartic", "threshold"):
            return n ** 0.75
        if self.kind == "gaussian":
            return math.sqrt(n)
        return r ** (1.0 / 3.0) * math.sqrt(n)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "quartic":
            return quartic_pdf(x)
        if self.kind == "threshold":
            return threshold_pdf(x, self.lam)
        return stats.norm.pdf(x, scale=math.sqrt(self.variance))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "quartic":
            return quartic_cdf(x)
        if self.kind == "threshold":
            return threshold_cdf(x, self.lam)
        return stats.norm.cdf(x, scale=math.sqrt(self.variance))


def limit_for_regime(regime: str, lam: float | None = None, r: int | None = None,
                     a: float | None = None) -> LimitLaw:
    """Limit law and scaling for a regime tag.

    ``finite`` needs ``r``; ``threshold`` needs ``lam``.
    """
    if regime == "long":
        return LimitLaw("quartic", a=a, b=0.75)
    if regime == "threshold":
        if lam is None or lam <= 0:
            raise DomainError("threshold regime needs lambda > 0")
        return LimitLaw("threshold", lam=float(lam), a=0.75, b=0.75)
    if regime == "finite":
        if r is None:
            raise DomainError("finite regime needs r")
        return LimitLaw("gaussian", variance=sigma_r(int(r)) ** 2, a=0.0, b=0.5)
    if regime == "intermediate":
        b = fluctuation_exponent(a) if a is not None else float("nan")
        return LimitLaw("intermediate_gaussian", variance=INTERMEDIATE_VARIANCE, a=a, b=b)
    raise UnknownRegime(f"unknown regime {regime!r}; expected one of {REGIMES}")
