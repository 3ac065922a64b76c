"""Density and tail probability of ``n - A_n`` by Fourier inversion.

Shifting the inversion contour to ``Im u = -c`` with ``c = u_star / w_n``
turns the characteristic function into that of a tilted variable with
precisions ``beta_j + 2c``:

    f(y) = exp(phi(-ic) - c y) / (2 pi) * int exp(-i v y + phi_c(v)) dv,

where ``phi_c`` is built from the shifted precisions.  Every ``c >= 0`` is
admissible.  The shift damps the integrand on the event ``{A_n < n}``, which
is where the magnetization law lives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .charfn import _phi_from_betas, compensated_sum, phi_at_shift
from .errors import ConvergenceError, DomainError, UnknownRegime
from .limit_laws import INTERMEDIATE_RATE, sigma_r
from .spectrum import ModelParams, Spectrum

__all__ = [
    "TiltPlan",
    "QuadratureControl",
    "aux_density",
    "tail_probability",
    "tail_parts",
    "conditional_density_shifted",
    "conditional_density",
    "shifted_integrand",
    "domination_bound",
    "default_tilt",
    "truncation_point",
]

# Points per Gauss-Kronrod panel in quad_vec.
_GK_POINTS = 21
# Share of significantly negative density values tolerated before failing.
_MAX_CLAMPED = 1e-3
# A tilted tail integral smaller than this many ulps of its absolute mass is noise.
_CANCEL_FACTOR = 1e4


@dataclass(frozen=True)
class TiltPlan:
    """Contour shift ``u_star`` and scale ``w_n``; the shift is ``u_star / w_n``."""

    u_star: float
    w_n: float = 1.0

    def __post_init__(self):
        if not self.u_star >= 0:
            raise DomainError("u_star must be non-negative")
        if not self.w_n >= 1:
            raise DomainError("w_n must be >= 1")

    @property
    def shift(self) -> float:
        return self.u_star / self.w_n


@dataclass(frozen=True)
class QuadratureControl:
    """Settings for the ``v``-integral.

    ``u_max=None`` derives the truncation point from the spectrum so that
    the neglected tail is below ``abs_tol / 10``.  An explicit ``u_max``
    smaller than that is raised to it.
    """

    u_max: float | None = None
    abs_tol: float = 1e-10
    max_points: int = 2_000_000

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise DomainError("abs_tol must be positive")
        if self.u_max is not None and not self.u_max > 0:
            raise DomainError("u_max must be positive")
        if self.max_points < _GK_POINTS:
            raise DomainError(f"max_points must be >= {_GK_POINTS}")


def default_tilt(p: ModelParams, regime: str) -> TiltPlan:
    """Regime-appropriate contour shift.

    ``finite``: ``(1/(2 sigma_r^2), 1)``; ``intermediate``:
    ``(3^(1/3)/2^(4/3), r^(2/3))``; ``threshold`` and ``long``: no shift.
    """
    if regime == "finite":
        return TiltPlan(1.0 / (2.0 * sigma_r(p.r) ** 2), 1.0)
    if regime == "intermediate":
        return TiltPlan(INTERMEDIATE_RATE, p.r ** (2.0 / 3.0))
    if regime in ("threshold", "long"):
        return TiltPlan(0.0, 1.0)
    raise UnknownRegime(f"unknown regime {regime!r}")


def domination_bound(v, u_star: float):
    """``[1 + v^2 / (1 + u_star)^2]^(-3/4)``.

    Majorizes ``|exp(phi(v - ic) - phi(-ic))|`` for ``n >= 4``, every
    ``0 <= c <= u_star`` and real ``v``.
    """
    v = np.asarray(v, dtype=float)
    return (1.0 + v ** 2 / (1.0 + u_star) ** 2) ** -0.75


def _log_tail_bound(b_sorted, log_u, extra):
    # log of int_U^inf prod_{b_j <= 2U} sqrt(b_j / 2v) * v^-extra dv
    U = math.exp(log_u)
    k = int(np.searchsorted(b_sorted, 2.0 * U, side="right"))
    m = 0.5 * k + extra
    if m <= 1.0:
        return math.inf
    return (0.5 * float(np.sum(np.log(b_sorted[:k] / (2.0 * U))))
            + log_u - math.log(m - 1.0))


def truncation_point(precisions, tol: float, extra: float = 0.0) -> float:
    """Smallest ``U`` (to 1%) with a proven tail bound below ``tol``.

    Uses ``|1 + 2iv/b|^(-1/2) <= sqrt(b / (2v))``, so for ``v >= U`` the
    modulus of the characteristic function is below
    ``prod_{b_j <= 2U} sqrt(b_j / (2v))``.  ``extra`` adds a factor
    ``v^-extra`` (``1`` for the ``1/(c + iv)`` kernel of the tail
    probability).
    """
    b = np.sort(np.asarray(precisions, dtype=float))
    target = math.log(tol)
    lo = math.log(b[0] / 2.0) - 5.0
    hi = lo
    while _log_tail_bound(b, hi, extra) > target:
        hi += 2.0
        if hi > 200.0:
            raise ConvergenceError("no finite truncation point found")
    while hi - lo > 0.01:
        mid = 0.5 * (lo + hi)
        if _log_tail_bound(b, mid, extra) > target:
            lo = mid
        else:
            hi = mid
    return math.exp(hi)


def _breakpoints(precisions, u_max: float):
    # geometric panels starting at the spread of the tilted variable
    sd = math.sqrt(2.0 * float(compensated_sum(1.0 / np.asarray(precisions) ** 2)))
    first = min(1.0 / sd, u_max / 4.0)
    pts = [first]
    while pts[-1] * 2.0 < u_max:
        pts.append(pts[-1] * 2.0)
    return pts


def _quad(fun, u_max, points, q: QuadratureControl, what: str):
    limit = max(1, q.max_points // _GK_POINTS)
    val, err, info = integrate.quad_vec(fun, 0.0, u_max, epsabs=q.abs_tol / 10.0,
                                        epsrel=0.0, limit=limit, points=points,
                                        full_output=True)
    # status 2: the error estimate is down to floating round-off
    rounding_ok = info.status == 2 and err <= max(1e3 * q.abs_tol / 10.0, 1e-13)
    if info.status != 0 and not rounding_ok:
        raise ConvergenceError(f"{what}: adaptive quadrature did not reach abs_tol "
                               f"(status {info.status}, error estimate {err:.3g})")
    return val


def _resolve_u_max(precisions, q: QuadratureControl, scale: float, extra: float) -> float:
    need = truncation_point(precisions, q.abs_tol / 10.0 * scale, extra=extra)
    return need if q.u_max is None else max(q.u_max, need)


def _clamp(values, abs_tol, what):
    values = np.asarray(values, dtype=float)
    bad = values < -abs_tol
    if values.size and bad.mean() > _MAX_CLAMPED:
        raise ConvergenceError(f"{what}: {int(bad.sum())} of {values.size} values "
                               f"fell below -abs_tol")
    return np.maximum(values, 0.0), int(bad.sum())


def aux_density(spec: Spectrum, x, q: QuadratureControl = QuadratureControl(),
                return_info: bool = False):
    """Density of ``n - A_n`` at ``x`` by direct Fourier inversion.

    ``f(x) = (1/pi) int_0^U Re exp(-i v x + phi(v)) dv``.  Negative values
    below ``-abs_tol`` are counted as clamped; more than 0.1% of them raises
    :class:`ConvergenceError`.  Smaller negatives are quadrature noise and
    are set to zero.
    """
    if spec.n < 4:
        raise DomainError("the characteristic function is integrable only for n >= 4")
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    betas, n = spec.betas, spec.n
    u_max = _resolve_u_max(betas, q, math.pi, 0.0)

    def fun(v):
        phi = _phi_from_betas(betas, n, np.array([v]))[0]
        return np.real(np.exp(phi - 1j * v * x))

    val = _quad(fun, u_max, _breakpoints(betas, u_max), q, "aux_density") / math.pi
    out, clamped = _clamp(val, q.abs_tol, "aux_density")
    res = float(out[0]) if scalar else out
    return (res, clamped) if return_info else res


def _tail_integral(b, n, c, tol, q: QuadratureControl):
    """Tail integral and, for ``c > 0``, ``int |integrand|`` (its round-off scale)."""
    q_eff = QuadratureControl(q.u_max, tol, q.max_points)
    u_max = _resolve_u_max(b, q_eff, math.pi, 1.0)
    if c == 0.0:
        def fun(v):
            # |integrand| ~ 1/v is not integrable here; no floor is needed for c = 0
            z = np.exp(_phi_from_betas(b, n, np.array([v]))[0]) / v
            return np.array([z.imag, 0.0])
        head = 0.5
    else:
        def fun(v):
            z = np.exp(_phi_from_betas(b, n, np.array([v]))[0]) / (c + 1j * v)
            return np.array([z.real, abs(z)])
        head = 0.0
    val = _quad(fun, u_max, _breakpoints(b, u_max), q_eff, "tail_probability")
    return head + float(val[0]) / math.pi, float(val[1]) / math.pi


def _scaled_tail(spec: Spectrum, c: float, q: QuadratureControl) -> float:
    """``P(A_n < n) * exp(-phi(-ic))``.

    ``(1/2pi) int exp(phi_c(v)) / (c + iv) dv``: the ``x``-integral of the
    shifted representation is done in closed form.  It may run to infinity
    because ``n - A_n <= n``.  For ``c = 0`` the Gil-Pelaez form
    ``1/2 + (1/pi) int_0^inf Im exp(phi(v)) / v dv`` is used with an
    absolute tolerance.  With a shift, a rough pass sets the scale and
    ``abs_tol`` is applied relative to it, so the error on ``P`` stays
    below ``abs_tol`` whatever the prefactor.  A shift far beyond the
    saddle point makes the integral cancel down to round-off; that is
    reported as :class:`ConvergenceError` instead of returning noise.
    """
    b = spec.betas + 2.0 * c
    if c == 0.0:
        # prefactor is 1: an absolute tolerance is the right one
        return _tail_integral(b, spec.n, c, q.abs_tol, q)[0]
    tol = 1e-6
    while True:
        rough, mass = _tail_integral(b, spec.n, c, tol, q)
        if abs(rough) >= 100.0 * tol:
            break
        floor = _CANCEL_FACTOR * np.finfo(float).eps * mass
        if tol <= floor:
            raise ConvergenceError(f"shift {c:.4g} is too large: the tail integral cancels "
                                   f"to round-off; use a shift nearer the saddle point")
        tol = max(tol * 1e-4, floor)
    scale = min(abs(rough), 1.0)
    return _tail_integral(b, spec.n, c, q.abs_tol * scale, q)[0]


def tail_parts(spec: Spectrum, plan: TiltPlan = TiltPlan(0.0),
               q: QuadratureControl = QuadratureControl()):
    """``(phi(-ic), P(A_n < n) exp(-phi(-ic)))``, i.e. the tail on a log-safe scale."""
    c = plan.shift
    log_pref = phi_at_shift(spec, c) if c > 0 else 0.0
    return log_pref, _scaled_tail(spec, c, q)


def tail_probability(spec: Spectrum, plan: TiltPlan = TiltPlan(0.0),
                     q: QuadratureControl = QuadratureControl()) -> float:
    """``P(A_n < n)`` through the shifted contour of ``plan``.

    The result does not depend on the shift (Cauchy), which makes the shift
    a free accuracy knob: a shift that recentres ``A_n`` near ``n`` keeps
    the integrand free of cancellation.  The value is clamped to
    ``[0, 1]``; a clamp by more than ``abs_tol`` raises
    :class:`ConvergenceError`.
    """
    if spec.n < 4:
        raise DomainError("the characteristic function is integrable only for n >= 4")
    c = plan.shift
    log_pref = phi_at_shift(spec, c) if c > 0 else 0.0
    scaled = _scaled_tail(spec, c, q)
    if scaled <= 0.0:
        if scaled * math.exp(min(log_pref, 700.0)) < -q.abs_tol:
            raise ConvergenceError("tail probability came out negative")
        return 0.0
    p = math.exp(min(log_pref + math.log(scaled), 700.0))
    if p > 1.0:
        if p > 1.0 + q.abs_tol:
            raise ConvergenceError("tail probability came out above one")
        p = 1.0
    return p


def shifted_integrand(spec: Spectrum, plan: TiltPlan, x: float, v):
    """``exp(-w i v x - u_star x + phi(v - ic) - phi(-ic))`` for real ``v``.

    At ``v = 0`` this equals ``exp(-u_star x)``.
    """
    c = plan.shift
    v = np.atleast_1d(np.asarray(v, dtype=float))
    phi = _phi_from_betas(spec.betas + 2.0 * c, spec.n, v)
    return np.exp(phi - 1j * v * plan.w_n * x - plan.u_star * x)


def conditional_density_shifted(spec: Spectrum, plan: TiltPlan, x,
                                q: QuadratureControl = QuadratureControl()):
    """Density of ``(n - A_n) / w_n`` on ``{A_n < n}`` up to ``exp(phi(-ic))``.

    Returns ``(w_n / pi) int_0^U Re[shifted_integrand(v)] dv`` for each ``x``
    in ``(0, n / w_n)``.  Multiplying by ``exp(phi(-i u_star / w_n))`` gives
    the sub-probability density; dividing instead by the matching scaled
    tail probability gives the conditional density (see
    :func:`conditional_density`).
    """
    scalar = np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    w = plan.w_n
    if np.any(x <= 0) or np.any(x >= spec.n / w):
        raise DomainError("x must lie in (0, n / w_n)")
    c = plan.shift
    b = spec.betas + 2.0 * c
    n = spec.n
    u_max = _resolve_u_max(b, q, math.pi / w, 0.0)
    damp = np.exp(-plan.u_star * x)

    def fun(v):
        phi = _phi_from_betas(b, n, np.array([v]))[0]
        return np.real(np.exp(phi - 1j * v * w * x)) * damp

    val = _quad(fun, u_max, _breakpoints(b, u_max), q, "conditional_density") * w / math.pi
    out, _ = _clamp(val, q.abs_tol, "conditional_density")
    return float(out[0]) if scalar else out


def conditional_density(spec: Spectrum, plan: TiltPlan, x,
                        q: QuadratureControl = QuadratureControl()):
    """Normalized density of ``(n - A_n) / w_n`` given ``A_n < n``."""
    c = plan.shift
    scaled = _scaled_tail(spec, c, q)
    if scaled <= 0:
        raise ConvergenceError("tail probability is not positive")
    return conditional_density_shifted(spec, plan, x, q) / scaled

