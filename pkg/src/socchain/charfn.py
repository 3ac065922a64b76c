"""Log-characteristic function of ``n - A_n``.

``A_n = sum_j Z_j^2`` with independent ``Z_j ~ N(0, 1/beta_j)``, so

    E[exp(iu (n - A_n))] = exp(phi(u)),
    phi(u) = i u n - 1/2 sum_j log(1 + 2 i u / beta_j),

analytic on the half plane ``2 Im(u) < min_j beta_j``.
"""

from __future__ import annotations

import numpy as np

from .errors import BranchError, DomainError, OrderError
from .spectrum import Spectrum

__all__ = [
    "principal_log",
    "phi_n",
    "phi_shifted",
    "phi_deriv",
    "cf_aux",
    "compensated_sum",
]

_BLOCK = 256
_MAX_ELEMS = 1 << 21


def principal_log(z):
    """Principal logarithm via ``log|z| + 2i arctan(y / (x + |z|))``.

    Raises :class:`BranchError` for ``z`` on ``(-inf, 0]``.
    """
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    if np.any((y == 0) & (x <= 0)):
        raise BranchError("logarithm undefined on the closed negative real axis")
    mod = np.hypot(x, y)
    out = np.log(mod) + 2j * np.arctan(y / (x + mod))
    return out[()] if out.ndim == 0 else out


def _log1p_principal(w):
    # principal_log(1 + w) without losing digits when |w| is small
    x = 1.0 + w.real
    y = w.imag
    mod = np.hypot(x, y)
    re = 0.5 * np.log1p(w.real * (2.0 + w.real) + y * y)
    return re + 2j * np.arctan(y / (x + mod))


def compensated_sum(terms, axis=-1):
    """Sum along ``axis`` with Neumaier compensation across blocks.

    Blocks of ``_BLOCK`` terms are summed pairwise by numpy; the block sums
    are then accumulated with a running compensation term.
    """
    terms = np.moveaxis(np.asarray(terms), axis, -1)
    if np.iscomplexobj(terms):
        return compensated_sum(terms.real) + 1j * compensated_sum(terms.imag)
    size = terms.shape[-1]
    if size <= _BLOCK:
        return terms.sum(axis=-1)
    total = np.zeros(terms.shape[:-1])
    comp = np.zeros_like(total)
    for start in range(0, size, _BLOCK):
        part = terms[..., start:start + _BLOCK].sum(axis=-1)
        t = total + part
        comp += np.where(np.abs(total) >= np.abs(part), (total - t) + part, (part - t) + total)
        total = t
    return total + comp


def _check_domain(spec: Spectrum, u, shift=0.0):
    if np.any(2.0 * np.imag(u) >= spec.beta_min + 2.0 * shift):
        raise DomainError("u lies outside U_n: need 2 Im(u) < min beta_j")


def _sum_over_spectrum(betas, u, fn):
    """``sum_j fn(u_k, beta_j)`` for every ``u_k``, chunked over ``u``."""
    u = np.atleast_1d(np.asarray(u, dtype=complex))
    out = np.empty(u.shape, dtype=complex)
    flat_u, flat_out = u.ravel(), out.reshape(-1)
    step = max(1, _MAX_ELEMS // betas.size)
    for start in range(0, flat_u.size, step):
        uu = flat_u[start:start + step, None]
        flat_out[start:start + step] = compensated_sum(fn(uu, betas[None, :]), axis=-1)
    return out


def _phi_from_betas(betas, n, u):
    total = _sum_over_spectrum(betas, u, lambda uu, b: _log1p_principal(2j * uu / b))
    return 1j * np.asarray(u) * n - 0.5 * total.reshape(np.shape(u))


def phi_n(spec: Spectrum, u):
    """``phi(u) = i u n - 1/2 sum_j log(1 + 2iu / beta_j)``, vectorized in ``u``."""
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=complex)
    _check_domain(spec, u)
    out = _phi_from_betas(spec.betas, spec.n, np.atleast_1d(u))
    return complex(out[0]) if scalar else out.reshape(u.shape)


def phi_shifted(spec: Spectrum, v, shift: float):
    """``phi(v - i*shift) - phi(-i*shift)`` for real ``v`` and ``shift >= 0``.

    Evaluated as the log-CF with precisions ``beta_j + 2*shift`` minus the
    linear term ``i v n``, which avoids forming ``exp(phi(-i*shift))``.
    """
    if shift < 0:
        raise DomainError("shift must be non-negative")
    scalar = np.ndim(v) == 0
    v = np.atleast_1d(np.asarray(v, dtype=float))
    out = _phi_from_betas(spec.betas + 2.0 * shift, spec.n, v)
    return complex(out[0]) if scalar else out


def phi_at_shift(spec: Spectrum, shift: float) -> float:
    """Real value ``phi(-i*shift) = shift*n - 1/2 sum_j log(1 + 2 shift / beta_j)``."""
    if 2.0 * -shift >= spec.beta_min:
        raise DomainError("shift outside U_n")
    return float(shift * spec.n - 0.5 * compensated_sum(np.log1p(2.0 * shift / spec.betas)))


def phi_deriv(spec: Spectrum, u, order: int):
    """Derivative of ``phi`` of order 1, 2 or 3.

    ``phi'(u) = i n - i sum 1/(beta + 2iu)``,
    ``phi''(u) = -2 sum 1/(beta + 2iu)^2``,
    ``phi'''(u) = 8 i sum 1/(beta + 2iu)^3``.
    """
    if order not in (1, 2, 3):
        raise OrderError(f"order must be 1, 2 or 3, got {order}")
    scalar = np.ndim(u) == 0
    u = np.asarray(u, dtype=complex)
    _check_domain(spec, u)
    s = _sum_over_spectrum(spec.betas, np.atleast_1d(u),
                           lambda uu, b: (b + 2j * uu) ** (-order))
    if order == 1:
        out = 1j * spec.n - 1j * s
    elif order == 2:
        out = -2.0 * s
    else:
        out = 8j * s
    return complex(out[0]) if scalar else out.reshape(u.shape)


def cf_aux(spec: Spectrum, u):
    """Characteristic function ``E[exp(iu (n - A_n))]`` at real ``u``."""
    u = np.asarray(u, dtype=float)
    out = np.exp(phi_n(spec, u))
    return out
