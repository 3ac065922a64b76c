"""Model parameters and the spectrum of the circulant interaction.

The Hamiltonian couples every spin to its ``r`` neighbours on each side of a
ring of ``n`` sites with weight ``1/(2r)``.  Its matrix is circulant, so the
eigenvalues are

    alpha_j = (1/r) * sum_{m=1}^{r} cos(2 pi j m / n),   j = 1..n,

and ``beta_j = 1 - alpha_j`` are the precisions of the Gaussian variables
that drive the magnetization.  ``beta_j`` is computed from the termwise
non-negative identity ``beta_j = (2/r) sum_m sin^2(pi j m / n)`` so that the
small eigenvalues near ``j = 0`` keep their relative accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, RangeError

__all__ = [
    "ModelParams",
    "Spectrum",
    "validate_params",
    "compute_spectrum",
    "alpha_closed_form",
    "beta_direct",
    "spectrum_residual",
]

# Work size (number of j*m products) per vectorized chunk.
_CHUNK = 1 << 22
# Above this many j*m products the "auto" method switches to the closed form.
_DIRECT_LIMIT = 60_000_000


@dataclass(frozen=True)
class ModelParams:
    """Chain length ``n`` and interaction range ``r``."""

    n: int
    r: int


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Eigenvalues of the interaction.

    Attributes
    ----------
    n, r : int
        Model parameters.
    alphas : ndarray, shape (n,)
        ``alpha_1 .. alpha_n``; ``alphas[n-1] == 1``.
    betas : ndarray, shape (n-1,)
        ``beta_1 .. beta_{n-1}``, all strictly positive.
    """

    n: int
    r: int
    alphas: np.ndarray
    betas: np.ndarray

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.n, self.r)

    @property
    def beta_min(self) -> float:
        return float(self.betas.min())


def validate_params(n, r) -> ModelParams:
    """Return ``ModelParams(n, r)`` or raise :class:`RangeError`."""
    if int(n) != n or int(r) != r:
        raise RangeError(f"n and r must be integers, got n={n!r}, r={r!r}")
    n, r = int(n), int(r)
    if n < 3:
        raise RangeError(f"n must be >= 3, got {n}")
    if r < 1:
        raise RangeError(f"r must be >= 1, got {r}")
    if 2 * r >= n:
        raise RangeError(f"need 2r < n, got n={n}, r={r}")
    return ModelParams(n, r)


def _sin_pi_frac(k, n):
    """sin(pi k / n) for integer ``k``, reduced exactly modulo 2n."""
    k = np.mod(np.asarray(k, dtype=np.int64), 2 * n)
    sign = np.where(k >= n, -1.0, 1.0)
    k = np.where(k >= n, k - n, k)
    k = np.minimum(k, n - k)
    return sign * np.sin(np.pi * k / n)


def beta_direct(p: ModelParams, j) -> np.ndarray:
    """``(2/r) sum_m sin^2(pi j m / n)`` for integer ``j`` (array-like)."""
    n, r = p.n, p.r
    j = np.atleast_1d(np.asarray(j, dtype=np.int64))
    # sin^2(pi k / n) has period n in k
    table = np.sin(np.pi * np.arange(n) / n) ** 2
    m = np.arange(1, r + 1, dtype=np.int64)
    out = np.empty(j.shape, dtype=float)
    step = max(1, _CHUNK // r)
    for start in range(0, j.size, step):
        jj = j[start:start + step]
        k = np.mod(jj[:, None] * m[None, :], n)
        out[start:start + step] = table[k].sum(axis=1)
    return 2.0 * out / r


def alpha_direct(p: ModelParams, j) -> np.ndarray:
    """``(1/r) sum_m cos(2 pi j m / n)`` by direct summation."""
    n, r = p.n, p.r
    j = np.atleast_1d(np.asarray(j, dtype=np.int64))
    table = np.cos(2.0 * np.pi * np.arange(n) / n)
    m = np.arange(1, r + 1, dtype=np.int64)
    out = np.empty(j.shape, dtype=float)
    step = max(1, _CHUNK // r)
    for start in range(0, j.size, step):
        jj = j[start:start + step]
        out[start:start + step] = table[np.mod(jj[:, None] * m[None, :], n)].sum(axis=1)
    return out / r


def alpha_closed_form(p: ModelParams, j):
    """Dirichlet-kernel evaluation of ``alpha_j`` in O(1) per index.

    ``alpha_j = (sin((2r+1) j pi / n) / sin(j pi / n) - 1) / (2r)``, with
    ``alpha_n = 1``.  Accepts a scalar or an integer array.
    """
    n, r = p.n, p.r
    jarr = np.asarray(j)
    if jarr.dtype.kind not in "iu":
        if not np.all(jarr == np.round(jarr)):
            raise IndexError("j must be integer")
        jarr = jarr.astype(np.int64)
    if np.any(jarr < 1) or np.any(jarr > n):
        raise IndexError(f"j must lie in [1, {n}]")
    jj = np.atleast_1d(jarr).astype(np.int64)
    den = _sin_pi_frac(jj, n)
    num = _sin_pi_frac((2 * r + 1) * jj, n)
    at_n = jj % n == 0
    safe = np.where(at_n, 1.0, den)
    out = np.where(at_n, 1.0, (num / safe - 1.0) / (2 * r))
    return float(out[0]) if np.ndim(jarr) == 0 else out


def compute_spectrum(p: ModelParams, method: str = "auto") -> Spectrum:
    """Eigenvalues ``alpha_1..alpha_n`` and ``beta_1..beta_{n-1}``.

    Parameters
    ----------
    p : ModelParams
    method : {"auto", "direct", "fast"}
        ``direct`` sums the ``r`` sine terms for every ``j`` (O(n r)).
        ``fast`` uses the closed form wherever ``beta_j >= 1/2`` and falls
        back to the direct sum near ``j = 0`` and ``j = n`` where the
        subtraction ``1 - alpha_j`` would cancel.  ``auto`` picks ``direct``
        unless ``n * r`` is large.
    """
    p = validate_params(p.n, p.r)
    n, r = p.n, p.r
    j = np.arange(1, n, dtype=np.int64)
    if method == "auto":
        method = "direct" if n * r <= _DIRECT_LIMIT else "fast"
    if method == "direct":
        betas = beta_direct(p, j)
    elif method == "fast":
        betas = 1.0 - alpha_closed_form(p, j)
        small = betas < 0.5
        if small.any():
            betas[small] = beta_direct(p, j[small])
    else:
        raise ValueError(f"unknown method {method!r}")
    alphas = np.empty(n)
    alphas[:-1] = 1.0 - betas
    alphas[-1] = 1.0
    alphas.setflags(write=False)
    betas.setflags(write=False)
    return Spectrum(n=n, r=r, alphas=alphas, betas=betas)


def spectrum_residual(p: ModelParams, j, spectrum: Spectrum | None = None):
    """``|(2r)^2 / (n^2 beta_j) - 6 / (pi^2 j^2)|`` for ``1 <= j <= n // 2``."""
    n, r = p.n, p.r
    jarr = np.atleast_1d(np.asarray(j, dtype=np.int64))
    if np.any(jarr < 1) or np.any(jarr > n // 2):
        raise IndexError(f"j must lie in [1, {n // 2}]")
    if spectrum is not None:
        beta = spectrum.betas[jarr - 1]
    else:
        beta = beta_direct(p, jarr)
    if np.any(beta <= 0):
        raise DomainError("beta_j vanished")
    res = np.abs((2.0 * r) ** 2 / (n ** 2 * beta) - 6.0 / (np.pi ** 2 * jarr.astype(float) ** 2))
    return float(res[0]) if np.ndim(j) == 0 else res
