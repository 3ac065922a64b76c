"""Samplers for the auxiliary variable, the magnetization and raw spins.

The Gibbs measure has density proportional to ``exp(-H/T) prod nu(x_i)``
with ``nu`` standard Gaussian and ``T = Q/n`` the self-adjusted
temperature.  Exact draws use the representation

    S_n / sqrt(T_n)  =law=  +-sqrt(n (n - A_n)),  reweighted by
    1 / sqrt(n (n - A_n)) on {A_n < n},

with ``A_n = sum_j Z_j^2``, ``Z_j ~ N(0, 1/beta_j)``, and ``T_n`` an
independent ``chi2_n / n``.  A Metropolis chain on the spins serves as an
independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .charfn import compensated_sum
from .density import TiltPlan
from .errors import ConvergenceError, DomainError, EmptyInput
from .spectrum import ModelParams, Spectrum, validate_params

__all__ = [
    "WeightedSamples",
    "SpinConfig",
    "MCMCTrace",
    "hamiltonian",
    "delta_hamiltonian",
    "log_target",
    "metropolis_log_ratio",
    "mcmc_run",
    "sample_aux",
    "sample_aux_tilted",
    "sample_self_normalized",
    "sample_tn",
    "sample_magnetization",
    "fourier_basis",
]

# Exponential draws per vectorized block.
_BLOCK_ELEMS = 1 << 22
# Metropolis updates per block of pre-drawn random numbers.
_MCMC_BLOCK = 1 << 20


# ------------------------------------------------------------ weighted output

@dataclass
class WeightedSamples:
    """Draws with importance weights kept on the log scale.

    Only ratios of weights carry meaning; :attr:`weights` rescales so that
    the largest weight is one.  ``proposals`` counts the draws of ``A_n``
    that produced these samples (accepted or not).
    """

    values: np.ndarray
    log_weights: np.ndarray
    proposals: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.log_weights = np.asarray(self.log_weights, dtype=float)
        if self.values.shape != self.log_weights.shape:
            raise ValueError("values and log_weights differ in shape")

    def __len__(self):
        return self.values.size

    @property
    def weights(self) -> np.ndarray:
        if self.values.size == 0:
            return np.empty(0)
        return np.exp(self.log_weights - self.log_weights.max())

    @property
    def normalized_weights(self) -> np.ndarray:
        w = self.weights
        return w / compensated_sum(w)

    @property
    def acceptance_rate(self) -> float:
        return self.values.size / self.proposals if self.proposals else float("nan")

    def mean(self, fn=None) -> float:
        """Self-normalized estimate of ``E[fn(value)]`` (identity by default)."""
        if self.values.size == 0:
            raise EmptyInput("no samples")
        v = self.values if fn is None else fn(self.values)
        return float(compensated_sum(self.normalized_weights * v))

    def variance(self) -> float:
        m = self.mean()
        return self.mean(lambda v: (v - m) ** 2)

    def effective_size(self) -> float:
        """Kish effective sample size ``(sum w)^2 / sum w^2``."""
        w = self.weights
        return float(w.sum() ** 2 / np.sum(w * w)) if w.size else 0.0

    def standard_error(self, fn=None) -> float:
        """Delta-method standard error of :meth:`mean`."""
        v = self.values if fn is None else fn(self.values)
        wn = self.normalized_weights
        m = float(np.sum(wn * v))
        return float(math.sqrt(np.sum(wn ** 2 * (v - m) ** 2)))

    def scaled(self, factor: float) -> "WeightedSamples":
        return WeightedSamples(self.values * factor, self.log_weights, self.proposals)

    @staticmethod
    def concatenate(parts) -> "WeightedSamples":
        parts = list(parts)
        if not parts:
            return WeightedSamples(np.empty(0), np.empty(0), 0)
        return WeightedSamples(np.concatenate([p.values for p in parts]),
                               np.concatenate([p.log_weights for p in parts]),
                               sum(p.proposals for p in parts))


# --------------------------------------------------------------- auxiliary A

def _pair_precisions(betas: np.ndarray):
    """Split ``beta_1..beta_{n-1}`` into mirrored pairs and the middle term.

    ``beta_j = beta_{n-j}``, so ``Z_j^2 + Z_{n-j}^2 = 2 E_j / beta_j`` with
    ``E_j`` standard exponential.  For even ``n`` the unpaired
    ``beta_{n/2}`` contributes a single ``chi2_1 / beta_{n/2}``.
    """
    n = betas.size + 1
    half = (n - 1) // 2
    pairs = betas[:half]
    middle = betas[n // 2 - 1] if n % 2 == 0 else None
    return pairs, middle


def _draw_quadratic(precisions: np.ndarray, rng: np.random.Generator, size: int) -> np.ndarray:
    """``size`` draws of ``sum_j Z_j^2`` with ``Z_j ~ N(0, 1/precisions_j)``."""
    pairs, middle = _pair_precisions(precisions)
    coef = 2.0 / pairs
    out = np.empty(size)
    rows = max(1, _BLOCK_ELEMS // max(1, coef.size))
    for start in range(0, size, rows):
        m = min(rows, size - start)
        e = rng.standard_exponential((m, coef.size))
        out[start:start + m] = e @ coef
    if middle is not None:
        out += rng.standard_normal(size) ** 2 / middle
    return out


def sample_aux(spec: Spectrum, rng: np.random.Generator, size: int):
    """Draws of ``A_n`` and the acceptance flags ``A_n < n``."""
    a = _draw_quadratic(spec.betas, rng, size)
    return a, a < spec.n


def _tilt_log_const(spec: Spectrum, c: float) -> float:
    # log prod sqrt(beta_j / (beta_j + 2c))
    return -0.5 * float(compensated_sum(np.log1p(2.0 * c / spec.betas)))


def sample_aux_tilted(spec: Spectrum, plan: TiltPlan, rng: np.random.Generator,
                      size: int) -> WeightedSamples:
    """Draws of ``A_n`` under precisions ``beta_j + 2c`` with exact log-weights.

    ``c = u_star / w_n`` and ``log w = c A + (1/2) sum log(beta_j / (beta_j + 2c))``,
    so ``E[w g(A)]`` under the tilt equals ``E[g(A)]`` under the original law
    (in particular ``E[w 1{A < n}] = P(A_n < n)``).
    """
    c = plan.shift
    a = _draw_quadratic(spec.betas + 2.0 * c, rng, size)
    lw = c * a + _tilt_log_const(spec, c) if c > 0 else np.zeros(size)
    return WeightedSamples(a, lw, size)


def _accepted_aux(spec, plan, rng, size, max_proposals):
    """Accepted tilted draws of ``A_n`` until ``size`` are collected."""
    got, parts, proposals = 0, [], 0
    batch = size
    while got < size:
        if proposals >= max_proposals:
            raise ConvergenceError(f"only {got} of {size} draws accepted after "
                                   f"{proposals} proposals")
        batch = int(min(max(batch, 1024), max_proposals - proposals))
        ws = sample_aux_tilted(spec, plan, rng, batch)
        proposals += batch
        keep = ws.values < spec.n
        parts.append(WeightedSamples(ws.values[keep], ws.log_weights[keep]))
        got += int(keep.sum())
        rate = max(got / proposals, 1e-3)
        batch = int(1.1 * (size - got) / rate) + 1
    out = WeightedSamples.concatenate(parts)
    return out.values[:size], out.log_weights[:size], proposals


def sample_self_normalized(spec: Spectrum, plan: TiltPlan, rng: np.random.Generator,
                           size: int, max_proposals: int | None = None) -> WeightedSamples:
    """``size`` weighted draws whose self-normalized law is that of ``S_n / sqrt(T_n)``.

    Tilted draws of ``A_n`` with ``A_n >= n`` are rejected; accepted ones
    give ``value = s sqrt(n (n - A))`` with a fair sign ``s`` from its own
    substream and weight ``tilt weight / sqrt(n (n - A))``.
    """
    if size < 1:
        raise EmptyInput("size must be >= 1")
    a_rng, s_rng = rng.spawn(2)
    if max_proposals is None:
        max_proposals = 1000 * size + 10 ** 6
    a, lw, proposals = _accepted_aux(spec, plan, a_rng, size, max_proposals)
    n = spec.n
    root = np.sqrt(n * (n - a))
    sign = np.where(s_rng.random(size) < 0.5, -1.0, 1.0)
    return WeightedSamples(sign * root, lw - np.log(root), proposals)


def sample_tn(n: int, rng: np.random.Generator, size: int | None = None):
    """``T_n = (G_1^2 + ... + G_n^2) / n`` with standard normal ``G_i``."""
    if n < 1:
        raise DomainError("n must be >= 1")
    return rng.chisquare(n, size) / n


def sample_magnetization(spec: Spectrum, plan: TiltPlan, rng: np.random.Generator,
                         size: int) -> WeightedSamples:
    """Weighted draws of ``S_n``: a self-normalized draw times ``sqrt(T_n)``.

    ``T_n`` comes from a substream independent of the one driving ``A_n``.
    """
    sn_rng, t_rng = rng.spawn(2)
    sn = sample_self_normalized(spec, plan, sn_rng, size)
    t = sample_tn(spec.n, t_rng, size)
    return WeightedSamples(sn.values * np.sqrt(t), sn.log_weights, sn.proposals)


# ---------------------------------------------------------------- raw spins

def _neighbour_sums(x: np.ndarray, r: int) -> np.ndarray:
    out = np.zeros_like(x)
    for m in range(1, r + 1):
        out += np.roll(x, m) + np.roll(x, -m)
    return out


def hamiltonian(c, p: ModelParams) -> float:
    """``-(1/(2r)) sum_i sum_{m<=r} x_i x_{i+m}`` with periodic indices, O(n r)."""
    x = c.x if isinstance(c, SpinConfig) else np.asarray(c, dtype=float)
    total = 0.0
    for m in range(1, p.r + 1):
        total += float(np.dot(x, np.roll(x, -m)))
    return -total / (2.0 * p.r)


class SpinConfig:
    """Spins with cached ``S``, ``Q``, ``H`` and neighbour sums.

    ``nbr[i] = sum_{1<=m<=r} (x_{i+m} + x_{i-m})`` gives the energy change of
    a single-site move in O(1) and is refreshed in O(r) after the move.
    Sites are 0-based here; :func:`delta_hamiltonian` takes 1-based ``i``.
    """

    def __init__(self, x, p: ModelParams):
        validate_params(p.n, p.r)
        x = np.array(x, dtype=float)
        if x.shape != (p.n,):
            raise ValueError(f"expected {p.n} spins, got shape {x.shape}")
        self.p = p
        self.x = x
        self.S = float(x.sum())
        self.Q = float(x @ x)
        if not self.Q > 0:
            raise DomainError("need sum of squares > 0")
        self.nbr = _neighbour_sums(x, p.r)
        self.H = -float(x @ self.nbr) / (4.0 * p.r)

    @classmethod
    def random(cls, p: ModelParams, rng: np.random.Generator) -> "SpinConfig":
        return cls(rng.standard_normal(p.n), p)

    def update(self, i: int, new_xi: float) -> None:
        """Set ``x[i] = new_xi`` (0-based) and refresh the caches."""
        n, r = self.p.n, self.p.r
        d = new_xi - self.x[i]
        self.H -= d * self.nbr[i] / (2.0 * r)
        self.S += d
        self.Q += new_xi * new_xi - self.x[i] ** 2
        self.x[i] = new_xi
        idx = (i + np.concatenate((np.arange(1, r + 1), -np.arange(1, r + 1)))) % n
        self.nbr[idx] += d

    def recompute(self):
        """``(S, Q, H, nbr)`` from scratch, for checking the caches."""
        x = self.x
        return float(x.sum()), float(x @ x), hamiltonian(x, self.p), _neighbour_sums(x, self.p.r)


def delta_hamiltonian(c: SpinConfig, p: ModelParams, i: int, new_xi: float) -> float:
    """``H(after) - H(before)`` for ``x_i -> new_xi``, 1-based ``i``, O(1)."""
    if not 1 <= i <= p.n:
        raise IndexError(f"site {i} outside [1, {p.n}]")
    return -(new_xi - c.x[i - 1]) * c.nbr[i - 1] / (2.0 * p.r)


def log_target(H: float, Q: float, n: int) -> float:
    """``-H/T - Q/2`` with ``T = Q/n``: log density of the spins up to a constant."""
    return -H * n / Q - 0.5 * Q


def metropolis_log_ratio(H0, Q0, H1, Q1, n) -> float:
    """Log acceptance ratio for a symmetric proposal from state 0 to state 1."""
    return log_target(H1, Q1, n) - log_target(H0, Q0, n)


@njit(cache=True)
def _metropolis_block(x, nbr, S, Q, H, n, r, sites, steps_z, logu, scale, rec_every,
                      out_S, out_T, out_H, rec_pos, counter):
    accepted = 0
    inv2r = 1.0 / (2.0 * r)
    for k in range(sites.size):
        i = sites[k]
        xi = x[i]
        new = xi + scale * steps_z[k]
        d = new - xi
        H1 = H - d * nbr[i] * inv2r
        Q1 = Q + new * new - xi * xi
        if Q1 > 0.0:
            lr = (-H1 * n / Q1 - 0.5 * Q1) - (-H * n / Q - 0.5 * Q)
            if logu[k] < lr:
                accepted += 1
                H = H1
                Q = Q1
                S += d
                x[i] = new
                for m in range(1, r + 1):
                    nbr[(i + m) % n] += d
                    nbr[(i - m) % n] += d
        counter += 1
        if counter == rec_every:
            counter = 0
            if rec_pos < out_S.size:
                out_S[rec_pos] = S
                out_T[rec_pos] = Q / n
                out_H[rec_pos] = H
                rec_pos += 1
    return S, Q, H, accepted, rec_pos, counter


@dataclass
class MCMCTrace:
    """Thinned trace of a Metropolis run."""

    S: np.ndarray
    T: np.ndarray
    H: np.ndarray
    acceptance: float
    proposal_scale: float

    def self_normalized(self) -> np.ndarray:
        return self.S / np.sqrt(self.T)


def _run_updates(state, p, updates, scale, rng, rec_every, records):
    x, nbr, S, Q, H = state
    out_S = np.empty(records)
    out_T = np.empty(records)
    out_H = np.empty(records)
    rec_pos, counter, accepted = 0, 0, 0
    done = 0
    while done < updates:
        m = min(_MCMC_BLOCK, updates - done)
        sites = rng.integers(0, p.n, m)
        z = rng.standard_normal(m)
        logu = np.log(rng.random(m))
        S, Q, H, acc, rec_pos, counter = _metropolis_block(
            x, nbr, S, Q, H, p.n, p.r, sites, z, logu, scale, rec_every,
            out_S, out_T, out_H, rec_pos, counter)
        accepted += acc
        done += m
    state[2:] = [S, Q, H]
    return out_S[:rec_pos], out_T[:rec_pos], out_H[:rec_pos], accepted / max(updates, 1)


def mcmc_run(p: ModelParams, steps: int, proposal_scale: float, rng: np.random.Generator,
             burn_in: int = 100_000, thin: int = 1, adapt: bool = True) -> MCMCTrace:
    """Random-scan single-site Metropolis on the spins.

    Parameters
    ----------
    steps : int
        Recorded sweeps (``n`` single-site updates each).
    proposal_scale : float
        Initial standard deviation of the Gaussian step.
    burn_in : int
        Sweeps discarded before recording.  When ``adapt`` is set the scale
        is doubled or halved during burn-in until the acceptance rate lies in
        ``[0.25, 0.45]``, then frozen.
    thin : int
        Record every ``thin`` sweeps.
    """
    p = validate_params(p.n, p.r)
    if steps < 1:
        raise DomainError("steps must be >= 1")
    if not proposal_scale > 0:
        raise DomainError("proposal_scale must be positive")
    cfg = SpinConfig.random(p, rng)
    state = [cfg.x, cfg.nbr, cfg.S, cfg.Q, cfg.H]
    scale = float(proposal_scale)
    n = p.n
    if burn_in > 0:
        rounds = 20 if adapt else 1
        per_round = max(1, burn_in // rounds)
        for _ in range(rounds):
            *_, acc = _run_updates(state, p, per_round * n, scale, rng, 1 << 62, 0)
            if adapt:
                if acc < 0.25:
                    scale *= 0.5
                elif acc > 0.45:
                    scale *= 2.0
    s, t, h, acc = _run_updates(state, p, steps * n, scale, rng, thin * n, steps // thin)
    return MCMCTrace(s, t, h, acc, scale)


# ----------------------------------------------------------- diagonalization

def fourier_basis(n: int) -> np.ndarray:
    """Orthonormal ``P`` with ``y = P x`` diagonalizing the interaction.

    Row ``j`` (1-based) belongs to the eigenvalue ``alpha_j``:
    ``sqrt(2/n) cos(2 pi j k / n)`` for ``j < n/2``, the matching
    ``sqrt(2/n) sin(2 pi j k / n)`` in row ``n - j``, ``(-1)^k / sqrt(n)``
    in row ``n/2`` for even ``n`` and ``1/sqrt(n)`` in row ``n``, so that
    ``y_n = S_n / sqrt(n)``.
    """
    if n < 3:
        raise DomainError("n must be >= 3")
    k = np.arange(1, n + 1)
    P = np.empty((n, n))
    for j in range(1, (n + 1) // 2):
        ang = 2.0 * np.pi * ((j * k) % n) / n
        P[j - 1] = math.sqrt(2.0 / n) * np.cos(ang)
        P[n - j - 1] = math.sqrt(2.0 / n) * np.sin(ang)
    if n % 2 == 0:
        P[n // 2 - 1] = np.where(k % 2 == 0, 1.0, -1.0) / math.sqrt(n)
    P[n - 1] = 1.0 / math.sqrt(n)
    return P
