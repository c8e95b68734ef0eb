"""Monte Carlo loss simulation and synthetic dataset generation.

Loss draws follow the generative model: one systematic factor X per draw,
then per-borrower default indicators (threshold on sqrt(rho) X +
sqrt(1-rho) Z^C) and linked recoveries (mu + sigma sqrt(omega) X +
sigma sqrt(1-omega) Z).  For equally weighted portfolios the per-borrower
loop is collapsed exactly: conditional on X the default count is
Binomial(J, Lambda(X)) and, for the identity link without flooring, the
summed defaulted-loan loss is normal, so draws from the identical loss
distribution cost O(1) per draw instead of O(J).  Portfolios with explicit
unequal weights take the literal per-borrower path.

Draws are partitioned into fixed-size blocks whose RNG streams depend only
on (seed, block index), which makes results bit-reproducible regardless of
the thread count used.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError
from .likelihood import YearlyObservations
from .model import (
    LatentPath,
    ModelParams,
    Portfolio,
    apply_recovery_link,
    conditional_default_prob,
)
from .seeds import block_rng

__all__ = [
    "LossSample",
    "SyntheticDataset",
    "simulate_losses",
    "empirical_quantile",
    "simulate_dataset",
]

# Draws per RNG block; fixed so the block partition never depends on the
# worker count.  Per-borrower blocks shrink so a block stays ~4M cells.
_BLOCK = 1 << 15
_CELLS_PER_BLOCK = 1 << 22


@dataclass(frozen=True, eq=False)
class LossSample:
    """Simulated portfolio loss rates plus the RNG provenance."""

    losses: np.ndarray
    seed: int
    n: int


@dataclass(frozen=True, eq=False)
class SyntheticDataset:
    """Simulated yearly observations together with the generating truth."""

    observations: YearlyObservations
    true_params: ModelParams
    true_latent: LatentPath


def _loan_losses(r, floor_loss):
    loss = 1.0 - r
    return np.maximum(loss, 0.0) if floor_loss else loss


def _equal_weight_block(params, portfolio, m, rng):
    """Block of losses for an equally weighted J-loan portfolio."""
    j = portfolio.n_loans
    x = rng.standard_normal(m)
    lam = conditional_default_prob(params, x)
    d = rng.binomial(j, lam)
    sys_part = params.mu + params.sigma * math.sqrt(params.omega) * x
    idio_sd = params.sigma * math.sqrt(1.0 - params.omega)
    if portfolio.link == "identity" and not portfolio.floor_loss:
        # Sum of d i.i.d. N(sys_part, idio_sd^2) recoveries is normal, so a
        # single draw reproduces the defaulted-loan loss total exactly.
        g = rng.standard_normal(m)
        total = d * (1.0 - sys_part) - idio_sd * np.sqrt(d) * g
        return total / j
    total_defaults = int(d.sum())
    out = np.zeros(m)
    if total_defaults == 0:
        return out
    z = rng.standard_normal(total_defaults)
    v = np.repeat(sys_part, d) + idio_sd * z
    r = apply_recovery_link(portfolio.link, v)
    owner = np.repeat(np.arange(m), d)
    np.add.at(out, owner, _loan_losses(r, portfolio.floor_loss))
    return out / j


def _per_borrower_block(params, portfolio, m, rng):
    """Literal per-borrower simulation for explicitly weighted portfolios."""
    w = portfolio.weights
    j = w.size
    x = rng.standard_normal(m)
    z_c = rng.standard_normal((m, j))
    c = math.sqrt(params.rho) * x[:, None] + math.sqrt(1.0 - params.rho) * z_c
    defaulted = c < params.default_threshold
    z = rng.standard_normal((m, j))
    v = (
        params.mu
        + params.sigma * math.sqrt(params.omega) * x[:, None]
        + params.sigma * math.sqrt(1.0 - params.omega) * z
    )
    r = apply_recovery_link(portfolio.link, v)
    return (defaulted * _loan_losses(r, portfolio.floor_loss)) @ w


def _block_plan(n, portfolio):
    if portfolio.equal_weighted:
        size = _BLOCK
    else:
        size = max(1, min(_BLOCK, _CELLS_PER_BLOCK // portfolio.n_loans))
    edges = list(range(0, n, size)) + [n]
    return size, edges


def simulate_losses(
    params: ModelParams,
    portfolio: Portfolio,
    n: int,
    seed: int,
    n_threads: int = 1,
) -> LossSample:
    """Draw ``n`` independent portfolio loss rates.

    Deterministic in (seed, n) alone; ``n_threads`` only schedules the
    fixed blocks and never changes the values.
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    if portfolio.is_limiting:
        raise InvalidParameterError(
            "limiting portfolio has no finite-J loss simulation; "
            "use the closed-form limiting loss"
        )
    kernel = _equal_weight_block if portfolio.equal_weighted else _per_borrower_block
    _, edges = _block_plan(n, portfolio)
    out = np.empty(n)

    def run(b):
        lo, hi = edges[b], edges[b + 1]
        out[lo:hi] = kernel(params, portfolio, hi - lo, block_rng(seed, b))

    n_blocks = len(edges) - 1
    if n_threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run, range(n_blocks)))
    else:
        for b in range(n_blocks):
            run(b)
    return LossSample(losses=out, seed=seed, n=n)


def empirical_quantile(sample, q: float) -> float:
    """ceil(q n)-th order statistic (1-indexed) of the losses.

    The plain order statistic, with no interpolation, is the standard
    deterministic VaR estimator.  A 1e-9 slack keeps ceil() from jumping an
    index when q*n lands on an integer up to float rounding.
    """
    losses = sample.losses if isinstance(sample, LossSample) else np.asarray(sample)
    n = losses.size
    if n == 0:
        raise InvalidParameterError("empty loss sample")
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must be in (0,1), got {q}")
    k = int(math.ceil(q * n - 1e-9))
    k = min(max(k, 1), n)
    return float(np.partition(losses, k - 1)[k - 1])


def simulate_dataset(
    params: ModelParams,
    firm_counts,
    seed: int,
    first_year: int = 1,
) -> SyntheticDataset:
    """Generate per-period (J_t, d_t, rbar_t) data from known parameters.

    Per period: X_t ~ N(0,1), d_t ~ Binomial(J_t, Lambda(X_t)), and for
    periods with defaults the average recovery is normal with mean
    mu + sigma sqrt(omega) X_t and variance sigma^2 (1-omega)/d_t.
    Zero-default periods carry a missing recovery.
    """
    obligors = np.atleast_1d(np.asarray(firm_counts, dtype=int))
    if obligors.size < 1 or np.any(obligors < 1):
        raise InvalidParameterError("firm counts must all be >= 1")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=int(seed)))
    t = obligors.size
    x = rng.standard_normal(t)
    lam = conditional_default_prob(params, x)
    defaults = rng.binomial(obligors, lam)
    recovery = np.full(t, np.nan)
    has = defaults > 0
    if np.any(has):
        mean = params.mu + params.sigma * math.sqrt(params.omega) * x[has]
        sd = params.sigma * math.sqrt(1.0 - params.omega) / np.sqrt(defaults[has])
        recovery[has] = rng.normal(mean, sd)
    obs = YearlyObservations(
        years=first_year + np.arange(t),
        obligors=obligors,
        defaults=defaults,
        avg_recovery=recovery,
    )
    return SyntheticDataset(
        observations=obs, true_params=params, true_latent=LatentPath(x)
    )
