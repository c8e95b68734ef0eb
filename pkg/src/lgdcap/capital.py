"""Capital estimators with and without parameter uncertainty.

Three quantile notions of the 0.999-style loss quantile live here:

* ``quantile_given_params``: Monte Carlo quantile at a fixed parameter
  vector (or the exact closed form for the infinitely granular book);
* ``full_predictive_quantile``: quantile of the loss distribution mixed
  over the parameter posterior - each loss draw first resamples one stored
  posterior state, then simulates one loss under it;
* ``quantile_distribution``: the posterior distribution of the limiting
  quantile itself, via the closed form per posterior draw.

All simulation is blocked on fixed (seed, block) RNG substreams, so
results never depend on the thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import InvalidParameterError
from .mcmc import PosteriorSamples, PosteriorSummary, summarize_array
from .model import (
    ModelParams,
    Portfolio,
    analytic_limit_quantile,
    apply_recovery_link,
)
from .seeds import block_rng
from .simulate import _BLOCK, _CELLS_PER_BLOCK, empirical_quantile, simulate_losses

__all__ = [
    "StressedCapital",
    "CapitalReport",
    "quantile_given_params",
    "predictive_losses",
    "full_predictive_quantile",
    "quantile_distribution",
    "quantile_distribution_finite",
    "stressed_summaries",
    "quantile_standard_error",
]


@dataclass(frozen=True, eq=False)
class StressedCapital:
    """Posterior summaries of stressed PD, LGD, EC plus relative EC shifts."""

    pd: PosteriorSummary
    lgd: PosteriorSummary
    ec: PosteriorSummary
    delta_ec_pct: dict[str, float]
    reference_ec: float


@dataclass(frozen=True, eq=False)
class CapitalReport:
    """Aggregated capital outputs of one pipeline run."""

    point: dict[str, float]
    predictive: list[tuple[str, float, float]]
    ec_samples: np.ndarray
    stressed: StressedCapital


def _stressed_components(theta: np.ndarray, x_stress: float):
    """Vectorized conditional PD and loss rate at the stress factor."""
    p, rho, mu, sigma, omega = (theta[:, i] for i in range(5))
    pd = ndtr((ndtri(p) - np.sqrt(rho) * x_stress) / np.sqrt(1.0 - rho))
    lgd = 1.0 - mu - sigma * np.sqrt(omega) * x_stress
    return pd, lgd


def _theta_block_losses(theta: np.ndarray, portfolio: Portfolio, rng):
    """One block of losses, one parameter row per loss draw."""
    m = theta.shape[0]
    p, rho, mu, sigma, omega = (theta[:, i] for i in range(5))
    x = rng.standard_normal(m)
    lam = ndtr((ndtri(p) - np.sqrt(rho) * x) / np.sqrt(1.0 - rho))
    if portfolio.is_limiting:
        return lam * (1.0 - mu - sigma * np.sqrt(omega) * x)
    sys_part = mu + sigma * np.sqrt(omega) * x
    idio_sd = sigma * np.sqrt(1.0 - omega)
    if portfolio.equal_weighted:
        j = portfolio.n_loans
        d = rng.binomial(j, lam)
        if portfolio.link == "identity" and not portfolio.floor_loss:
            g = rng.standard_normal(m)
            return (d * (1.0 - sys_part) - idio_sd * np.sqrt(d) * g) / j
        out = np.zeros(m)
        total = int(d.sum())
        if total:
            z = rng.standard_normal(total)
            v = np.repeat(sys_part, d) + np.repeat(idio_sd, d) * z
            r = apply_recovery_link(portfolio.link, v)
            loss = 1.0 - r
            if portfolio.floor_loss:
                loss = np.maximum(loss, 0.0)
            np.add.at(out, np.repeat(np.arange(m), d), loss)
        return out / j
    w = portfolio.weights
    j = w.size
    z_c = rng.standard_normal((m, j))
    c = np.sqrt(rho)[:, None] * x[:, None] + np.sqrt(1.0 - rho)[:, None] * z_c
    defaulted = c < ndtri(p)[:, None]
    z = rng.standard_normal((m, j))
    v = sys_part[:, None] + idio_sd[:, None] * z
    r = apply_recovery_link(portfolio.link, v)
    loss = 1.0 - r
    if portfolio.floor_loss:
        loss = np.maximum(loss, 0.0)
    return (defaulted * loss) @ w


def _block_edges(n: int, portfolio: Portfolio):
    if portfolio.is_limiting or portfolio.equal_weighted:
        size = _BLOCK
    else:
        size = max(1, min(_BLOCK, _CELLS_PER_BLOCK // portfolio.n_loans))
    return list(range(0, n, size)) + [n]


def quantile_given_params(
    params: ModelParams,
    portfolio: Portfolio,
    q: float = 0.999,
    n: int = 1_000_000,
    seed: int = 0,
    n_threads: int = 1,
) -> float:
    """Loss quantile at fixed parameters.

    Simulates n portfolio losses and takes the empirical quantile; the
    infinitely granular portfolio needs no simulation and returns the
    exact monotone-transform quantile.
    """
    if portfolio.is_limiting:
        return analytic_limit_quantile(params, q)
    return empirical_quantile(simulate_losses(params, portfolio, n, seed, n_threads), q)


def predictive_losses(
    samples: PosteriorSamples,
    portfolio: Portfolio,
    n: int,
    seed: int = 0,
    n_threads: int = 1,
) -> np.ndarray:
    """n loss draws from the posterior-mixed predictive distribution.

    Each loss resamples one stored posterior draw uniformly with
    replacement and simulates a single portfolio loss under it; for the
    limiting portfolio the per-draw loss is the closed-form conditional
    loss rate at a fresh factor draw.
    """
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    theta_all = samples.theta
    edges = _block_edges(n, portfolio)
    out = np.empty(n)

    def run(b):
        lo, hi = edges[b], edges[b + 1]
        rng = block_rng(seed, b)
        idx = rng.integers(0, theta_all.shape[0], size=hi - lo)
        out[lo:hi] = _theta_block_losses(theta_all[idx], portfolio, rng)

    n_blocks = len(edges) - 1
    if n_threads > 1 and n_blocks > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            list(pool.map(run, range(n_blocks)))
    else:
        for b in range(n_blocks):
            run(b)
    return out


def full_predictive_quantile(
    samples: PosteriorSamples,
    portfolio: Portfolio,
    q: float = 0.999,
    n: int = 1_000_000,
    seed: int = 0,
    n_threads: int = 1,
) -> float:
    """Quantile of the posterior-mixed (full predictive) loss distribution."""
    if not 0.0 < q < 1.0:
        raise InvalidParameterError(f"q must be in (0,1), got {q}")
    return empirical_quantile(
        predictive_losses(samples, portfolio, n, seed, n_threads), q
    )


def quantile_distribution(samples: PosteriorSamples, alpha: float = 0.999) -> np.ndarray:
    """Limiting-portfolio alpha-quantile at every stored posterior draw.

    Uses the closed form Lambda(x) S(x) at x = Phi^-1(1-alpha), which
    replaces the inner Monte Carlo loop exactly in the limiting case.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must be in (0,1), got {alpha}")
    x_stress = float(ndtri(1.0 - alpha))
    pd, lgd = _stressed_components(samples.theta, x_stress)
    return pd * lgd


def quantile_distribution_finite(
    samples: PosteriorSamples,
    portfolio: Portfolio,
    alpha: float = 0.999,
    n: int = 200_000,
    seed: int = 0,
    max_draws: int | None = None,
    n_threads: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """Finite-J variant of the quantile distribution (Monte Carlo inner loop).

    Far slower than the closed form, so ``max_draws`` evenly thins the
    posterior draws.  Returns the per-draw quantiles and their Monte Carlo
    standard errors (batch estimates).
    """
    n_stored = samples.n_draws
    if max_draws is not None and max_draws < n_stored:
        idx = np.unique(np.linspace(0, n_stored - 1, max_draws).round().astype(int))
    else:
        idx = np.arange(n_stored)
    values = np.empty(idx.size)
    errors = np.empty(idx.size)
    for i, row in enumerate(idx):
        params = ModelParams.from_array(samples.theta[row])
        inner_seed = int(
            np.random.SeedSequence(entropy=int(seed), spawn_key=(int(row),))
            .generate_state(1)[0]
        )
        losses = simulate_losses(params, portfolio, n, inner_seed, n_threads).losses
        values[i] = empirical_quantile(losses, alpha)
        errors[i] = quantile_standard_error(losses, alpha)
    return values, errors


def quantile_standard_error(losses, q: float, n_batches: int = 25) -> float:
    """Batch-mean standard error of the empirical quantile estimator."""
    losses = np.asarray(losses)
    usable = (losses.size // n_batches) * n_batches
    if usable < n_batches:
        return math.nan
    batches = losses[:usable].reshape(n_batches, -1)
    qs = np.array([empirical_quantile(b, q) for b in batches])
    # Batch quantiles use 1/n_batches of the data each, so scale their
    # spread down by sqrt(n_batches) to reflect the full-sample estimator.
    return float(qs.std(ddof=1) / math.sqrt(n_batches))


def stressed_summaries(
    samples: PosteriorSamples,
    alpha: float = 0.999,
    reference_ec: float | None = None,
) -> StressedCapital:
    """Posterior summaries of stressed PD, LGD, and EC.

    ``delta_ec_pct`` reports 100 (value/reference - 1) of the EC mean and
    quartiles against ``reference_ec`` (a point estimate such as the
    two-stage MLE capital); with no reference the EC posterior mean is
    used, making the mean entry 0 by construction.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must be in (0,1), got {alpha}")
    x_stress = float(ndtri(1.0 - alpha))
    pd, lgd = _stressed_components(samples.theta, x_stress)
    ec = pd * lgd
    ec_summary = summarize_array(ec)
    ref = reference_ec if reference_ec is not None else ec_summary.mean
    if ref == 0.0:
        raise InvalidParameterError("reference EC must be nonzero")
    delta = {
        "mean": 100.0 * (ec_summary.mean / ref - 1.0),
        "q25": 100.0 * (ec_summary.q25 / ref - 1.0),
        "q50": 100.0 * (ec_summary.q50 / ref - 1.0),
        "q75": 100.0 * (ec_summary.q75 / ref - 1.0),
    }
    return StressedCapital(
        pd=summarize_array(pd),
        lgd=summarize_array(lgd),
        ec=ec_summary,
        delta_ec_pct=delta,
        reference_ec=ref,
    )
