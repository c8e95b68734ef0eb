"""Likelihood functions for yearly default/recovery observations.

The data for period t are (J_t obligors, d_t defaults, rbar_t average
recovery over the defaulted loans).  Three likelihood formulations live
here:

* the latent-augmented joint likelihood over (theta, X_1..X_T), which is
  the MCMC target's data term and needs no numerical integration;
* the marginal likelihood with the factor integrated out by Gauss-Hermite
  quadrature in the log domain (log-sum-exp guards against the underflow
  that plain quadrature of the integrand suffers);
* the approximate per-process likelihoods used by the two-stage
  closed-form/feasible fitting procedure.

Everything is evaluated in the log domain and is additive over periods.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gammaln, logsumexp, ndtr, ndtri

from .errors import (
    DataFormatError,
    DegenerateDensityError,
    InvalidParameterError,
    QuadratureAccuracyWarning,
)
from .model import LatentPath, ModelParams

__all__ = [
    "YearlyObservations",
    "AugmentedState",
    "log_joint_density_period",
    "log_likelihood_augmented",
    "log_likelihood_marginal",
    "log_likelihood_default_approx",
    "log_likelihood_recovery_approx",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class YearlyObservations:
    """Per-period default and recovery observations.

    ``avg_recovery`` uses NaN for missing values; a period's recovery is
    missing exactly when it has zero defaults (the average of zero loans
    does not exist).
    """

    years: np.ndarray
    obligors: np.ndarray
    defaults: np.ndarray
    avg_recovery: np.ndarray

    def __post_init__(self):
        years = np.atleast_1d(np.asarray(self.years, dtype=int))
        obligors = np.atleast_1d(np.asarray(self.obligors, dtype=int))
        defaults = np.atleast_1d(np.asarray(self.defaults, dtype=int))
        recovery = np.atleast_1d(np.asarray(self.avg_recovery, dtype=float))
        n = years.size
        if n < 1:
            raise DataFormatError("need at least one period")
        if not (obligors.size == defaults.size == recovery.size == n):
            raise DataFormatError("per-period arrays must have equal length")
        if np.unique(years).size != n:
            raise DataFormatError("duplicate years in dataset")
        if np.any(obligors < 1):
            raise DataFormatError("each period needs at least one obligor")
        if np.any(defaults < 0) or np.any(defaults > obligors):
            raise DataFormatError("defaults must satisfy 0 <= d_t <= J_t")
        has_rec = ~np.isnan(recovery)
        if np.any(has_rec & (defaults == 0)):
            raise DataFormatError("recovery present in a period with zero defaults")
        if np.any(~has_rec & (defaults > 0)):
            raise DataFormatError("recovery missing in a period with defaults")
        if np.any(np.isinf(recovery)):
            raise DataFormatError("recovery values must be finite")
        for name, arr in (
            ("years", years),
            ("obligors", obligors),
            ("defaults", defaults),
            ("avg_recovery", recovery),
        ):
            object.__setattr__(self, name, arr)

    @property
    def n_periods(self) -> int:
        return int(self.years.size)

    @property
    def default_rates(self) -> np.ndarray:
        return self.defaults / self.obligors

    @property
    def has_recovery(self) -> np.ndarray:
        return ~np.isnan(self.avg_recovery)

    def __len__(self) -> int:
        return self.n_periods


@dataclass(frozen=True, eq=False)
class AugmentedState:
    """Model parameters plus the latent factor path, gamma = (theta, X)."""

    params: ModelParams
    latent: LatentPath

    def check_length(self, data: YearlyObservations) -> None:
        if len(self.latent) != data.n_periods:
            raise InvalidParameterError(
                f"latent path length {len(self.latent)} != T={data.n_periods}"
            )


def _default_logdensity(lam, obligors, defaults, exact_binomial):
    """Log density of the default count given the conditional PD lam.

    Normal approximation N(J lam, J lam (1-lam)) by default; exact binomial
    behind the flag.  Degenerate lam (0 or 1 after floating-point rounding)
    yields -inf rather than raising, so samplers can treat such proposals
    as out of support.
    """
    lam = np.asarray(lam, dtype=float)
    obligors = np.asarray(obligors, dtype=float)
    defaults = np.asarray(defaults, dtype=float)
    ok = (lam > 0.0) & (lam < 1.0)
    safe_lam = np.where(ok, lam, 0.5)
    if exact_binomial:
        out = (
            gammaln(obligors + 1.0)
            - gammaln(defaults + 1.0)
            - gammaln(obligors - defaults + 1.0)
            + defaults * np.log(safe_lam)
            + (obligors - defaults) * np.log1p(-safe_lam)
        )
    else:
        mean = obligors * safe_lam
        var = mean * (1.0 - safe_lam)
        out = -0.5 * (_LOG_2PI + np.log(var)) - (defaults - mean) ** 2 / (2.0 * var)
    return np.where(ok, out, -np.inf)


def _recovery_logdensity(mu_r, var_r, avg_recovery):
    return -0.5 * (_LOG_2PI + np.log(var_r)) - (avg_recovery - mu_r) ** 2 / (2.0 * var_r)


def _period_terms_arrays(
    p, rho, mu, sigma, omega, x, obligors, defaults, recovery, has, exact_binomial=False
):
    """Vector of per-period log joint densities f(d_t, rbar_t | x_t, theta).

    Takes plain pre-extracted arrays so the MCMC hot loop can reuse it
    without per-call dataclass overhead; ``has`` marks periods carrying a
    recovery observation.
    """
    x = np.asarray(x, dtype=float)
    gamma = ndtri(p)
    lam = ndtr((gamma - math.sqrt(rho) * x) / math.sqrt(1.0 - rho))
    terms = _default_logdensity(lam, obligors, defaults, exact_binomial)
    if has.any():
        mu_r = mu + sigma * math.sqrt(omega) * x[has]
        var_r = sigma * sigma * (1.0 - omega) / defaults[has]
        terms[has] += _recovery_logdensity(mu_r, var_r, recovery[has])
    return terms


def _period_terms(p, rho, mu, sigma, omega, x, data: YearlyObservations, exact_binomial=False):
    return _period_terms_arrays(
        p, rho, mu, sigma, omega, x,
        data.obligors, data.defaults, data.avg_recovery, data.has_recovery,
        exact_binomial,
    )


def log_joint_density_period(
    params: ModelParams,
    x: float,
    obligors: int,
    defaults: int,
    avg_recovery: float | None = None,
    *,
    exact_binomial: bool = False,
) -> float:
    """Log joint density of one period's (d_t, rbar_t) given x_t and theta.

    The default count uses the large-portfolio normal approximation with
    mean J Lambda(x) and variance J Lambda(x)(1 - Lambda(x)) unless
    ``exact_binomial`` is set; the recovery term is normal with mean
    mu + sigma sqrt(omega) x and variance sigma^2 (1-omega)/d_t and is
    omitted for periods without defaults.
    """
    if defaults >= 1 and (params.omega >= 1.0 or params.sigma <= 0.0):
        raise DegenerateDensityError(
            "recovery density has zero variance (omega = 1 or sigma = 0)"
        )
    rec = np.nan if (avg_recovery is None or defaults == 0) else float(avg_recovery)
    if defaults >= 1 and math.isnan(rec):
        raise DataFormatError("recovery observation required when defaults >= 1")
    data = YearlyObservations(
        years=np.array([0]),
        obligors=np.array([obligors]),
        defaults=np.array([defaults]),
        avg_recovery=np.array([rec]),
    )
    return float(
        _period_terms(
            params.p, params.rho, params.mu, params.sigma, params.omega,
            np.array([x]), data, exact_binomial,
        )[0]
    )


def log_likelihood_augmented(
    state: AugmentedState,
    data: YearlyObservations,
    *,
    exact_binomial: bool = False,
) -> float:
    """Joint log likelihood of all periods given the augmented state.

    Additive over periods by construction (independence across time);
    summation runs in ascending t so results are bit-reproducible.
    """
    state.check_length(data)
    p = state.params
    if np.any(data.has_recovery) and (p.omega >= 1.0 or p.sigma <= 0.0):
        raise DegenerateDensityError(
            "recovery density has zero variance (omega = 1 or sigma = 0)"
        )
    terms = _period_terms(
        p.p, p.rho, p.mu, p.sigma, p.omega, state.latent.x, data, exact_binomial
    )
    return float(np.sum(terms))


@lru_cache(maxsize=8)
def _hermite_rule(nodes: int):
    u, w = np.polynomial.hermite.hermgauss(nodes)
    # Rewrites int g(x) phi(x) dx as sum over scaled physicists' nodes.
    return u * math.sqrt(2.0), np.log(w) - 0.5 * math.log(math.pi)


def _marginal_value(params: ModelParams, data: YearlyObservations, nodes, exact_binomial):
    x, logw = _hermite_rule(nodes)
    total = 0.0
    for t in range(data.n_periods):
        period = YearlyObservations(
            years=data.years[t : t + 1],
            obligors=data.obligors[t : t + 1],
            defaults=data.defaults[t : t + 1],
            avg_recovery=data.avg_recovery[t : t + 1],
        )
        tiled = YearlyObservations(
            years=np.arange(nodes),
            obligors=np.full(nodes, period.obligors[0]),
            defaults=np.full(nodes, period.defaults[0]),
            avg_recovery=np.full(nodes, period.avg_recovery[0]),
        )
        terms = _period_terms(
            params.p, params.rho, params.mu, params.sigma, params.omega,
            x, tiled, exact_binomial,
        )
        total += float(logsumexp(logw + terms))
    return total


def log_likelihood_marginal(
    params: ModelParams,
    data: YearlyObservations,
    nodes: int = 64,
    *,
    exact_binomial: bool = False,
    check_convergence: bool = True,
) -> float:
    """Log likelihood with the latent factor integrated out by quadrature.

    Each period's integral over x uses Gauss-Hermite nodes evaluated in the
    log domain with max-subtraction, then the per-period logs are summed.
    When ``check_convergence`` is on, the value is re-computed with twice
    the nodes and a QuadratureAccuracyWarning is emitted if the two differ
    by more than 1e-6.
    """
    if nodes < 8:
        raise InvalidParameterError(f"need at least 8 quadrature nodes, got {nodes}")
    if np.any(data.has_recovery) and (params.omega >= 1.0 or params.sigma <= 0.0):
        raise DegenerateDensityError(
            "recovery density has zero variance (omega = 1 or sigma = 0)"
        )
    value = _marginal_value(params, data, nodes, exact_binomial)
    if check_convergence:
        refined = _marginal_value(params, data, 2 * nodes, exact_binomial)
        if not math.isclose(value, refined, rel_tol=0.0, abs_tol=1e-6):
            warnings.warn(
                f"quadrature not converged: |L({nodes}) - L({2 * nodes})| = "
                f"{abs(value - refined):.3e} > 1e-6",
                QuadratureAccuracyWarning,
                stacklevel=2,
            )
    return value


def transformed_default_rates(data: YearlyObservations) -> np.ndarray:
    """delta_t = Phi^-1(d_t / J_t); requires every rate strictly inside (0,1)."""
    psi = data.default_rates
    if np.any(psi <= 0.0) or np.any(psi >= 1.0):
        raise DataFormatError(
            "default rate of 0 or 1 leaves the probit transform undefined"
        )
    return ndtri(psi)


def log_likelihood_default_approx(p: float, rho: float, data: YearlyObservations) -> float:
    """Approximate default-process log likelihood in the transformed rates.

    Treats delta_t = Phi^-1(psi_t) as directly observed (exact in the
    large-portfolio limit) and sums the log density of delta_t implied by
    the one-factor default model.
    """
    if not 0.0 < p < 1.0:
        raise InvalidParameterError(f"p must be in (0,1), got {p}")
    if rho <= 0.0 or rho >= 1.0:
        raise DegenerateDensityError(
            f"default-rate density degenerates unless 0 < rho < 1, got {rho}"
        )
    delta = transformed_default_rates(data)
    gamma = float(ndtri(p))
    quad = gamma * gamma + (1.0 - 2.0 * rho) * delta**2
    quad -= 2.0 * math.sqrt(1.0 - rho) * gamma * delta
    terms = 0.5 * math.log((1.0 - rho) / rho) - quad / (2.0 * rho)
    return float(np.sum(terms))


def log_likelihood_recovery_approx(
    mu: float,
    sigma: float,
    omega: float,
    latent: LatentPath,
    data: YearlyObservations,
) -> float:
    """Recovery-process log likelihood conditional on a latent path.

    Periods without defaults carry no recovery observation and are skipped.
    """
    if sigma <= 0.0 or not 0.0 <= omega < 1.0:
        raise DegenerateDensityError(
            f"recovery density needs sigma > 0 and omega in [0,1), got "
            f"sigma={sigma}, omega={omega}"
        )
    if len(latent) != data.n_periods:
        raise InvalidParameterError(
            f"latent path length {len(latent)} != T={data.n_periods}"
        )
    has = data.has_recovery
    if not np.any(has):
        return 0.0
    d = data.defaults[has].astype(float)
    resid = data.avg_recovery[has] - mu - sigma * math.sqrt(omega) * latent.x[has]
    var = sigma * sigma * (1.0 - omega)
    terms = 0.5 * np.log(d / (2.0 * math.pi * var)) - d * resid**2 / (2.0 * var)
    return float(np.sum(terms))
