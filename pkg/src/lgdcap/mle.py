"""Two-stage approximate maximum likelihood estimation.

Stage one fits the default process: the probit-transformed default rates
delta_t = Phi^-1(d_t/J_t) are normal under the model, giving closed-form
estimates of (p, rho) and a back-out of the latent factor path.  Stage two
fits the recovery process "feasibly": sigma is pinned to the historical
volatility of the yearly average recoveries, then (mu, omega) maximize the
recovery likelihood conditional on sigma and the backed-out factors.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import ndtr, ndtri

from .errors import (
    BoundarySolutionWarning,
    DegenerateDensityError,
    InvalidParameterError,
    LatentUnidentifiedError,
)
from .likelihood import (
    YearlyObservations,
    log_likelihood_recovery_approx,
    transformed_default_rates,
)
from .model import (
    LatentPath,
    ModelParams,
    conditional_default_prob,
    conditional_loss_rate,
    norm_ppf,
)

__all__ = [
    "DefaultFit",
    "MleFit",
    "fit_default_closed_form",
    "backout_latent",
    "fit_recovery_feasible",
    "fit_mle",
    "mle_capital_report",
]

# Upper edge of the omega search; 1 itself is a zero-variance singularity.
_OMEGA_MAX = 1.0 - 1e-6
_N_STARTS = 16


@dataclass(frozen=True, eq=False)
class DefaultFit:
    """Closed-form default-process estimates and the delta statistics."""

    p_hat: float
    rho_hat: float
    delta: np.ndarray
    delta_bar: float
    delta_var: float


@dataclass(frozen=True, eq=False)
class MleFit:
    """Full two-stage fit: parameters, latent path, and fit statistics."""

    params: ModelParams
    latent_hat: LatentPath
    delta: np.ndarray
    delta_bar: float
    delta_var: float
    sigma_hist: float


def fit_default_closed_form(data: YearlyObservations) -> DefaultFit:
    """Closed-form MLEs of (p, rho) from the transformed default rates.

    rho_hat = s2/(1+s2) and p_hat = Phi(mean(delta)/sqrt(1+s2)), where s2
    is the 1/T-normalized sample variance of delta (the ML variance, which
    is what makes the closed forms exact maximizers).
    """
    delta = transformed_default_rates(data)
    delta_bar = float(delta.mean())
    delta_var = float(((delta - delta_bar) ** 2).mean())
    rho_hat = delta_var / (1.0 + delta_var)
    p_hat = float(ndtr(delta_bar / math.sqrt(1.0 + delta_var)))
    return DefaultFit(
        p_hat=p_hat, rho_hat=rho_hat, delta=delta,
        delta_bar=delta_bar, delta_var=delta_var,
    )


def backout_latent(p_hat: float, rho_hat: float, delta) -> LatentPath:
    """Invert the conditional default probability for the factor path.

    x_t = (Phi^-1(p) - sqrt(1-rho) delta_t) / sqrt(rho); undefined at
    rho = 0, where the factor drops out of the model.
    """
    if rho_hat <= 0.0:
        raise LatentUnidentifiedError(
            "rho estimate is 0: the systematic factor is unidentified"
        )
    gamma = float(ndtri(p_hat))
    delta = np.asarray(delta, dtype=float)
    return LatentPath((gamma - math.sqrt(1.0 - rho_hat) * delta) / math.sqrt(rho_hat))


def _profiled_mu(omega, sigma, data, latent):
    """Exact maximizer of the recovery likelihood over mu at fixed omega."""
    has = data.has_recovery
    d = data.defaults[has].astype(float)
    adj = data.avg_recovery[has] - sigma * math.sqrt(omega) * latent.x[has]
    return float(np.sum(d * adj) / np.sum(d))


def fit_recovery_feasible(
    data: YearlyObservations, latent_hat: LatentPath
) -> tuple[float, float, float]:
    """Two-step recovery fit: historical sigma, then (mu, omega).

    sigma is the 1/(T-1) sample standard deviation of the observed yearly
    average recoveries.  The (mu, omega) maximization profiles mu out in
    closed form and runs 16 bounded derivative-free searches over omega
    sub-intervals (golden section with parabolic refinement), keeping the
    lowest-omega optimum among ties within 1e-12 log-likelihood.
    """
    has = data.has_recovery
    if int(has.sum()) < 2:
        raise InvalidParameterError("need at least 2 periods with recovery data")
    if len(latent_hat) != data.n_periods:
        raise InvalidParameterError(
            f"latent path length {len(latent_hat)} != T={data.n_periods}"
        )
    rec = data.avg_recovery[has]
    sigma_hist = float(np.std(rec, ddof=1))
    if sigma_hist <= 0.0:
        raise DegenerateDensityError(
            "historical recovery volatility is 0 (all averages identical)"
        )

    def loglik_at(omega: float) -> float:
        mu = _profiled_mu(omega, sigma_hist, data, latent_hat)
        return log_likelihood_recovery_approx(mu, sigma_hist, omega, latent_hat, data)

    candidates = [0.0, _OMEGA_MAX]
    edges = np.linspace(0.0, _OMEGA_MAX, _N_STARTS + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        res = minimize_scalar(
            lambda w: -loglik_at(w), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-10},
        )
        candidates.append(float(res.x))
    values = np.array([loglik_at(w) for w in candidates])
    best = values.max()
    # Deterministic tie-break: smallest omega among near-equal optima.
    omega_hat = min(w for w, v in zip(candidates, values) if v >= best - 1e-12)
    mu_hat = _profiled_mu(omega_hat, sigma_hist, data, latent_hat)
    if omega_hat >= _OMEGA_MAX - 1e-8:
        warnings.warn(
            f"omega estimate {omega_hat:.8f} sits on the search boundary",
            BoundarySolutionWarning,
            stacklevel=2,
        )
    return mu_hat, sigma_hist, omega_hat


def fit_mle(data: YearlyObservations) -> MleFit:
    """Run both stages and assemble the fitted parameter vector."""
    stage1 = fit_default_closed_form(data)
    latent_hat = backout_latent(stage1.p_hat, stage1.rho_hat, stage1.delta)
    mu_hat, sigma_hist, omega_hat = fit_recovery_feasible(data, latent_hat)
    params = ModelParams(
        p=stage1.p_hat, rho=stage1.rho_hat, mu=mu_hat,
        sigma=sigma_hist, omega=omega_hat,
    )
    return MleFit(
        params=params, latent_hat=latent_hat, delta=stage1.delta,
        delta_bar=stage1.delta_bar, delta_var=stage1.delta_var,
        sigma_hist=sigma_hist,
    )


def mle_capital_report(fit, alpha: float = 0.999) -> tuple[float, float, float]:
    """Stressed (PD, LGD, EC) at the fitted parameters.

    The stress point is the systematic factor at its 1-alpha quantile;
    EC is PD times LGD there.  Accepts an MleFit or bare ModelParams.
    """
    params = fit.params if isinstance(fit, MleFit) else fit
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must be in (0,1), got {alpha}")
    x_stress = float(norm_ppf(1.0 - alpha))
    pd_stress = conditional_default_prob(params, x_stress)
    lgd_stress = conditional_loss_rate(params, x_stress)
    return pd_stress, lgd_stress, pd_stress * lgd_stress
