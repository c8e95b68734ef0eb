"""Core model types and closed-form conditional quantities.

The portfolio loss model couples a one-factor default process with a
recovery process driven by the same systematic factor X:

    C_j = sqrt(rho) X + sqrt(1 - rho) Z^C_j        (default if C_j < Phi^-1(p))
    V_j = mu + sigma sqrt(omega) X + sigma sqrt(1 - omega) Z_j
    R_j = link(V_j)

Everything here is a pure function of its inputs; no shared mutable state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, ndtr, ndtri

from .errors import InvalidParameterError, NumericRangeError

__all__ = [
    "ModelParams",
    "Portfolio",
    "LatentPath",
    "RECOVERY_LINKS",
    "norm_cdf",
    "norm_ppf",
    "norm_logpdf",
    "conditional_default_prob",
    "conditional_loss_rate",
    "limiting_loss",
    "analytic_limit_quantile",
    "apply_recovery_link",
]

RECOVERY_LINKS = ("identity", "logit", "exp")

# Largest argument for which exp() stays inside double range.
_EXP_MAX = math.log(np.finfo(float).max)


def norm_cdf(x):
    """Standard normal CDF (absolute error well below 1e-12)."""
    return ndtr(x)


def norm_ppf(q):
    """Standard normal quantile function."""
    return ndtri(q)


def norm_logpdf(x, mean=0.0, sd=1.0):
    """Log density of N(mean, sd^2)."""
    z = (np.asarray(x, dtype=float) - mean) / sd
    out = -0.5 * z * z - 0.5 * math.log(2.0 * math.pi) - np.log(sd)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class ModelParams:
    """Five-parameter vector of the default/recovery model.

    Attributes
    ----------
    p : float
        Per-period probability of default, in (0, 1).
    rho : float
        Asset correlation, in [0, 1).  rho = 1 is rejected (the conditional
        default probability degenerates).
    mu : float
        Mean recovery rate.
    sigma : float
        Recovery volatility, > 0.
    omega : float
        Share of recovery variance driven by the systematic factor, in
        [0, 1].  omega = 1 is legal for simulation but likelihood
        evaluations reject it (zero idiosyncratic recovery variance).
    """

    p: float
    rho: float
    mu: float
    sigma: float
    omega: float

    def __post_init__(self):
        vals = (self.p, self.rho, self.mu, self.sigma, self.omega)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidParameterError(f"non-finite parameter in {vals}")
        if not 0.0 < self.p < 1.0:
            raise InvalidParameterError(f"p must be in (0,1), got {self.p}")
        if not 0.0 <= self.rho < 1.0:
            raise InvalidParameterError(f"rho must be in [0,1), got {self.rho}")
        if not self.sigma > 0.0:
            raise InvalidParameterError(f"sigma must be > 0, got {self.sigma}")
        if not 0.0 <= self.omega <= 1.0:
            raise InvalidParameterError(f"omega must be in [0,1], got {self.omega}")

    @property
    def default_threshold(self) -> float:
        """Latent default barrier Phi^-1(p)."""
        return float(ndtri(self.p))

    def as_array(self) -> np.ndarray:
        """Parameters in canonical order (p, rho, mu, sigma, omega)."""
        return np.array([self.p, self.rho, self.mu, self.sigma, self.omega])

    @classmethod
    def from_array(cls, theta) -> "ModelParams":
        p, rho, mu, sigma, omega = (float(v) for v in theta)
        return cls(p=p, rho=rho, mu=mu, sigma=sigma, omega=omega)


@dataclass(frozen=True, eq=False)
class Portfolio:
    """Loan weights plus the recovery-link / loss-floor configuration.

    ``weights=None`` denotes the infinitely granular (fully diversified)
    portfolio whose loss is the conditional expected loss rate; it is only
    meaningful to the capital estimators.
    """

    weights: np.ndarray | None
    link: str = "identity"
    floor_loss: bool = False

    def __post_init__(self):
        if self.link not in RECOVERY_LINKS:
            raise InvalidParameterError(
                f"link must be one of {RECOVERY_LINKS}, got {self.link!r}"
            )
        if self.weights is None:
            return
        w = np.asarray(self.weights, dtype=float)
        if w.ndim != 1 or w.size < 1:
            raise InvalidParameterError("weights must be a non-empty 1-D vector")
        if not np.all(np.isfinite(w)) or np.any(w < 0.0):
            raise InvalidParameterError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise InvalidParameterError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @classmethod
    def equal(cls, n_loans: int, link: str = "identity", floor_loss: bool = False) -> "Portfolio":
        """Equally weighted portfolio of ``n_loans`` loans."""
        if n_loans < 1:
            raise InvalidParameterError(f"n_loans must be >= 1, got {n_loans}")
        return cls(np.full(n_loans, 1.0 / n_loans), link=link, floor_loss=floor_loss)

    @classmethod
    def limiting(cls, link: str = "identity", floor_loss: bool = False) -> "Portfolio":
        """Infinitely granular portfolio (loss = conditional loss rate)."""
        return cls(None, link=link, floor_loss=floor_loss)

    @property
    def is_limiting(self) -> bool:
        return self.weights is None

    @property
    def n_loans(self) -> int:
        if self.weights is None:
            raise InvalidParameterError("limiting portfolio has no loan count")
        return int(self.weights.size)

    @property
    def equal_weighted(self) -> bool:
        if self.weights is None:
            return True
        return bool(np.ptp(self.weights) == 0.0)


@dataclass(frozen=True, eq=False)
class LatentPath:
    """Systematic-factor values X_1..X_T on the standard-normal scale."""

    x: np.ndarray = field()

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise InvalidParameterError("latent path must be a finite 1-D vector")
        object.__setattr__(self, "x", x)

    def __len__(self) -> int:
        return int(self.x.size)


def conditional_default_prob(params: ModelParams, x):
    """Default probability conditional on the systematic factor.

    Returns Phi[(Phi^-1(p) - sqrt(rho) x) / sqrt(1 - rho)]; strictly
    decreasing in x whenever rho > 0.  Accepts scalar or array x.
    """
    gamma = params.default_threshold
    arg = (gamma - math.sqrt(params.rho) * np.asarray(x, dtype=float)) / math.sqrt(
        1.0 - params.rho
    )
    out = ndtr(arg)
    return out if np.ndim(x) else float(out)


def conditional_loss_rate(params: ModelParams, x):
    """Expected loss rate 1 - mu - sigma sqrt(omega) x conditional on x.

    Uses the linear form (recoveries above 1 are not floored), which is the
    convention the analytic capital figures rely on.
    """
    out = 1.0 - params.mu - params.sigma * math.sqrt(params.omega) * np.asarray(
        x, dtype=float
    )
    return out if np.ndim(x) else float(out)


def limiting_loss(params: ModelParams, x):
    """Loss rate of the infinitely granular portfolio given the factor."""
    out = conditional_default_prob(params, x) * conditional_loss_rate(params, x)
    return out if np.ndim(x) else float(out)


def analytic_limit_quantile(params: ModelParams, alpha: float) -> float:
    """alpha-quantile of the limiting loss, exact by monotonicity.

    The limiting loss decreases in x, so its alpha-quantile is the loss at
    x = Phi^-1(1 - alpha).
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must be in (0,1), got {alpha}")
    return float(limiting_loss(params, ndtri(1.0 - alpha)))


def apply_recovery_link(link: str, v):
    """Map the latent recovery driver V to a recovery rate.

    identity -> v, logit -> e^v/(1+e^v), exp -> e^v.  The exp link raises
    NumericRangeError when e^v overflows double precision.
    """
    if link == "identity":
        return v
    if link == "logit":
        out = expit(v)
        return out if np.ndim(v) else float(out)
    if link == "exp":
        if np.any(np.asarray(v, dtype=float) > _EXP_MAX):
            raise NumericRangeError("exp-link recovery overflows double range")
        out = np.exp(v)
        return out if np.ndim(v) else float(out)
    raise InvalidParameterError(f"link must be one of {RECOVERY_LINKS}, got {link!r}")
