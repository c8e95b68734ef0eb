"""Single-component Metropolis-Hastings over (theta, X_1..X_T).

The target is the augmented posterior: joint likelihood of the yearly data
times independent uniform priors on the five model parameters and a
standard-normal prior on each latent factor.  Parameter components propose
from a Gaussian random walk truncated to the prior bounds, which makes the
proposal asymmetric, so the acceptance ratio carries the Hastings
correction (the ratio of truncation normalizers).  Latent components use a
plain symmetric Gaussian walk.

A run has three stages: step-size tuning toward the 0.234 acceptance
target (adaptation frozen afterwards so the remaining chain is a
time-homogeneous Markov chain), burn-in, and sampling.  One iteration
updates every component once, in the fixed order p, rho, mu, sigma,
omega, X_1..X_T.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    DegenerateDensityError,
    InvalidParameterError,
    TuningFailureWarning,
)
from .likelihood import (
    AugmentedState,
    YearlyObservations,
    _period_terms_arrays,
    log_likelihood_augmented,
)
from .model import LatentPath, ModelParams
from .simulate import empirical_quantile

__all__ = [
    "PARAM_NAMES",
    "PriorSpec",
    "ChainConfig",
    "PosteriorSamples",
    "PosteriorSummary",
    "log_posterior",
    "truncated_gaussian_proposal_logdensity",
    "mh_step_component",
    "tune_proposals",
    "run_chain",
    "summarize",
    "summarize_array",
    "stationarity_check",
]

PARAM_NAMES = ("p", "rho", "mu", "sigma", "omega")

_LOG_2PI = math.log(2.0 * math.pi)
_ADAPT_WINDOW = 100
_ADAPT_CLIP = (0.5, 2.0)


@dataclass(frozen=True)
class PriorSpec:
    """Uniform prior bounds (a_k, b_k) per model parameter.

    Defaults cover the full unit interval for p, rho, mu, omega and
    (0.01, 1.0) for sigma.  The latent-factor prior is fixed standard
    normal and is not configurable.
    """

    p: tuple[float, float] = (0.0, 1.0)
    rho: tuple[float, float] = (0.0, 1.0)
    mu: tuple[float, float] = (0.0, 1.0)
    sigma: tuple[float, float] = (0.01, 1.0)
    omega: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        for name in PARAM_NAMES:
            a, b = getattr(self, name)
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise InvalidParameterError(f"prior bounds for {name} need a < b")

    def bounds_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        pairs = [getattr(self, name) for name in PARAM_NAMES]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def contains(self, params: ModelParams) -> bool:
        lo, hi = self.bounds_arrays()
        theta = params.as_array()
        return bool(np.all(theta > lo) and np.all(theta < hi))


@dataclass(frozen=True)
class ChainConfig:
    """Chain lengths, tuning settings, and the RNG seed.

    ``samples`` counts stored post-burn-in states; with ``thin`` > 1 the
    chain advances thin iterations per stored state.  ``initial_rw_sd``
    may be a scalar or a length 5+T vector; None picks 10% of each prior
    width for parameters and 0.5 for latents.  ``hastings_correction`` is
    a test-only switch: disabling it demonstrably biases bounded targets.
    """

    burn_in: int = 20_000
    samples: int = 100_000
    tune_iters: int = 5_000
    target_accept: float = 0.234
    seed: int = 0
    initial_rw_sd: float | np.ndarray | None = None
    thin: int = 1
    hastings_correction: bool = True

    def __post_init__(self):
        if self.samples < 1 or self.thin < 1:
            raise InvalidParameterError("samples and thin must be >= 1")
        if self.burn_in < 0 or self.tune_iters < 0:
            raise InvalidParameterError("burn_in and tune_iters must be >= 0")
        if not 0.0 < self.target_accept < 1.0:
            raise InvalidParameterError("target_accept must be in (0,1)")


@dataclass(frozen=True, eq=False)
class PosteriorSamples:
    """Stored chain states plus per-component chain metadata."""

    draws: np.ndarray
    acceptance_rates: np.ndarray
    tuned_rw_sd: np.ndarray
    seed: int
    thin: int = 1

    @property
    def n_draws(self) -> int:
        return int(self.draws.shape[0])

    @property
    def n_latent(self) -> int:
        return int(self.draws.shape[1]) - len(PARAM_NAMES)

    @property
    def column_names(self) -> list[str]:
        return list(PARAM_NAMES) + [f"x{t + 1}" for t in range(self.n_latent)]

    @property
    def theta(self) -> np.ndarray:
        return self.draws[:, : len(PARAM_NAMES)]

    def column(self, name: str) -> np.ndarray:
        names = self.column_names
        if name not in names:
            raise InvalidParameterError(f"unknown column {name!r}")
        return self.draws[:, names.index(name)]


@dataclass(frozen=True)
class PosteriorSummary:
    """Location/shape statistics of one posterior quantity."""

    mode: float
    mean: float
    stdev: float
    skewness: float
    kurtosis: float
    cv: float
    q25: float
    q50: float
    q75: float


def log_posterior(
    state: AugmentedState, data: YearlyObservations, prior: PriorSpec
) -> float:
    """Unnormalized log posterior; -inf outside the prior support.

    Sum of the augmented log likelihood and the standard-normal log prior
    of the latent path; the flat-parameter prior contributes a constant
    that is dropped.
    """
    if not prior.contains(state.params):
        return -math.inf
    x = state.latent.x
    latent_prior = float(-0.5 * np.sum(x * x) - 0.5 * _LOG_2PI * x.size)
    return log_likelihood_augmented(state, data) + latent_prior


def _truncation_mass(center: float, sd: float, a: float, b: float) -> float:
    return float(ndtr((b - center) / sd) - ndtr((a - center) / sd))


def truncated_gaussian_proposal_logdensity(
    from_: float, to: float, sd: float, a: float, b: float
) -> float:
    """Log density of the bounded random-walk proposal q(to | from).

    Gaussian with mean ``from_`` and deviation ``sd``, renormalized to the
    truncation window [a, b].  With an unbounded window this reduces to
    the plain Gaussian log density.
    """
    if sd <= 0.0:
        raise InvalidParameterError(f"proposal sd must be > 0, got {sd}")
    if not a < b:
        raise InvalidParameterError(f"need a < b, got a={a}, b={b}")
    if not a <= to <= b:
        raise InvalidParameterError(f"proposal target {to} outside [{a}, {b}]")
    mass = _truncation_mass(from_, sd, a, b)
    if mass <= 0.0:
        raise DegenerateDensityError(
            f"truncation window [{a}, {b}] carries no proposal mass from {from_}"
        )
    z = (to - from_) / sd
    return -0.5 * z * z - 0.5 * _LOG_2PI - math.log(sd) - math.log(mass)


def _sample_truncated(
    rng: np.random.Generator, center: float, sd: float, a: float, b: float
) -> float:
    """Inverse-CDF draw from N(center, sd^2) restricted to (a, b)."""
    fa = float(ndtr((a - center) / sd))
    fb = float(ndtr((b - center) / sd))
    if fb - fa <= 0.0:
        raise DegenerateDensityError(
            f"truncation window [{a}, {b}] carries no proposal mass from {center}"
        )
    u = rng.uniform()
    return center + sd * float(ndtri(fa + u * (fb - fa)))


def _hastings_logratio(cur: float, prop: float, sd: float, a: float, b: float) -> float:
    # log q(cur|prop) - log q(prop|cur); the Gaussian kernels cancel by
    # symmetry, leaving the ratio of truncation masses.
    return math.log(_truncation_mass(cur, sd, a, b)) - math.log(
        _truncation_mass(prop, sd, a, b)
    )


def mh_step_component(
    state: AugmentedState,
    k: int,
    data: YearlyObservations,
    prior: PriorSpec,
    rw_sd: float,
    rng: np.random.Generator,
    hastings_correction: bool = True,
) -> tuple[AugmentedState, bool]:
    """One Metropolis-Hastings update of component k of (theta, X).

    Components 0..4 are the model parameters (truncated-Gaussian proposal
    on their prior interval, with the Hastings normalizer ratio in the
    acceptance probability); components 5..5+T-1 are latent factors
    (symmetric Gaussian proposal).  Returns the new state and whether the
    proposal was accepted.
    """
    n_par = len(PARAM_NAMES)
    t = len(state.latent)
    if not 0 <= k < n_par + t:
        raise InvalidParameterError(f"component index {k} out of range")
    cur_lp = log_posterior(state, data, prior)
    if k < n_par:
        a, b = getattr(prior, PARAM_NAMES[k])
        cur = float(state.params.as_array()[k])
        prop = _sample_truncated(rng, cur, rw_sd, a, b)
        theta = state.params.as_array()
        theta[k] = prop
        if not a < prop < b:
            return state, False
        try:
            new_params = ModelParams.from_array(theta)
        except InvalidParameterError:
            return state, False
        new_state = AugmentedState(params=new_params, latent=state.latent)
        extra = _hastings_logratio(cur, prop, rw_sd, a, b) if hastings_correction else 0.0
    else:
        x = state.latent.x.copy()
        x[k - n_par] += rw_sd * rng.standard_normal()
        new_state = AugmentedState(params=state.params, latent=LatentPath(x))
        extra = 0.0
    new_lp = log_posterior(new_state, data, prior)
    u = rng.uniform()
    if new_lp == -math.inf:
        return state, False
    dlog = new_lp - cur_lp + extra
    if dlog >= 0.0 or (u > 0.0 and math.log(u) < dlog):
        return new_state, True
    return state, False


class _Engine:
    """Mutable chain state with cached per-period likelihood terms."""

    def __init__(self, data, prior, config, fixed=None):
        self.data = data
        self.prior = prior
        self.config = config
        self.t = data.n_periods
        self.n_par = len(PARAM_NAMES)
        self.dim = self.n_par + self.t
        self.lo, self.hi = prior.bounds_arrays()
        self.rng = np.random.default_rng(
            np.random.SeedSequence(entropy=int(config.seed))
        )
        self._obligors = data.obligors.astype(float)
        self._defaults = data.defaults.astype(float)
        self._recovery = data.avg_recovery.copy()
        self._has = data.has_recovery.copy()

        fixed = dict(fixed or {})
        self.fixed_x = "x" in fixed
        x_fix = fixed.pop("x", None)
        for name in fixed:
            if name not in PARAM_NAMES:
                raise InvalidParameterError(f"unknown fixed component {name!r}")
        self.update_param = np.array([name not in fixed for name in PARAM_NAMES])

        # Initial state: parameters uniform on their prior interval, latents
        # at the prior mean; fixed components override afterwards.
        self.theta = self.lo + (self.hi - self.lo) * self.rng.uniform(size=self.n_par)
        for i, name in enumerate(PARAM_NAMES):
            if name in fixed:
                self.theta[i] = float(fixed[name])
        self.x = np.zeros(self.t)
        if self.fixed_x:
            x_fix = np.asarray(x_fix, dtype=float)
            if x_fix.size != self.t:
                raise InvalidParameterError(
                    f"fixed latent path length {x_fix.size} != T={self.t}"
                )
            self.x = x_fix.copy()

        self.rw = self._initial_rw()
        self.terms = self._terms(self.theta, self.x)
        self.accept_counts = np.zeros(self.dim, dtype=int)
        self.proposal_counts = np.zeros(self.dim, dtype=int)

    def _initial_rw(self):
        cfg = self.config.initial_rw_sd
        if cfg is None:
            rw = np.empty(self.dim)
            rw[: self.n_par] = 0.1 * (self.hi - self.lo)
            rw[self.n_par :] = 0.5
            return rw
        rw = np.broadcast_to(np.asarray(cfg, dtype=float), (self.dim,)).copy()
        if np.any(rw <= 0.0):
            raise InvalidParameterError("initial_rw_sd entries must be > 0")
        return rw

    def _terms(self, theta, x):
        return _period_terms_arrays(
            theta[0], theta[1], theta[2], theta[3], theta[4], x,
            self._obligors, self._defaults, self._recovery, self._has,
        )

    def _update_param(self, k):
        a, b, cur, sd = self.lo[k], self.hi[k], self.theta[k], self.rw[k]
        prop = _sample_truncated(self.rng, cur, sd, a, b)
        self.proposal_counts[k] += 1
        u = self.rng.uniform()
        if not a < prop < b:
            return
        theta_new = self.theta.copy()
        theta_new[k] = prop
        new_terms = self._terms(theta_new, self.x)
        dlog = float(np.sum(new_terms) - np.sum(self.terms))
        if self.config.hastings_correction:
            dlog += _hastings_logratio(cur, prop, sd, a, b)
        if dlog >= 0.0 or (u > 0.0 and math.log(u) < dlog):
            self.theta = theta_new
            self.terms = new_terms
            self.accept_counts[k] += 1

    def _update_latent(self):
        sd = self.rw[self.n_par :]
        prop = self.x + sd * self.rng.standard_normal(self.t)
        u = self.rng.uniform(size=self.t)
        new_terms = self._terms(self.theta, prop)
        dlog = (new_terms - self.terms) + 0.5 * (self.x**2 - prop**2)
        with np.errstate(divide="ignore", invalid="ignore"):
            acc = (dlog >= 0.0) | (np.log(u) < dlog)
        self.proposal_counts[self.n_par :] += 1
        if acc.any():
            self.x[acc] = prop[acc]
            self.terms[acc] = new_terms[acc]
            self.accept_counts[self.n_par :][acc] += 1

    def sweep(self):
        for k in range(self.n_par):
            if self.update_param[k]:
                self._update_param(k)
        if not self.fixed_x:
            self._update_latent()

    def reset_counters(self):
        rates = self.rates()
        self.accept_counts[:] = 0
        self.proposal_counts[:] = 0
        return rates

    def rates(self):
        with np.errstate(invalid="ignore"):
            return np.where(
                self.proposal_counts > 0,
                self.accept_counts / np.maximum(self.proposal_counts, 1),
                np.nan,
            )

    def tune(self, iters):
        """Adaptive stage: rescale step sizes every _ADAPT_WINDOW sweeps."""
        last_rates = np.full(self.dim, np.nan)
        done = 0
        while done < iters:
            chunk = min(_ADAPT_WINDOW, iters - done)
            for _ in range(chunk):
                self.sweep()
            done += chunk
            rates = self.reset_counters()
            factor = np.clip(
                np.exp(rates - self.config.target_accept), *_ADAPT_CLIP
            )
            updated = ~np.isnan(rates)
            self.rw[updated] *= factor[updated]
            last_rates[updated] = rates[updated]
        usable = ~np.isnan(last_rates)
        if usable.any() and (
            np.any(last_rates[usable] < 0.10) or np.any(last_rates[usable] > 0.45)
        ):
            bad = [
                f"component {i} rate {last_rates[i]:.3f} sd {self.rw[i]:.3g}"
                for i in np.flatnonzero(usable)
                if not 0.10 <= last_rates[i] <= 0.45
            ]
            warnings.warn(
                "tuning ended outside the [0.10, 0.45] acceptance band: "
                + "; ".join(bad),
                TuningFailureWarning,
                stacklevel=3,
            )
        return last_rates

    def state_vector(self):
        return np.concatenate([self.theta, self.x])


def tune_proposals(
    config: ChainConfig, data: YearlyObservations, prior: PriorSpec, fixed=None
) -> np.ndarray:
    """Run the adaptive stage alone and return per-component step sizes."""
    if config.tune_iters < 500:
        raise InvalidParameterError("tune_iters must be >= 500 for tuning")
    engine = _Engine(data, prior, config, fixed=fixed)
    engine.tune(config.tune_iters)
    return engine.rw.copy()


def run_chain(
    data: YearlyObservations,
    prior: PriorSpec | None = None,
    config: ChainConfig | None = None,
    fixed: dict | None = None,
) -> PosteriorSamples:
    """Tune, burn in, and sample the augmented posterior.

    ``fixed`` pins named components ("p", "rho", "mu", "sigma", "omega",
    or "x" with a full path) at given values, which both the reduced-model
    validation and conditional analyses use.  Deterministic for a fixed
    seed; a stored row is one full-sweep state.
    """
    prior = prior or PriorSpec()
    config = config or ChainConfig()
    engine = _Engine(data, prior, config, fixed=fixed)
    if config.tune_iters > 0:
        engine.tune(config.tune_iters)
    for _ in range(config.burn_in):
        engine.sweep()
    engine.reset_counters()
    out = np.empty((config.samples, engine.dim))
    for i in range(config.samples):
        for _ in range(config.thin):
            engine.sweep()
        out[i] = engine.state_vector()
    return PosteriorSamples(
        draws=out,
        acceptance_rates=engine.rates(),
        tuned_rw_sd=engine.rw.copy(),
        seed=config.seed,
        thin=config.thin,
    )


def summarize_array(values: np.ndarray) -> PosteriorSummary:
    """Summary statistics of a sample vector (see ``summarize``)."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 1000:
        raise InvalidParameterError(f"need >= 1000 draws to summarize, got {n}")
    mean = float(values.mean())
    stdev = float(values.std(ddof=1))
    centered = values - mean
    m2 = float(np.mean(centered**2))
    if m2 > 0.0:
        skew = float(np.mean(centered**3)) / m2**1.5
        kurt = float(np.mean(centered**4)) / m2**2
    else:
        skew = 0.0
        kurt = 0.0
    cv = stdev / mean if mean != 0.0 else math.nan
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        counts, edges = np.histogram(values, bins=100, range=(lo, hi))
        top = int(np.argmax(counts))
        mode = 0.5 * (edges[top] + edges[top + 1])
    else:
        mode = lo
    return PosteriorSummary(
        mode=mode,
        mean=mean,
        stdev=stdev,
        skewness=skew,
        kurtosis=kurt,
        cv=cv,
        q25=empirical_quantile(values, 0.25),
        q50=empirical_quantile(values, 0.50),
        q75=empirical_quantile(values, 0.75),
    )


def summarize(samples: PosteriorSamples, quantity: str) -> PosteriorSummary:
    """Mode, moments, CV, and quartiles of one stored chain column.

    The mode is the midpoint of the tallest of 100 equal-width histogram
    bins over the sample range; kurtosis is the raw standardized fourth
    moment (3 for a normal); quartiles are plain order statistics.
    """
    return summarize_array(samples.column(quantity))


def stationarity_check(
    samples: PosteriorSamples, n_batches: int = 20
) -> dict[str, float]:
    """First-half vs second-half mean z-scores from batch-mean errors.

    A well-mixed stationary chain keeps |z| small (the tests use 3 as the
    bar); large values flag trending or slow mixing.
    """
    out = {}
    for name in samples.column_names:
        v = samples.column(name)
        half = v.size // 2
        z = _halves_zscore(v[:half], v[half : 2 * half], n_batches)
        out[name] = z
    return out


def _halves_zscore(first, second, n_batches):
    def batch_se(v):
        usable = (v.size // n_batches) * n_batches
        means = v[:usable].reshape(n_batches, -1).mean(axis=1)
        return means.mean(), means.std(ddof=1) / math.sqrt(n_batches)

    m1, se1 = batch_se(first)
    m2, se2 = batch_se(second)
    denom = math.hypot(se1, se2)
    if denom == 0.0:
        return 0.0
    return (m1 - m2) / denom
