"""Command-line surface: simulate, fit-mle, fit-mcmc, capital, summarize.

Configuration is a flat key=value text file; command-line flags override
file values.  One top-level seed drives every stage through tagged
substreams, so stages stay reproducible independently of each other.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import capital as cap
from . import dataio, mcmc, mle, simulate
from .errors import (
    DataFormatError,
    DegenerateDensityError,
    InvalidParameterError,
    LatentUnidentifiedError,
    NumericRangeError,
)
from .likelihood import YearlyObservations
from .mcmc import PARAM_NAMES, ChainConfig, PosteriorSamples, PriorSpec
from .model import ModelParams, Portfolio
from .seeds import rng_for, substream

__all__ = ["RunConfig", "main", "run_simulate", "run_fit_mle", "run_fit_mcmc", "run_capital"]


class UsageError(ValueError):
    """Bad flags, malformed configuration, or missing required settings."""


@dataclass
class RunConfig:
    """Flat run configuration; every field maps to one config-file key."""

    data: str | None = None
    out: str = "out"
    seed: int = 0
    threads: int = 1
    # dataset simulation
    true_p: float | None = None
    true_rho: float | None = None
    true_mu: float | None = None
    true_sigma: float | None = None
    true_omega: float | None = None
    firm_counts: str = "18x5350"
    first_year: int = 1
    # chain
    burn_in: int = 20_000
    samples: int = 100_000
    tune_iters: int = 5_000
    target_accept: float = 0.234
    thin: int = 1
    prior_p: str = "0,1"
    prior_rho: str = "0,1"
    prior_mu: str = "0,1"
    prior_sigma: str = "0.01,1.0"
    prior_omega: str = "0,1"
    # portfolio / capital
    q: float = 0.999
    n_sim: int = 1_000_000
    n_plot: int = 100_000
    j_list: str = "50,500,5350,inf"
    link: str = "identity"
    floor_loss: bool = False
    weights_file: str | None = None
    reference_ec: float | None = None

    def prior(self) -> PriorSpec:
        def pair(raw, name):
            parts = raw.split(",")
            if len(parts) != 2:
                raise UsageError(f"prior_{name} must be 'low,high', got {raw!r}")
            return float(parts[0]), float(parts[1])

        return PriorSpec(
            p=pair(self.prior_p, "p"),
            rho=pair(self.prior_rho, "rho"),
            mu=pair(self.prior_mu, "mu"),
            sigma=pair(self.prior_sigma, "sigma"),
            omega=pair(self.prior_omega, "omega"),
        )

    def chain_config(self) -> ChainConfig:
        return ChainConfig(
            burn_in=self.burn_in,
            samples=self.samples,
            tune_iters=self.tune_iters,
            target_accept=self.target_accept,
            seed=_stage_seed(self.seed, "mcmc"),
            thin=self.thin,
        )

    def portfolio(self, j) -> Portfolio:
        if self.weights_file is not None:
            w = np.loadtxt(self.weights_file, ndmin=1)
            return Portfolio(w, link=self.link, floor_loss=self.floor_loss)
        if j in ("inf", "Inf", "INF", None):
            return Portfolio.limiting(link=self.link, floor_loss=self.floor_loss)
        return Portfolio.equal(int(j), link=self.link, floor_loss=self.floor_loss)

    def true_params(self) -> ModelParams:
        vals = {
            "p": self.true_p, "rho": self.true_rho, "mu": self.true_mu,
            "sigma": self.true_sigma, "omega": self.true_omega,
        }
        missing = [f"true_{k}" for k, v in vals.items() if v is None]
        if missing:
            raise UsageError(f"simulate needs config keys: {', '.join(missing)}")
        return ModelParams(**vals)

    def firm_count_vector(self) -> np.ndarray:
        raw = self.firm_counts.strip()
        try:
            if "x" in raw:
                t, j = raw.split("x")
                return np.full(int(t), int(j), dtype=int)
            return np.array([int(v) for v in raw.split(",")], dtype=int)
        except ValueError:
            raise UsageError(
                f"firm_counts must be 'TxJ' or a comma list, got {raw!r}"
            ) from None


_BOOL_VALUES = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    ftype = _FIELD_TYPES[key]
    raw = raw.strip()
    if ftype == "bool":
        try:
            return _BOOL_VALUES[raw.lower()]
        except KeyError:
            raise UsageError(f"config key {key}: expected a boolean, got {raw!r}") from None
    try:
        if ftype == "int":
            return int(raw)
        if ftype == "float" or ftype == "float | None":
            return float(raw)
    except ValueError:
        raise UsageError(f"config key {key}: bad value {raw!r}") from None
    return raw


def parse_config_file(path) -> dict:
    """Flat ``key = value`` lines; '#' starts a comment."""
    out = {}
    path = Path(path)
    if not path.exists():
        raise DataFormatError(f"config file not found: {path}")
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise UsageError(f"{path}:{lineno}: unknown config key {key!r}")
        out[key] = _convert(key, raw)
    return out


def _stage_seed(seed: int, tag: str) -> int:
    return int(substream(seed, tag).generate_state(1)[0])


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_simulate(cfg: RunConfig) -> Path:
    """Generate a synthetic dataset plus its truth sidecar."""
    out = _outdir(cfg)
    dataset = simulate.simulate_dataset(
        cfg.true_params(),
        cfg.firm_count_vector(),
        seed=_stage_seed(cfg.seed, "simulate"),
        first_year=cfg.first_year,
    )
    dataio.write_dataset(dataset.observations, out / "dataset.csv")
    dataio.write_truth(dataset.true_params, dataset.true_latent, out / "truth.csv")
    return out / "dataset.csv"


def _load_observations(cfg: RunConfig) -> YearlyObservations:
    if cfg.data is None:
        raise UsageError("missing --data (or config key data=...)")
    return dataio.load_dataset(cfg.data)


def run_fit_mle(cfg: RunConfig) -> mle.MleFit | None:
    """Two-stage fit; writes mle.csv mirroring the point-estimate table.

    A zero rho estimate (constant default rates) leaves the factor path
    unidentified; the default-stage estimates are still reported, with the
    recovery columns empty and a note on stderr.
    """
    data = _load_observations(cfg)
    out = _outdir(cfg)
    header = ["p", "rho", "mu", "sigma", "omega", "PD", "LGD", "EC"]
    try:
        fit = mle.fit_mle(data)
    except LatentUnidentifiedError as exc:
        stage1 = mle.fit_default_closed_form(data)
        dataio.write_table(
            out / "mle.csv",
            header,
            [[stage1.p_hat, stage1.rho_hat, None, None, None, None, None, None]],
        )
        print(f"note: {exc}; recovery stage skipped", file=sys.stderr)
        return None
    pd_s, lgd_s, ec_s = mle.mle_capital_report(fit, alpha=cfg.q)
    dataio.write_table(
        out / "mle.csv",
        header,
        [list(fit.params.as_array()) + [pd_s, lgd_s, ec_s]],
    )
    return fit


def run_fit_mcmc(cfg: RunConfig) -> PosteriorSamples:
    """Tune/burn/sample; writes chain.csv, summary.csv, diagnostics.txt."""
    data = _load_observations(cfg)
    out = _outdir(cfg)
    samples = mcmc.run_chain(data, cfg.prior(), cfg.chain_config())
    dataio.write_chain(samples, out / "chain.csv")
    _write_summary(samples, out / "summary.csv")
    _write_diagnostics(samples, out / "diagnostics.txt")
    return samples


def _write_summary(samples: PosteriorSamples, path) -> None:
    rows = []
    for name in samples.column_names:
        s = mcmc.summarize(samples, name)
        rows.append(
            [name, s.mode, s.mean, s.stdev, s.skewness, s.kurtosis, s.cv,
             s.q25, s.q50, s.q75]
        )
    dataio.write_table(
        path,
        ["quantity", "mode", "mean", "stdev", "skewness", "kurtosis", "cv",
         "q25", "q50", "q75"],
        rows,
    )


def _write_diagnostics(samples: PosteriorSamples, path) -> None:
    z = mcmc.stationarity_check(samples)
    lines = [
        f"seed={samples.seed}",
        f"stored_draws={samples.n_draws}",
        f"thin={samples.thin}",
        "",
        "component  acceptance_rate  tuned_rw_sd  halves_zscore",
    ]
    for i, name in enumerate(samples.column_names):
        lines.append(
            f"{name:<9}  {samples.acceptance_rates[i]:>15.4f}  "
            f"{samples.tuned_rw_sd[i]:>11.5g}  {z[name]:>13.3f}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def run_capital(cfg: RunConfig, samples_path) -> cap.CapitalReport:
    """Capital tables from a stored chain: point, predictive, distribution."""
    samples = dataio.load_chain(samples_path)
    out = _outdir(cfg)
    seed = _stage_seed(cfg.seed, "capital")

    theta_mean = ModelParams.from_array(samples.theta.mean(axis=0))
    pd_pt, lgd_pt, ec_pt = mle.mle_capital_report(theta_mean, alpha=cfg.q)
    point = {"PD": pd_pt, "LGD": lgd_pt, "EC": ec_pt}
    dataio.write_table(
        out / "capital_point.csv",
        ["quantity", "statistic", "value"],
        [["PD", "posterior_mean_point", pd_pt],
         ["LGD", "posterior_mean_point", lgd_pt],
         ["EC", "posterior_mean_point", ec_pt]],
    )

    predictive = []
    plot_losses = None
    for label in (v.strip() for v in cfg.j_list.split(",") if v.strip()):
        portfolio = cfg.portfolio(None if label.lower() == "inf" else label)
        losses = cap.predictive_losses(
            samples, portfolio, cfg.n_sim, seed, n_threads=cfg.threads
        )
        value = simulate.empirical_quantile(losses, cfg.q)
        se = cap.quantile_standard_error(losses, cfg.q)
        predictive.append((label, value, se))
        if portfolio.is_limiting:
            plot_losses = losses[: cfg.n_plot]
    dataio.write_table(
        out / "capital_predictive.csv",
        ["J", "quantile", "mc_standard_error"],
        [list(row) for row in predictive],
    )

    ec_samples = cap.quantile_distribution(samples, cfg.q)
    stressed = cap.stressed_summaries(samples, cfg.q, reference_ec=cfg.reference_ec)
    rows = []
    for name, s in (("PD", stressed.pd), ("LGD", stressed.lgd), ("EC", stressed.ec)):
        rows.append([name, s.mean, s.stdev, s.q25, s.q50, s.q75, s.cv])
    d = stressed.delta_ec_pct
    rows.append(["deltaEC_pct", d["mean"], None, d["q25"], d["q50"], d["q75"], None])
    dataio.write_table(
        out / "capital_distribution.csv",
        ["item", "mean", "stdev", "q25", "q50", "q75", "cv"],
        rows,
    )

    dataio.write_samples(out / "ec_posterior_samples.csv", ec_samples)
    if plot_losses is None:
        portfolio = cfg.portfolio(None)
        plot_losses = cap.predictive_losses(
            samples, portfolio, cfg.n_plot, seed, n_threads=cfg.threads
        )
    dataio.write_samples(out / "predictive_loss_samples.csv", plot_losses)
    return cap.CapitalReport(
        point=point, predictive=predictive, ec_samples=ec_samples, stressed=stressed
    )


def run_summarize(cfg: RunConfig, samples_path) -> Path:
    samples = dataio.load_chain(samples_path)
    out = _outdir(cfg)
    _write_summary(samples, out / "summary.csv")
    return out / "summary.csv"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lgdcap",
        description="Credit-portfolio economic capital with parameter uncertainty",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("simulate", "generate a synthetic dataset from known parameters"),
        ("fit-mle", "two-stage closed-form/feasible maximum likelihood fit"),
        ("fit-mcmc", "Bayesian posterior sampling of parameters and factors"),
        ("capital", "capital tables from a stored chain (--data chain.csv)"),
        ("summarize", "posterior summary table from a stored chain (--data chain.csv)"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--data", help="input CSV (observations, or chain for capital/summarize)")
        p.add_argument("--config", help="flat key=value configuration file")
        p.add_argument("--seed", type=int, help="top-level RNG seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, help="worker threads for simulation stages")
    return parser


def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if args.config:
        for key, value in parse_config_file(args.config).items():
            setattr(cfg, key, value)
    for key in ("data", "seed", "out", "threads"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, value)
    if cfg.threads < 1:
        raise UsageError("--threads must be >= 1")
    return cfg


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        cfg = _build_config(args)
        if args.command == "simulate":
            run_simulate(cfg)
        elif args.command == "fit-mle":
            run_fit_mle(cfg)
        elif args.command == "fit-mcmc":
            run_fit_mcmc(cfg)
        elif args.command == "capital":
            if cfg.data is None:
                raise UsageError("capital needs --data pointing at a chain.csv")
            run_capital(cfg, cfg.data)
        elif args.command == "summarize":
            if cfg.data is None:
                raise UsageError("summarize needs --data pointing at a chain.csv")
            run_summarize(cfg, cfg.data)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (
        InvalidParameterError,
        DegenerateDensityError,
        LatentUnidentifiedError,
        NumericRangeError,
        FloatingPointError,
    ) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
