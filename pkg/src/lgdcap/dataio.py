"""CSV formats: yearly observations, chains, and report tables.

Floats are written with repr(), the shortest form that reloads to the
identical double, so every file the tool writes reloads bit-exactly.
Missing recovery values are empty fields, never sentinel numbers.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .likelihood import YearlyObservations
from .mcmc import PARAM_NAMES, PosteriorSamples
from .model import LatentPath, ModelParams

__all__ = [
    "load_dataset",
    "write_dataset",
    "write_truth",
    "write_chain",
    "load_chain",
    "write_table",
    "write_samples",
]

_DATASET_HEADER = ["year", "obligors", "defaults", "avg_recovery"]


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def load_dataset(path) -> YearlyObservations:
    """Parse a ``year,obligors,defaults,avg_recovery`` CSV.

    ``avg_recovery`` may be empty only in zero-default periods.  Raises
    DataFormatError with the offending line number on malformed rows or
    invariant violations.
    """
    path = Path(path)
    years, obligors, defaults, recovery = [], [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if [h.strip() for h in header] != _DATASET_HEADER:
            raise DataFormatError(
                f"{path}:1: expected header {','.join(_DATASET_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != 4:
                raise DataFormatError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                years.append(int(row[0]))
                obligors.append(int(row[1]))
                defaults.append(int(row[2]))
                rec = row[3].strip()
                recovery.append(float(rec) if rec else math.nan)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not years:
        raise DataFormatError(f"{path}: no data rows")
    try:
        return YearlyObservations(
            years=np.array(years),
            obligors=np.array(obligors),
            defaults=np.array(defaults),
            avg_recovery=np.array(recovery),
        )
    except DataFormatError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


def write_dataset(obs: YearlyObservations, path) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_DATASET_HEADER)
        for t in range(obs.n_periods):
            rec = obs.avg_recovery[t]
            writer.writerow(
                [
                    int(obs.years[t]),
                    int(obs.obligors[t]),
                    int(obs.defaults[t]),
                    "" if math.isnan(rec) else _fmt(rec),
                ]
            )


def write_truth(params: ModelParams, latent: LatentPath, path) -> None:
    """Sidecar file with the generating parameters and factor path."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["name", "value"])
        for name, value in zip(PARAM_NAMES, params.as_array()):
            writer.writerow([name, _fmt(value)])
        for t, value in enumerate(latent.x, start=1):
            writer.writerow([f"x{t}", _fmt(value)])


def write_chain(samples: PosteriorSamples, path) -> None:
    """Posterior draws: ``iter,p,rho,mu,sigma,omega,x1,...,xT``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter"] + samples.column_names)
        for i in range(samples.n_draws):
            writer.writerow([i] + [_fmt(v) for v in samples.draws[i]])


def load_chain(path) -> PosteriorSamples:
    """Reload a stored chain; run metadata is not kept in the CSV."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[:6] != ["iter"] + list(PARAM_NAMES):
            raise DataFormatError(f"{path}:1: not a chain file")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{lineno}: ragged row")
            try:
                rows.append([float(v) for v in row[1:]])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no draws")
    draws = np.array(rows)
    dim = draws.shape[1]
    return PosteriorSamples(
        draws=draws,
        acceptance_rates=np.full(dim, np.nan),
        tuned_rw_sd=np.full(dim, np.nan),
        seed=-1,
    )


def write_table(path, header, rows) -> None:
    """Generic CSV table with round-trip float formatting."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if v is None else _fmt(v) for v in row])


def write_samples(path, values) -> None:
    """Raw sample vector, one full-precision value per line."""
    path = Path(path)
    with path.open("w") as fh:
        for v in np.asarray(values, dtype=float):
            fh.write(repr(float(v)) + "\n")
