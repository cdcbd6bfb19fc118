"""Data ingestion, export, and synthetic-dataset generation.

The canonical on-disk format is one CSV per series with an ISO-8601 `date`
column: `date,value` for deaths, cases and vaccinations, and
`date,group1,...,group4` for the age split of cases. Lines starting with `#`
are comments; every file this package writes opens with one documenting the
units and the producing command, and ingestion is lossless so load(export(d))
reproduces d exactly.
"""

import csv
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from . import core
from .errors import DataFormatError, ParameterError

N_AGE_GROUPS = 4


@dataclass
class Dataset:
    """Aligned, gap-free daily series starting at `start`."""

    start: date
    deaths: np.ndarray
    cases: np.ndarray | None = None
    cases_by_age: np.ndarray | None = None
    vaccinations: np.ndarray | None = None
    gap_fills: dict = field(default_factory=dict)

    def __post_init__(self):
        self.deaths = _as_counts(self.deaths, "deaths")
        n = self.deaths.size
        if self.cases is not None:
            self.cases = _as_counts(self.cases, "cases")
        if self.cases_by_age is not None:
            self.cases_by_age = np.asarray(self.cases_by_age, dtype=np.int64)
            if self.cases_by_age.ndim != 2 \
                    or self.cases_by_age.shape[1] != N_AGE_GROUPS:
                raise ParameterError(
                    f"cases_by_age must have {N_AGE_GROUPS} columns")
            if np.any(self.cases_by_age < 0):
                raise ParameterError("age-split counts cannot be negative")
        if self.vaccinations is not None:
            self.vaccinations = np.asarray(self.vaccinations, dtype=float)
            if np.any(self.vaccinations < 0):
                raise ParameterError("vaccination counts cannot be negative")
        for name in ("cases", "cases_by_age", "vaccinations"):
            arr = getattr(self, name)
            if arr is not None and arr.shape[0] != n:
                raise ParameterError(f"{name} length {arr.shape[0]} != {n}")

    @property
    def n_days(self) -> int:
        return self.deaths.size

    @property
    def dates(self):
        return [self.start + timedelta(days=k) for k in range(self.n_days)]


def _as_counts(values, name):
    arr = np.asarray(values)
    if np.any(np.asarray(arr, dtype=float) < 0):
        raise ParameterError(f"{name} cannot be negative")
    as_int = np.asarray(arr, dtype=np.int64)
    if np.any(as_int != np.asarray(arr, dtype=float)):
        raise ParameterError(f"{name} must be whole counts")
    return as_int


# ------------------------------------------------------------------ ingestion

def _parse_csv(path, n_values, integer):
    """Read (date, value...) rows; returns {date: tuple}. Raises with file,
    line number and content on anything malformed."""
    path = Path(path)
    rows = {}
    with open(path, newline="") as handle:
        for lineno, raw in enumerate(csv.reader(handle), start=1):
            if not raw or raw[0].startswith("#"):
                continue
            if raw[0] == "date":  # header row
                continue
            if len(raw) != 1 + n_values:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {1 + n_values} columns, "
                    f"got {raw!r}")
            try:
                day = date.fromisoformat(raw[0].strip())
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: bad ISO-8601 date in {raw!r}") from None
            try:
                vals = tuple(float(v) for v in raw[1:])
            except ValueError:
                raise DataFormatError(
                    f"{path}:{lineno}: non-numeric value in {raw!r}") from None
            if any(not math.isfinite(v) for v in vals):
                raise DataFormatError(f"{path}:{lineno}: non-finite value in {raw!r}")
            if any(v < 0 for v in vals):
                raise DataFormatError(f"{path}:{lineno}: negative count in {raw!r}")
            if integer and any(v != int(v) for v in vals):
                raise DataFormatError(
                    f"{path}:{lineno}: fractional count in {raw!r}")
            if day in rows:
                raise DataFormatError(f"{path}:{lineno}: duplicate date {day}")
            rows[day] = vals
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return rows


def _series_on_calendar(rows, start, n, path, policy, fills, name, n_values):
    out = np.zeros((n, n_values))
    seen_first = min(rows)
    seen_last = max(rows)
    gaps = 0
    for k in range(n):
        day = start + timedelta(days=k)
        if day in rows:
            out[k] = rows[day]
        elif seen_first <= day <= seen_last:
            if policy == "strict":
                raise DataFormatError(
                    f"{path}: missing interior date {day} (strict policy)")
            gaps += 1
    if gaps:
        fills[name] = gaps
    return out


def load_dataset(deaths, cases=None, cases_by_age=None, vaccinations=None,
                 policy="strict") -> Dataset:
    """Load and align the series onto one contiguous calendar.

    The calendar spans the earliest to the latest date seen in any file.
    Days a series does not cover at its edges are zero-filled; interior gaps
    are an error under the default `strict` policy and zero-filled (with a
    per-series count in `gap_fills`) under `zero_fill`.
    """
    if policy not in ("strict", "zero_fill"):
        raise ParameterError(f"unknown alignment policy {policy!r}")
    parsed = {"deaths": _parse_csv(deaths, 1, integer=True)}
    if cases is not None:
        parsed["cases"] = _parse_csv(cases, 1, integer=True)
    if cases_by_age is not None:
        parsed["cases_by_age"] = _parse_csv(cases_by_age, N_AGE_GROUPS,
                                            integer=True)
    if vaccinations is not None:
        parsed["vaccinations"] = _parse_csv(vaccinations, 1, integer=False)

    first = min(min(rows) for rows in parsed.values())
    last = max(max(rows) for rows in parsed.values())
    n = (last - first).days + 1
    paths = {"deaths": deaths, "cases": cases, "cases_by_age": cases_by_age,
             "vaccinations": vaccinations}
    fills: dict = {}
    series = {name: _series_on_calendar(rows, first, n, paths[name], policy,
                                        fills, name, 1 if name != "cases_by_age"
                                        else N_AGE_GROUPS)
              for name, rows in parsed.items()}

    return Dataset(
        start=first,
        deaths=series["deaths"][:, 0],
        cases=series["cases"][:, 0] if "cases" in series else None,
        cases_by_age=series.get("cases_by_age"),
        vaccinations=(series["vaccinations"][:, 0]
                      if "vaccinations" in series else None),
        gap_fills=fills,
    )


# -------------------------------------------------------------------- export

def _write_csv(path, header_comment, columns, rows):
    with open(path, "w", newline="") as handle:
        handle.write(f"# {header_comment}\n")
        writer = csv.writer(handle)
        writer.writerow(columns)
        writer.writerows(rows)


def export_dataset(dataset: Dataset, out_dir, producer="epifit") -> dict:
    """Write the dataset back to canonical CSVs; returns {series: path}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dates = dataset.dates
    written = {}

    def emit(name, values, fmt):
        path = out_dir / f"{name}.csv"
        comment = f"produced-by: {producer}; units: persons/day; dates ISO-8601"
        if values.ndim == 1:
            rows = [(d.isoformat(), fmt(v)) for d, v in zip(dates, values)]
            _write_csv(path, comment, ("date", "value"), rows)
        else:
            cols = ("date",) + tuple(f"group{j + 1}"
                                     for j in range(values.shape[1]))
            rows = [(d.isoformat(), *[fmt(v) for v in row])
                    for d, row in zip(dates, values)]
            _write_csv(path, comment, cols, rows)
        written[name] = path

    emit("deaths", dataset.deaths, str)
    if dataset.cases is not None:
        emit("cases", dataset.cases, str)
    if dataset.cases_by_age is not None:
        emit("cases_by_age", dataset.cases_by_age, str)
    if dataset.vaccinations is not None:
        emit("vaccinations", dataset.vaccinations, lambda v: f"{v:.17g}")
    return written


# ----------------------------------------------------------------- synthetic

def generate_synthetic(config: core.ModelConfig, params: core.ParamVector,
                       seed, reporting_prob=0.25, doses=None,
                       start=date(2020, 3, 1),
                       age_weights=(0.2, 0.3, 0.3, 0.2)):
    """Simulate a dataset from the model; returns (Dataset, truth record).

    Deaths are drawn around the expected-death curve under the configured
    observation model (a non-finite dispersion selects the exact Poisson
    limit); recorded cases are a Binomial thinning of the latent infections
    with the given reporting probability, split across age groups
    multinomially. One generator seeded with `seed` is consumed in the fixed
    order deaths, cases, age split, so runs are reproducible.
    """
    if not 0.0 <= reporting_prob <= 1.0:
        raise ParameterError("reporting probability must lie in [0, 1]")
    if len(age_weights) != N_AGE_GROUPS or not math.isclose(sum(age_weights), 1.0):
        raise ParameterError(f"age weights must be {N_AGE_GROUPS} shares summing to 1")
    paths = core.simulate_paths(params, config, doses=doses)
    if not paths.valid:
        raise ParameterError("true parameters produce an infeasible trajectory")

    rng = np.random.default_rng(seed)
    theta = paths.expected_deaths
    rate = _death_rate_draws(rng, theta, config.likelihood, params)
    deaths = rng.poisson(rate)

    cases = rng.binomial(np.rint(paths.cases).astype(np.int64),
                         reporting_prob)
    by_age = rng.multinomial(cases, np.asarray(age_weights, dtype=float))

    dataset = Dataset(start=start, deaths=deaths, cases=cases,
                      cases_by_age=by_age,
                      vaccinations=(np.asarray(doses, dtype=float)
                                    if doses is not None else None))
    truth = {
        "produced_by": "epifit simulate",
        "seed": int(seed),
        "reporting_prob": float(reporting_prob),
        "model": config.flags.name,
        "likelihood": config.likelihood,
        "rates": [float(v) for v in params.rates],
        "ifrs": [float(v) for v in params.ifrs],
        "dispersion": float(params.dispersion),
        "init_cases": float(params.init_cases),
        "mix_scale": float(params.mix_scale),
        "changepoints": list(config.changepoints),
        "ifr_breaks": list(config.ifr_breaks),
        "latent": {
            "cases": paths.cases.tolist(),
            "susceptible": paths.susceptible.tolist(),
            "infectious": paths.infectious.tolist(),
            "removed": paths.removed.tolist(),
            "expected_deaths": theta.tolist(),
            "reproduction": paths.reproduction.tolist(),
        },
    }
    return dataset, truth


def _death_rate_draws(rng, theta, likelihood, params):
    rate = np.zeros_like(theta)
    pos = theta > 0
    if likelihood == "negbin":
        psi = params.dispersion
        if math.isfinite(psi):
            rate[pos] = rng.gamma(psi, theta[pos] / psi)
        else:
            rate[pos] = theta[pos]
    elif likelihood == "poisson_exp":
        rate[pos] = rng.exponential(theta[pos])
    else:
        sigma = params.mix_scale
        mu = theta[pos]
        s2 = np.log1p(sigma ** 2 / mu ** 2)
        m = np.log(mu ** 2 / np.sqrt(mu ** 2 + sigma ** 2))
        rate[pos] = rng.lognormal(m, np.sqrt(s2))
    return rate
