"""Baseline and simulated comparisons, parameter sweeps and report tables."""
from __future__ import annotations

import csv
import io
import itertools
import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from datetime import date

import numpy as np
from scipy.stats import rankdata

from .augment import AugmentParams, plan_unobserved
from .cohort import Cohort, age_at
from .errors import AuditError, ConfigError, DomainError
from .matching import (ESTIMATE_COLUMNS, BinScheme, UnitTable, estimate_effect, get_comparison,
                       subgroup_effects)
from .rates import (ArrestRateTable, LambdaTable, build_lambda_table, estimate_rates, fixed_lambda,
                    multiply_rates)
from .scores import DEFAULT_NORMALIZATION, RAI_ORDER, NormalizationConfig, Ogrs3Coefficients, score_cohort
from .seeding import mix_seed

SCHEMA_VERSION = 1


@dataclass
class SweepConfig:
    lambda_values: tuple = (0.3, 0.5, 0.8, 1.0, "estimated")
    omega_values: tuple = (1.0, 3.0, 5.0, 10.0)
    delta_t_values: tuple = (5, 10, 15, 20)
    bin_schemes: tuple = ("10+", "20+", "50+")
    rate_methods: tuple = ("averaging", "regression")
    multipliers: tuple = (("black", 1.0),)
    comparisons: tuple = ("black-white", "hispanic-white")
    n_seeds: int = 5
    master_seed: int = 0

    def __post_init__(self):
        for f in ("lambda_values", "omega_values", "delta_t_values", "bin_schemes", "rate_methods",
                  "multipliers", "comparisons"):
            value = tuple(getattr(self, f))
            if not value:
                raise ConfigError(f"{f} must not be empty")
            setattr(self, f, value)
        self.bin_schemes = tuple(BinScheme.parse(b) for b in self.bin_schemes)
        self.multipliers = tuple((str(r), float(x)) for r, x in self.multipliers)
        for lam in self.lambda_values:
            if isinstance(lam, str):
                if lam not in ("survey", "rearrest", "estimated"):
                    raise ConfigError(f"unknown lambda setting {lam!r}")
            elif not 0 <= lam <= 1:
                raise ConfigError(f"lambda {lam} outside [0, 1]")
        for m in self.rate_methods:
            if m not in ("averaging", "regression"):
                raise ConfigError(f"unknown rate method {m!r}")
        for c in self.comparisons:
            get_comparison(c)
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be at least 1")


def _sort_value(v):
    return (1, str(v), 0.0) if isinstance(v, str) else (0, "", float(v))


@dataclass(frozen=True)
class GridPoint:
    lam: object
    omega: float
    delta_t: int
    rate_method: str
    multiplier_race: str
    multiplier: float

    def sort_key(self):
        return (_sort_value(self.lam), self.omega, self.delta_t, self.rate_method,
                self.multiplier_race, self.multiplier)

    def augmentation_seed(self, master_seed: int) -> int:
        # bins, comparisons and the multiplier are left out so those settings
        # share draws (common random numbers)
        lam = self.lam if isinstance(self.lam, str) else float(self.lam)
        return mix_seed(master_seed, "grid", lam, float(self.omega), int(self.delta_t), self.rate_method)


def grid_points(config: SweepConfig) -> list:
    pts = {GridPoint(lam, float(om), int(dt), rm, race, fac)
           for lam, om, dt, rm, (race, fac) in itertools.product(
               config.lambda_values, config.omega_values, config.delta_t_values,
               config.rate_methods, config.multipliers)}
    return sorted(pts, key=GridPoint.sort_key)


def derived_metrics(baseline_ae, simulated_ae):
    """(simulated - baseline, (simulated - baseline) / baseline).

    Works on floats or Decimals; the ratio is None when the baseline is 0.
    """
    difference = simulated_ae - baseline_ae
    proportional = None if baseline_ae == 0 else difference / baseline_ae
    return difference, proportional


@dataclass
class ResultRow:
    lam: object
    omega: float
    delta_t: int
    bins: str
    rate_method: str
    multiplier_race: str
    multiplier: float
    comparison: str
    rai: str
    baseline_ae: float
    baseline_std: float
    simulated_ae: float
    simulated_std: float
    difference: float
    proportional_increase: object
    n_seeds: int
    n_cells: int
    n_matched_a: int
    n_matched_b: int
    error: str = ""


RESULT_COLUMNS = ("schema_version",) + tuple(f.name for f in fields(ResultRow))


class AuditData:
    """A scored cohort plus everything needed to augment it.

    Scores depend only on observed arrests, so they are computed once here
    and reused by every replicate; augmentation only changes the crime
    counts used as matching covariates.
    """

    def __init__(self, cohort: Cohort, coeffs: Ogrs3Coefficients, year_range, reference_date: date | None = None,
                 normalization: NormalizationConfig | None = None, survey_rows=(), micro_rows=(),
                 rate_tables: dict | None = None):
        self.cohort = cohort
        self.coeffs = coeffs
        self.year_range = (int(year_range[0]), int(year_range[1]))
        self.reference_date = reference_date or date(self.year_range[1], 12, 31)
        self.normalization = normalization or DEFAULT_NORMALIZATION
        self.survey_rows = list(survey_rows)
        self.micro_rows = list(micro_rows)
        self._rate_tables = dict(rate_tables or {})
        self._lambda_cache: dict = {}
        coeffs.check_covers(cohort.taxonomy)
        self.categories = cohort.taxonomy.names
        col = {c: j for j, c in enumerate(self.categories)}
        bundles = score_cohort(cohort, self.reference_date, coeffs, self.normalization)
        ids, sex, race, eth, age, arrests, scores, positions = [], [], [], [], [], [], [], []
        for pos, p in enumerate(cohort):
            b = bundles.get(p.person_id)
            if b is None:
                continue
            counts = [0] * len(self.categories)
            for e in p.events:
                if e.observed and e.date <= self.reference_date:
                    counts[col[e.category]] += 1
            d = p.demographics
            ids.append(p.person_id)
            sex.append(d.sex)
            race.append(d.race)
            eth.append(d.ethnicity)
            age.append(age_at(d, b.reference_date))
            arrests.append(counts)
            scores.append([b.normalized[r] for r in RAI_ORDER])
            positions.append(pos)
        if not ids:
            raise DomainError("no cohort member has an arrest on or before the reference date")
        self.bundles = bundles
        self.positions = np.array(positions, dtype=np.int64)
        arr = np.array(arrests, dtype=np.int64)
        self.base = UnitTable(ids, sex, race, eth, age, arr, arr, scores)

    def rate_table(self, method: str) -> ArrestRateTable:
        if method not in self._rate_tables:
            if not self.survey_rows:
                raise ConfigError(f"no survey data to estimate {method} arrest rates")
            years = range(self.year_range[0], self.year_range[1] + 1)
            self._rate_tables[method] = estimate_rates(self.survey_rows, method, years)
        return self._rate_tables[method]

    def lambda_table(self, lam, method: str) -> LambdaTable:
        if not isinstance(lam, str):
            return fixed_lambda(float(lam))
        key = (lam, method)
        if key not in self._lambda_cache:
            self._lambda_cache[key] = build_lambda_table(lam, self.rate_table(method), self.cohort,
                                                         self.micro_rows, self.reference_date)
        return self._lambda_cache[key]

    def crime_table(self, rates: ArrestRateTable, lambdas: LambdaTable, omega, delta_t, seed) -> UnitTable:
        params = AugmentParams(float(omega), int(delta_t), int(seed), self.year_range)
        plan = plan_unobserved(self.cohort, rates, lambdas, params)
        extra = plan.counts()[self.positions]
        crimes = self.base.arrests.copy()
        for j, c in enumerate(plan.categories):
            crimes[:, self.categories.index(c)] += extra[:, j]
        return self.base.with_crimes(crimes)

    def table_builder(self, point: GridPoint):
        """seed -> UnitTable for ``point``; None gives the un-augmented table. Results are cached."""
        rates = self.rate_table(point.rate_method)
        if point.multiplier != 1.0:
            rates = multiply_rates(rates, point.multiplier_race, point.multiplier)
        lambdas = self.lambda_table(point.lam, point.rate_method)
        cache = {}

        def build(seed):
            if seed is None:
                return self.base
            if seed not in cache:
                cache[seed] = self.crime_table(rates, lambdas, point.omega, point.delta_t, seed)
            return cache[seed]
        return build


def _nan_row(point, scheme, comparison, rai, message, n_seeds):
    nan = float("nan")
    return ResultRow(point.lam, point.omega, point.delta_t, scheme.label, point.rate_method,
                     point.multiplier_race, point.multiplier, comparison, str(rai), nan, nan, nan, nan,
                     nan, None, n_seeds, 0, 0, 0, message)


def baseline_effects(data: AuditData, scheme: BinScheme, comparison, n_seeds: int) -> dict:
    return estimate_effect(lambda seed: data.base, scheme, comparison, "arrests", n_seeds)


def _evaluate_point(data: AuditData, point: GridPoint, config: SweepConfig, baselines: dict) -> list:
    rows = []
    try:
        builder = data.table_builder(point)
    except AuditError as exc:
        return [_nan_row(point, s, c, r, str(exc), config.n_seeds)
                for s in config.bin_schemes for c in config.comparisons for r in RAI_ORDER]
    seed = point.augmentation_seed(config.master_seed)
    for scheme in config.bin_schemes:
        for comp in config.comparisons:
            base = baselines.get((scheme.label, comp))
            try:
                if isinstance(base, Exception):
                    raise base
                sim = estimate_effect(builder, scheme, comp, "crimes", config.n_seeds, seed)
            except AuditError as exc:
                rows.extend(_nan_row(point, scheme, comp, r, str(exc), config.n_seeds) for r in RAI_ORDER)
                continue
            for rai in RAI_ORDER:
                b, s = base[rai], sim[rai]
                diff, prop = derived_metrics(b.ae, s.ae)
                rows.append(ResultRow(point.lam, point.omega, point.delta_t, scheme.label, point.rate_method,
                                      point.multiplier_race, point.multiplier, comp, str(rai), b.ae, b.ae_std,
                                      s.ae, s.ae_std, diff, prop, s.n_seeds, s.n_cells, s.n_matched_a,
                                      s.n_matched_b))
    return rows


_WORKER: dict = {}


def _init_worker(data, config, baselines):
    _WORKER.update(data=data, config=config, baselines=baselines)


def _worker_point(point):
    return _evaluate_point(_WORKER["data"], point, _WORKER["config"], _WORKER["baselines"])


def _baselines(data, config):
    out = {}
    for scheme in config.bin_schemes:
        for comp in config.comparisons:
            try:
                out[(scheme.label, comp)] = baseline_effects(data, scheme, comp, config.n_seeds)
            except AuditError as exc:
                out[(scheme.label, comp)] = exc
    return out


def run_sweep(data: AuditData, config: SweepConfig, threads: int = 1) -> list:
    """Evaluate every grid point; rows come back in canonical parameter order.

    Failures at a grid point are recorded in the row's ``error`` field and
    the sweep carries on. ``threads`` > 1 spreads grid points over worker
    processes without changing the output.
    """
    points = grid_points(config)
    baselines = _baselines(data, config)
    if threads > 1 and len(points) > 1:
        try:
            ctx = multiprocessing.get_context("fork")
        except ValueError:
            ctx = multiprocessing.get_context()
        with ProcessPoolExecutor(max_workers=threads, mp_context=ctx, initializer=_init_worker,
                                 initargs=(data, config, baselines)) as pool:
            chunks = list(pool.map(_worker_point, points))
    else:
        chunks = [_evaluate_point(data, p, config, baselines) for p in points]
    return [row for chunk in chunks for row in chunk]


def multiplier_experiment(data: AuditData, config: SweepConfig, factors=(1, 2, 3, 5), race="black",
                          threads: int = 1) -> list:
    if any(f < 1 for f in factors):
        raise ConfigError("multipliers must be at least 1")
    cfg = SweepConfig(config.lambda_values, config.omega_values, config.delta_t_values, config.bin_schemes,
                      config.rate_methods, tuple((race, float(f)) for f in factors), config.comparisons,
                      config.n_seeds, config.master_seed)
    return run_sweep(data, cfg, threads)


def subgroup_rows(data: AuditData, point: GridPoint, scheme: BinScheme, comparison, n_seeds, master_seed):
    """Baseline and simulated effects within each sex x age stratum, plus warnings."""
    builder = data.table_builder(point)
    seed = point.augmentation_seed(master_seed)
    base, warn_b = subgroup_effects(builder, scheme, comparison, "arrests", n_seeds, seed)
    sim, warn_s = subgroup_effects(builder, scheme, comparison, "crimes", n_seeds, seed)
    rows = []
    for stratum in sorted(set(base) & set(sim)):
        for rai in RAI_ORDER:
            b, s = base[stratum][rai], sim[stratum][rai]
            diff, prop = derived_metrics(b.ae, s.ae)
            rows.append({"sex": stratum[0], "age_band": stratum[1], "comparison": get_comparison(comparison).name,
                         "rai": str(rai), "baseline_ae": b.ae, "baseline_std": b.ae_std,
                         "simulated_ae": s.ae, "simulated_std": s.ae_std, "difference": diff,
                         "proportional_increase": prop, "n_cells": s.n_cells})
    missing = [f"{sx} {ag}: no overlap under crime matching" for sx, ag in sorted(set(base) - set(sim))]
    missing += [f"{sx} {ag}: no overlap under arrest matching" for sx, ag in sorted(set(sim) - set(base))]
    return rows, sorted(set(warn_b + warn_s)) + missing


def rank_correlation(scores, counts):
    """Pearson correlation of average-tie ranks; None if either ranking is constant."""
    a = np.asarray(scores, dtype=float)
    b = np.asarray(counts, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise DomainError("scores and counts must be equal-length sequences")
    if len(a) < 3:
        raise DomainError("need at least 3 observations")
    ra = rankdata(a) - (len(a) + 1) / 2.0
    rb = rankdata(b) - (len(b) + 1) / 2.0
    denom = math.sqrt(float((ra * ra).sum()) * float((rb * rb).sum()))
    if denom == 0:
        return None
    return max(-1.0, min(1.0, float((ra * rb).sum()) / denom))


def _fmt(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, float):
        return repr(float(v))
    return str(v)


def rows_to_csv(rows, columns) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue().encode("utf-8")


def estimates_to_csv(estimates) -> bytes:
    """EffectEstimate rows in the fixed estimate schema."""
    rows = [{c: (str(getattr(e, c)) if c == "rai" else getattr(e, c)) for c in ESTIMATE_COLUMNS}
            for e in estimates]
    return rows_to_csv(rows, ESTIMATE_COLUMNS)


def pct(v, std=None) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "NA"
    text = f"{float(v) * 100:.2f}%"
    if std is not None and not (isinstance(std, float) and math.isnan(std)):
        text += f" ±{float(std) * 100:.2f}%"
    return text


def _markdown(rows) -> str:
    out = []
    groups: dict = {}
    for r in rows:
        key = (r.lam, r.omega, r.delta_t, r.bins, r.rate_method, r.multiplier_race, r.multiplier, r.comparison)
        groups.setdefault(key, {})[r.rai] = r
    header = "| | " + " | ".join(str(k) for k in RAI_ORDER) + " |"
    rule = "|---|" + "---|" * len(RAI_ORDER)
    for key, by_rai in groups.items():
        lam, om, dt, bins, method, race, fac, comp = key
        title = f"{comp}: lambda={lam}, omega={om:g}, delta_t={dt}, bins={bins}, rates={method}"
        if fac != 1.0:
            title += f", x{fac:g} for {race}"
        out += [f"### {title}", "", header, rule]
        cells = [by_rai.get(str(k)) for k in RAI_ORDER]
        errs = [c.error for c in cells if c is not None and c.error]
        out.append("| Baseline AE | " + " | ".join(pct(c.baseline_ae, c.baseline_std) if c else "NA" for c in cells) + " |")
        out.append("| Simulated AE | " + " | ".join(pct(c.simulated_ae, c.simulated_std) if c else "NA" for c in cells) + " |")
        out.append("| Difference in effect | " + " | ".join(pct(c.difference) if c else "NA" for c in cells) + " |")
        out.append("| Proportional increase | " + " | ".join(pct(c.proportional_increase) if c else "NA" for c in cells) + " |")
        if errs:
            out += ["", f"errors: {errs[0]}"]
        out.append("")
    return "\n".join(out)


def emit_report(rows, format: str = "csv") -> bytes:
    if format == "csv":
        dict_rows = [dict({"schema_version": SCHEMA_VERSION}, **{f.name: getattr(r, f.name) for f in fields(ResultRow)})
                     for r in rows]
        return rows_to_csv(dict_rows, RESULT_COLUMNS)
    if format == "markdown":
        return _markdown(rows).encode("utf-8")
    raise ConfigError(f"unknown report format {format!r}")


def _parse_value(name, text):
    if text == "NA":
        return None
    if name in ("omega", "multiplier", "baseline_ae", "baseline_std", "simulated_ae", "simulated_std",
                "difference", "proportional_increase"):
        return float(text)
    if name in ("delta_t", "n_seeds", "n_cells", "n_matched_a", "n_matched_b"):
        return int(text)
    if name == "lam":
        try:
            return float(text)
        except ValueError:
            return text
    return text


def parse_results_csv(data: bytes) -> list:
    reader = csv.DictReader(io.StringIO(data.decode("utf-8"), newline=""))
    if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
        raise ConfigError("results CSV header does not match the schema")
    out = []
    for rec in reader:
        if int(rec["schema_version"]) != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {rec['schema_version']}")
        out.append(ResultRow(**{f.name: _parse_value(f.name, rec[f.name]) for f in fields(ResultRow)}))
    return out

