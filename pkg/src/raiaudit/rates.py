"""Arrest-rate and re-offense-rate tables.

Arrest rates come from pre-aggregated survey extracts, either pooled over
years or smoothed with a weighted linear trend. Re-offense rates come from
survey micro rows, from re-arrest counts inside a cohort, or from a fixed
value. Every table is keyed by offense category and a demographic group.
"""
from __future__ import annotations

import csv
import io
import math
import re
from dataclasses import dataclass, field
from datetime import date
from importlib import resources
from typing import Iterable, NamedTuple

from .cohort import CATEGORY_NAMES, ETHNICITIES, RACES, SEXES, Cohort, Demographics, age_at
from .errors import DataError, DomainError, EstimationError, RateLookupError

# categories whose survey source records Hispanic origin directly
HISPANIC_KEYED = ("drug_use", "drug_sell", "dui")
GROUP_RACES = RACES + ("any",)


class GroupKey(NamedTuple):
    sex: str
    race: str
    ethnicity: str
    age_band: str

    def label(self) -> str:
        return f"{self.sex}/{self.race}/{self.ethnicity}/{self.age_band}"


_BAND = re.compile(r"^(\d+)\s*-\s*(\d+)$")
_OPEN = re.compile(r"^(?:(\d+)\s*\+|>\s*(\d+))$")


def parse_band(label: str) -> tuple[int, int | None]:
    """'18-29' -> (18, 29); '30+' -> (30, None); '>34' -> (35, None)."""
    text = label.strip().replace("–", "-").replace("&gt;", ">")
    m = _BAND.match(text)
    if m:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise DataError(f"age band {label!r} is empty")
        return lo, hi
    m = _OPEN.match(text)
    if m:
        return (int(m.group(1)), None) if m.group(1) else (int(m.group(2)) + 1, None)
    raise DataError(f"unrecognised age band {label!r}")


def canonical_band(label: str) -> str:
    lo, hi = parse_band(label)
    return f"{lo}+" if hi is None else f"{lo}-{hi}"


def band_for_age(age: int, labels: Iterable[str]) -> str | None:
    for label in labels:
        lo, hi = parse_band(label)
        if age >= lo and (hi is None or age <= hi):
            return label
    return None


def check_partition(labels: Iterable[str], start=18):
    """Bands must tile [start, inf) without gaps or overlaps."""
    spans = sorted(parse_band(b) for b in set(labels))
    expect = start
    for lo, hi in spans:
        if lo != expect:
            raise DataError(f"age bands {sorted(set(labels))} do not partition ages {start}+")
        if hi is None:
            expect = None
            break
        expect = hi + 1
    if expect is not None:
        raise DataError(f"age bands {sorted(set(labels))} do not cover the open top band")


def make_key(sex, race, ethnicity, age_band) -> GroupKey:
    if sex not in SEXES:
        raise DataError(f"unknown sex {sex!r}")
    if race not in GROUP_RACES:
        raise DataError(f"unknown race {race!r}")
    if ethnicity not in ETHNICITIES:
        raise DataError(f"unknown ethnicity {ethnicity!r}")
    return GroupKey(sex, race, ethnicity, canonical_band(age_band))


def resolve_identity(category: str, demo: Demographics) -> tuple[str, str]:
    """(race, ethnicity) part of the lookup key for a person and category.

    Hispanic people take the Hispanic row for drug and DUI offenses, whose
    source records Hispanic origin, and their race row everywhere else.
    """
    if demo.ethnicity == "hispanic" and category in HISPANIC_KEYED:
        return "any", "hispanic"
    return demo.race, "non-hispanic"


def july_first(year: int) -> date:
    return date(year, 7, 1)


@dataclass(frozen=True)
class SurveyAggregateRow:
    year: int
    category: str
    group: GroupKey
    n_offenders: int
    n_arrested: int


@dataclass(frozen=True)
class SurveyMicroRow:
    group: GroupKey
    reported_categories: frozenset
    ever_arrested: bool


class ArrestRateTable:
    def __init__(self, rates: dict, method: str, fallback=()):
        for key, r in rates.items():
            if not 0.0 <= r <= 1.0 or math.isnan(r):
                raise DomainError(f"rate {r} for {key} outside [0, 1]")
        self.rates = dict(sorted(rates.items(), key=lambda kv: (kv[0][0], tuple(kv[0][1]), kv[0][2])))
        self.method = method
        self.fallback = frozenset(fallback)
        bands: dict[str, set] = {}
        for cat, key, _ in self.rates:
            bands.setdefault(cat, set()).add(key.age_band)
        self._bands = {c: tuple(sorted(b, key=parse_band)) for c, b in bands.items()}

    def __eq__(self, other):
        return isinstance(other, ArrestRateTable) and self.rates == other.rates

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(sorted(self._bands))

    def bands(self, category) -> tuple[str, ...]:
        return self._bands.get(category, ())

    def years(self) -> tuple[int, ...]:
        return tuple(sorted({y for _, _, y in self.rates}))

    def rate(self, category, key: GroupKey, year: int) -> float:
        try:
            return self.rates[(category, key, year)]
        except KeyError:
            raise RateLookupError(f"no arrest rate for {category} {key.label()} in {year}") from None

    def group_key(self, category, demo: Demographics, year: int) -> GroupKey | None:
        """Resolved key for a person in ``year``; None when younger than every band."""
        band = band_for_age(age_at(demo, july_first(year)), self.bands(category))
        if band is None:
            return None
        race, eth = resolve_identity(category, demo)
        return GroupKey(demo.sex, race, eth, band)


def lookup_rate(table: ArrestRateTable, category: str, demographics: Demographics, year: int) -> float:
    key = table.group_key(category, demographics, year)
    if key is None:
        raise RateLookupError(f"no age band for {category} covers this person in {year}")
    return table.rate(category, key, year)


def _cells(rows: Iterable[SurveyAggregateRow]):
    cells: dict = {}
    for r in rows:
        per_year = cells.setdefault((r.category, r.group), {})
        off, arr = per_year.get(r.year, (0, 0))
        per_year[r.year] = (off + r.n_offenders, arr + r.n_arrested)
    return cells


def _pooled(per_year, cell):
    total = sum(o for o, _ in per_year.values())
    if total <= 0:
        raise EstimationError(f"no offenders recorded for {cell[0]} {cell[1].label()}")
    return sum(a for _, a in per_year.values()) / total


def _grid_years(rows, years):
    return tuple(sorted(set(years))) if years is not None else tuple(sorted({r.year for r in rows}))


def estimate_rates_averaging(rows: Iterable[SurveyAggregateRow], years=None) -> ArrestRateTable:
    """Pooled arrested/offenders ratio per cell, repeated for every requested year."""
    rows = list(rows)
    grid = _grid_years(rows, years)
    out = {}
    for cell, per_year in _cells(rows).items():
        rate = _pooled(per_year, cell)
        for y in grid:
            out[(cell[0], cell[1], y)] = rate
    return ArrestRateTable(out, "averaging")


def wls_line(xs, ys, ws) -> tuple[float, float]:
    """Intercept and slope of the weighted least-squares line."""
    sw = math.fsum(ws)
    xbar = math.fsum(w * x for x, w in zip(xs, ws)) / sw
    ybar = math.fsum(w * y for y, w in zip(ys, ws)) / sw
    sxx = math.fsum(w * (x - xbar) ** 2 for x, w in zip(xs, ws))
    sxy = math.fsum(w * (x - xbar) * (y - ybar) for x, y, w in zip(xs, ys, ws))
    slope = sxy / sxx
    return ybar - slope * xbar, slope


def estimate_rates_regression(rows: Iterable[SurveyAggregateRow], years=None) -> ArrestRateTable:
    """Weighted linear trend of yearly rate on year, weights = offenders, clipped to [0, 1].

    Cells with fewer than two usable years fall back to the pooled ratio and
    are listed in ``table.fallback``.
    """
    rows = list(rows)
    grid = _grid_years(rows, years)
    out = {}
    fallback = []
    for cell, per_year in _cells(rows).items():
        usable = sorted((y, o, a) for y, (o, a) in per_year.items() if o > 0)
        if len(usable) < 2:
            rate = _pooled(per_year, cell)
            fallback.append(cell)
            for y in grid:
                out[(cell[0], cell[1], y)] = rate
            continue
        # centre years so large calendar values do not cost precision
        x0 = usable[0][0]
        xs = [y - x0 for y, _, _ in usable]
        ys = [a / o for _, o, a in usable]
        ws = [float(o) for _, o, _ in usable]
        icept, slope = wls_line(xs, ys, ws)
        for y in grid:
            out[(cell[0], cell[1], y)] = min(1.0, max(0.0, icept + slope * (y - x0)))
    return ArrestRateTable(out, "regression", fallback)


def estimate_rates(rows, method="averaging", years=None) -> ArrestRateTable:
    if method == "averaging":
        return estimate_rates_averaging(rows, years)
    if method == "regression":
        return estimate_rates_regression(rows, years)
    raise DomainError(f"unknown rate method {method!r}")


def multiply_rates(table: ArrestRateTable, race_filter: str, factor: float) -> ArrestRateTable:
    if not factor > 0:
        raise DomainError(f"multiplier must be positive, got {factor}")
    out = {}
    for k, r in table.rates.items():
        out[k] = min(1.0, r * factor) if k[1].race == race_filter else r
    return ArrestRateTable(out, table.method, table.fallback)


def clamp_lambda(lam: float, ar: float) -> float:
    if not 0.0 < ar <= 1.0:
        raise DomainError(f"arrest rate {ar} outside (0, 1]; total crime is undefined")
    return min(1.0, max(ar, lam))


def estimate_lambda_survey(micro_rows: Iterable[SurveyMicroRow], category: str, group: GroupKey) -> float:
    arrested = 0
    reported = 0
    for r in micro_rows:
        if r.group != group or not r.ever_arrested:
            continue
        arrested += 1
        if category in r.reported_categories:
            reported += 1
    if arrested == 0:
        raise EstimationError(f"no arrested respondents for {category} {group.label()}")
    return reported / arrested


def rearrest_groups(cohort: Cohort, category: str, table: ArrestRateTable, when: date):
    """Map group key -> list of persons, grouped as the rate table resolves them at ``when``."""
    groups: dict = {}
    for p in cohort:
        if p.demographics.birth_date > when:
            continue
        band = band_for_age(age_at(p.demographics, when), table.bands(category))
        if band is None:
            continue
        race, eth = resolve_identity(category, p.demographics)
        groups.setdefault(GroupKey(p.demographics.sex, race, eth, band), []).append(p)
    return groups


def estimate_lambda_rearrest(members, category: str) -> float:
    """Share of ``members`` with two or more observed arrests for ``category``."""
    members = list(members)
    if not members:
        raise EstimationError(f"empty group when estimating re-arrest rate for {category}")
    repeat = sum(1 for p in members
                 if sum(1 for e in p.events if e.observed and e.category == category) >= 2)
    return repeat / len(members)


@dataclass
class LambdaTable:
    """Re-offense rates per (category, group).

    ``mode`` is ``fixed`` (one value everywhere), ``survey``, ``rearrest``
    or ``table`` (values read from a file).
    """
    values: dict = field(default_factory=dict)
    mode: str = "table"
    fixed: float | None = None
    sources: dict = field(default_factory=dict)

    def value(self, category, key: GroupKey) -> float:
        if self.mode == "fixed":
            return self.fixed
        try:
            return self.values[(category, key)]
        except KeyError:
            raise RateLookupError(f"no re-offense rate for {category} {key.label()}") from None

    def clamped(self, category, key, ar) -> float:
        return clamp_lambda(self.value(category, key), ar)


def fixed_lambda(value: float) -> LambdaTable:
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"fixed re-offense rate {value} outside [0, 1]")
    return LambdaTable(mode="fixed", fixed=float(value))


def build_lambda_table(mode, rate_table: ArrestRateTable, cohort: Cohort | None = None,
                       micro_rows=None, when: date | None = None) -> LambdaTable:
    """Build a table in ``survey`` or ``rearrest`` mode, or fixed for a number.

    ``survey`` (alias ``estimated``) uses micro rows for categories the survey
    covers and falls back to re-arrest counts for the rest.
    """
    if isinstance(mode, (int, float)) and not isinstance(mode, bool):
        return fixed_lambda(float(mode))
    if mode == "estimated":
        mode = "survey"
    if mode not in ("survey", "rearrest"):
        raise DomainError(f"unknown lambda mode {mode!r}")
    micro_rows = list(micro_rows or ())
    surveyed = set()
    for r in micro_rows:
        surveyed |= set(r.reported_categories)
    values, sources = {}, {}
    for category in rate_table.categories:
        use_survey = mode == "survey" and category in surveyed
        if use_survey:
            for key in sorted({k for c, k, _ in rate_table.rates if c == category}):
                try:
                    values[(category, key)] = estimate_lambda_survey(micro_rows, category, key)
                    sources[(category, key)] = "survey"
                except EstimationError:
                    continue
        if cohort is None or when is None:
            if not use_survey:
                raise EstimationError(f"re-arrest estimate for {category} needs a cohort and date")
            continue
        for key, members in rearrest_groups(cohort, category, rate_table, when).items():
            if (category, key) not in values:
                values[(category, key)] = estimate_lambda_rearrest(members, category)
                sources[(category, key)] = "rearrest"
    return LambdaTable(values=values, mode=mode, sources=sources)


def _read_text(data) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data


def _dict_rows(data, required, what):
    reader = csv.DictReader(io.StringIO(_read_text(data), newline=""))
    missing = [c for c in required if c not in (reader.fieldnames or [])]
    if missing:
        raise DataError(f"{what}: missing columns {', '.join(missing)}")
    for rowno, rec in enumerate(reader, start=1):
        yield rowno, {k: (v or "").strip() for k, v in rec.items() if k is not None}


def _int_field(rec, name, rowno, what):
    try:
        v = int(rec[name])
    except ValueError:
        raise DataError(f"{what} row {rowno}: {name} is not an integer") from None
    return v


def parse_survey_aggregate(data) -> list[SurveyAggregateRow]:
    what = "survey aggregate"
    cols = ("year", "category", "sex", "race", "ethnicity", "age_band", "n_offenders", "n_arrested")
    rows = []
    for rowno, rec in _dict_rows(data, cols, what):
        try:
            key = make_key(rec["sex"], rec["race"], rec["ethnicity"], rec["age_band"])
        except DataError as exc:
            raise DataError(f"{what} row {rowno}: {exc}") from None
        if rec["category"] not in CATEGORY_NAMES:
            raise DataError(f"{what} row {rowno}: unknown category {rec['category']!r}")
        year = _int_field(rec, "year", rowno, what)
        off = _int_field(rec, "n_offenders", rowno, what)
        arr = _int_field(rec, "n_arrested", rowno, what)
        if off < 0 or arr < 0 or arr > off:
            raise DataError(f"{what} row {rowno}: need 0 <= n_arrested <= n_offenders, got {arr} > {off}"
                            if arr > off else f"{what} row {rowno}: negative count")
        rows.append(SurveyAggregateRow(year, rec["category"], key, off, arr))
    return rows


def parse_survey_micro(data) -> list[SurveyMicroRow]:
    """Read respondent rows. Anyone reporting selling is dropped from drug use."""
    what = "survey micro"
    cols = ("sex", "race", "ethnicity", "age_band", "reported_categories", "ever_arrested")
    rows = []
    for rowno, rec in _dict_rows(data, cols, what):
        try:
            key = make_key(rec["sex"], rec["race"], rec["ethnicity"], rec["age_band"])
        except DataError as exc:
            raise DataError(f"{what} row {rowno}: {exc}") from None
        cats = {c.strip() for c in rec["reported_categories"].split(";") if c.strip()}
        bad = cats - set(CATEGORY_NAMES)
        if bad:
            raise DataError(f"{what} row {rowno}: unknown category {sorted(bad)[0]!r}")
        if "drug_sell" in cats:
            cats.discard("drug_use")
        if rec["ever_arrested"] not in ("0", "1"):
            raise DataError(f"{what} row {rowno}: ever_arrested must be 0 or 1")
        rows.append(SurveyMicroRow(key, frozenset(cats), rec["ever_arrested"] == "1"))
    return rows


def parse_lambda_csv(data) -> LambdaTable:
    """Columns category,sex,race,age_band,lambda plus optional ethnicity.

    Without an ethnicity column a race of ``hispanic`` means the Hispanic row.
    """
    what = "lambda table"
    values = {}
    for rowno, rec in _dict_rows(data, ("category", "sex", "race", "age_band", "lambda"), what):
        race, eth = rec["race"], rec.get("ethnicity")
        if not eth:
            race, eth = ("any", "hispanic") if race == "hispanic" else (race, "non-hispanic")
        try:
            key = make_key(rec["sex"], race, eth, rec["age_band"])
            lam = float(rec["lambda"])
        except (DataError, ValueError) as exc:
            raise DataError(f"{what} row {rowno}: {exc}") from None
        if not 0.0 <= lam <= 1.0:
            raise DataError(f"{what} row {rowno}: lambda {lam} outside [0, 1]")
        values[(rec["category"], key)] = lam
    return LambdaTable(values=values, mode="table")


def load_published_lambdas() -> LambdaTable:
    return parse_lambda_csv(resources.files("raiaudit").joinpath("data/lambda_published.csv").read_text("utf-8"))


def rate_table_to_csv(table: ArrestRateTable) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "sex", "race", "ethnicity", "age_band", "year", "rate", "method", "fallback"])
    for (cat, key, year), r in table.rates.items():
        w.writerow([cat, *key, year, repr(float(r)), table.method, int((cat, key) in table.fallback)])
    return buf.getvalue().encode("utf-8")


def lambda_table_to_csv(table: LambdaTable) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["category", "sex", "race", "ethnicity", "age_band", "lambda", "source"])
    for (cat, key), v in sorted(table.values.items()):
        w.writerow([cat, *key, repr(float(v)), table.sources.get((cat, key), table.mode)])
    return buf.getvalue().encode("utf-8")
