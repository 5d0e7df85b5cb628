"""Synthetic populations with known crime and arrest processes.

Crimes per person, year and category follow a Poisson law sampled by
inverse CDF against an integer table, so draws do not depend on platform
floating-point behaviour. Each crime is independently arrested with the
group's arrest rate; only people with at least one arrest enter the
observed cohort.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal, localcontext

import numpy as np

from .cohort import (DISPOSITIONS, ETHNICITIES, RACES, SEXES, Cohort, Demographics, OffenseEvent,
                     Person, Taxonomy, age_at, load_taxonomy)
from .errors import ConfigError
from .rates import (HISPANIC_KEYED, ArrestRateTable, GroupKey, SurveyAggregateRow, SurveyMicroRow,
                    band_for_age, resolve_identity)
from .seeding import generator, mix_seed

SCALE_BITS = 53
SCALE = 1 << SCALE_BITS
SURVEY_BANDS = {c: ("18-34", "35+") for c in HISPANIC_KEYED}
DEFAULT_BANDS = ("18-29", "30+")


def bands_for(category):
    return SURVEY_BANDS.get(category, DEFAULT_BANDS)


def poisson_cdf_table(mu: float, tail=Decimal(1) / SCALE) -> np.ndarray:
    """Cumulative Poisson(mu) probabilities scaled to integers out of 2**53.

    Computed in 50-digit decimal arithmetic; the table stops once the
    remaining tail is below one unit and its last entry is pinned to 2**53.
    """
    if mu < 0:
        raise ConfigError(f"intensity {mu} must be non-negative")
    if mu == 0:
        return np.array([SCALE], dtype=np.uint64)
    with localcontext() as ctx:
        ctx.prec = 50
        m = Decimal(repr(float(mu)))
        pmf = (-m).exp()
        cdf = pmf
        out = [int(cdf * SCALE)]
        k = 0
        while Decimal(1) - cdf > tail:
            k += 1
            pmf = pmf * m / k
            cdf += pmf
            out.append(int(cdf * SCALE))
    out[-1] = SCALE
    return np.array(out, dtype=np.uint64)


def poisson_draws(rng: np.random.Generator, mu: float, shape) -> np.ndarray:
    table = poisson_cdf_table(mu)
    u = rng.integers(0, SCALE, size=shape, dtype=np.uint64)
    return np.searchsorted(table, u, side="right").astype(np.int64)


def bernoulli_draws(rng: np.random.Generator, p: float, n: int) -> np.ndarray:
    threshold = int(Decimal(repr(float(p))) * SCALE)
    return rng.integers(0, SCALE, size=n, dtype=np.uint64) < np.uint64(min(threshold, SCALE))


@dataclass(frozen=True)
class GroupSpec:
    name: str
    sex: str
    race: str
    ethnicity: str
    size: int
    age_min: int = 18
    age_max: int = 60
    intensity: dict = field(default_factory=dict)  # category -> crimes per person-year
    arrest_rate: dict = field(default_factory=dict)  # category -> probability


@dataclass(frozen=True)
class PopulationSpec:
    groups: tuple
    year_range: tuple
    seed: int
    dispositions: dict = field(default_factory=lambda: {"guilty": 0.5, "not_guilty": 0.3, "none": 0.2})

    def __post_init__(self):
        start, end = self.year_range
        if end < start:
            raise ConfigError("year_range is empty")
        names = [g.name for g in self.groups]
        if len(set(names)) != len(names):
            raise ConfigError("group names must be unique")
        for g in self.groups:
            if g.sex not in SEXES or g.race not in RACES or g.ethnicity not in ETHNICITIES:
                raise ConfigError(f"group {g.name}: bad demographics")
            if g.size < 0:
                raise ConfigError(f"group {g.name}: negative size")
            if not 18 <= g.age_min <= g.age_max:
                raise ConfigError(f"group {g.name}: need 18 <= age_min <= age_max")
            for c, mu in g.intensity.items():
                if mu < 0:
                    raise ConfigError(f"group {g.name}: negative intensity for {c}")
            for c, p in g.arrest_rate.items():
                if not 0 <= p <= 1:
                    raise ConfigError(f"group {g.name}: arrest rate for {c} outside [0, 1]")
        total = sum(self.dispositions.values())
        if abs(total - 1.0) > 1e-9 or any(v < 0 for v in self.dispositions.values()):
            raise ConfigError("disposition probabilities must be non-negative and sum to 1")
        bad = set(self.dispositions) - set(DISPOSITIONS)
        if bad:
            raise ConfigError(f"unknown disposition {sorted(bad)[0]!r}")

    @property
    def categories(self) -> tuple:
        cats = set()
        for g in self.groups:
            cats |= set(g.intensity)
        return tuple(sorted(cats))


def parse_population_spec(data) -> PopulationSpec:
    try:
        groups = tuple(
            GroupSpec(
                name=str(g["name"]), sex=g["sex"], race=g["race"], ethnicity=g["ethnicity"],
                size=int(g["size"]), age_min=int(g.get("age_min", 18)), age_max=int(g.get("age_max", 60)),
                intensity={k: float(v) for k, v in g.get("intensity", {}).items()},
                arrest_rate={k: float(v) for k, v in g.get("arrest_rate", {}).items()},
            )
            for g in data["groups"]
        )
        kwargs = {}
        if "dispositions" in data:
            kwargs["dispositions"] = {k: float(v) for k, v in data["dispositions"].items()}
        return PopulationSpec(groups, tuple(int(y) for y in data["year_range"]), int(data["seed"]), **kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed population spec: {exc!r}") from None


def load_population_spec(path) -> PopulationSpec:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_population_spec(json.load(fh))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read population spec {path}: {exc}") from None


@dataclass
class SynthResult:
    ground_truth: Cohort
    observed: Cohort
    rates: ArrestRateTable
    survey_rows: list
    micro_rows: list


def _disposition_sampler(spec: PopulationSpec):
    names = sorted(spec.dispositions)
    cum = np.cumsum([spec.dispositions[n] for n in names])
    cum[-1] = 1.0
    thresholds = np.array([int(Decimal(repr(float(c))) * SCALE) for c in cum], dtype=np.uint64)
    thresholds[-1] = SCALE
    return names, thresholds


def true_rate_table(spec: PopulationSpec) -> ArrestRateTable:
    """Arrest rates keyed the way the audit looks them up."""
    start, end = spec.year_range
    rates = {}
    for g in spec.groups:
        demo = Demographics(g.sex, g.race, g.ethnicity, date(1970, 1, 1))
        for c, p in g.arrest_rate.items():
            race, eth = resolve_identity(c, demo)
            for band in bands_for(c):
                key = GroupKey(g.sex, race, eth, band)
                for y in range(start, end + 1):
                    prev = rates.setdefault((c, key, y), p)
                    if prev != p:
                        raise ConfigError(f"groups sharing lookup key {key.label()} disagree on {c} arrest rate")
    return ArrestRateTable(rates, "truth")


def generate(spec: PopulationSpec, taxonomy: Taxonomy | None = None) -> SynthResult:
    taxonomy = taxonomy or load_taxonomy()
    for c in spec.categories:
        if c not in taxonomy:
            raise ConfigError(f"category {c!r} not in taxonomy")
    start, end = spec.year_range
    n_years = end - start + 1
    disp_names, disp_thresholds = _disposition_sampler(spec)
    people = []
    survey: dict = {}
    micro = []
    for g in spec.groups:
        rng = generator(mix_seed(spec.seed, "people", g.name))
        ages = rng.integers(g.age_min, g.age_max + 1, size=g.size)
        offsets = rng.integers(0, 365, size=g.size)
        births = [date(start - int(a), 1, 1) - timedelta(days=int(d)) for a, d in zip(ages, offsets)]
        events: list[list] = [[] for _ in range(g.size)]
        reported: list[set] = [set() for _ in range(g.size)]
        arrested_any = np.zeros(g.size, dtype=bool)
        for c in spec.categories:
            mu = g.intensity.get(c, 0.0)
            p = g.arrest_rate.get(c, 0.0)
            crng = generator(mix_seed(spec.seed, "crimes", g.name, c))
            counts = poisson_draws(crng, mu, (g.size, n_years))
            total = int(counts.sum())
            person_idx, year_idx = np.nonzero(counts)
            reps = counts[person_idx, year_idx]
            person_of = np.repeat(person_idx, reps)
            year_of = np.repeat(year_idx, reps) + start
            days = crng.integers(0, 365, size=total)
            arrested = bernoulli_draws(crng, p, total)
            disp_u = crng.integers(0, SCALE, size=total, dtype=np.uint64)
            disp_pick = np.searchsorted(disp_thresholds, disp_u, side="right")
            lag = crng.integers(30, 401, size=total)
            grade = taxonomy.get(c).default_grade
            for k in range(total):
                i = int(person_of[k])
                when = date(int(year_of[k]), 1, 1) + timedelta(days=int(days[k]))
                if arrested[k]:
                    disp = disp_names[int(disp_pick[k])]
                    ddate = None if disp in ("none", "pending") else when + timedelta(days=int(lag[k]))
                    events[i].append(OffenseEvent(f"{g.name}-{i:06d}", when, c, grade, True, disp, ddate))
                    arrested_any[i] = True
                else:
                    events[i].append(OffenseEvent(f"{g.name}-{i:06d}", when, c, grade, False))
            # crime-level survey aggregate: every crime is one offender record
            demo0 = Demographics(g.sex, g.race, g.ethnicity, date(1970, 1, 1))
            race, eth = resolve_identity(c, demo0)
            for k in range(total):
                i = int(person_of[k])
                y = int(year_of[k])
                band = band_for_age(age_at(Demographics(g.sex, g.race, g.ethnicity, births[i]),
                                           date(y, 7, 1)), bands_for(c))
                key = (y, c, GroupKey(g.sex, race, eth, band))
                cell = survey.setdefault(key, [0, 0])
                cell[0] += 1
                cell[1] += int(arrested[k])
            if c in HISPANIC_KEYED:
                for i in np.unique(person_of).tolist():
                    reported[i].add(c)
        for i in range(g.size):
            pid = f"{g.name}-{i:06d}"
            demo = Demographics(g.sex, g.race, g.ethnicity, births[i])
            evs = tuple(sorted(events[i], key=OffenseEvent.sort_key))
            people.append(Person(pid, demo, evs))
            age_end = age_at(demo, date(end, 7, 1))
            race, eth = resolve_identity("dui", demo)
            micro.append(SurveyMicroRow(GroupKey(g.sex, race, eth, band_for_age(age_end, SURVEY_BANDS["dui"])),
                                        frozenset(reported[i]), bool(arrested_any[i])))
    ground = Cohort(people, taxonomy)
    observed = ground.observed_only()
    rows = [SurveyAggregateRow(y, c, key, n_off, n_arr)
            for (y, c, key), (n_off, n_arr) in sorted(survey.items(), key=lambda kv: (kv[0][0], kv[0][1], tuple(kv[0][2])))]
    return SynthResult(ground, observed, true_rate_table(spec), rows, micro)


def disparity_spec(size_per_group=8500, seed=2024, categories=("property", "simple_assault", "drug_use", "dui"),
                   intensity=0.15, white_rate=0.1, ratio=2.0, year_range=(2010, 2019),
                   hispanic_size=0) -> PopulationSpec:
    """Two groups with equal crime intensity and an arrest-rate ratio of ``ratio``."""
    def group(name, race, eth, rates, size):
        return GroupSpec(name, "male", race, eth, size, 18, 55,
                         {c: intensity for c in categories}, rates)
    high = white_rate * ratio
    groups = [group("black", "black", "non-hispanic", {c: high for c in categories}, size_per_group),
              group("white", "white", "non-hispanic", {c: white_rate for c in categories}, size_per_group)]
    if hispanic_size:
        # Hispanic rows exist only for drug and DUI; elsewhere they share the White rate
        rates = {c: high if c in HISPANIC_KEYED else white_rate for c in categories}
        groups.append(group("hispanic", "white", "hispanic", rates, hispanic_size))
    return PopulationSpec(tuple(groups), tuple(year_range), seed,
                          {"guilty": 0.5, "not_guilty": 0.2, "pending": 0.05, "fta_charge": 0.1,
                           "incarceration:local_jail": 0.05, "none": 0.1})


def survey_to_csv(rows) -> bytes:
    lines = ["year,category,sex,race,ethnicity,age_band,n_offenders,n_arrested"]
    for r in rows:
        k = r.group
        lines.append(f"{r.year},{r.category},{k.sex},{k.race},{k.ethnicity},{k.age_band},{r.n_offenders},{r.n_arrested}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def micro_to_csv(rows) -> bytes:
    lines = ["sex,race,ethnicity,age_band,reported_categories,ever_arrested"]
    for r in rows:
        k = r.group
        lines.append(f"{k.sex},{k.race},{k.ethnicity},{k.age_band},{';'.join(sorted(r.reported_categories))},{int(r.ever_arrested)}")
    return ("\n".join(lines) + "\n").encode("utf-8")
