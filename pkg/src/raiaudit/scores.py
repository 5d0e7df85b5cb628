"""NCA, NVCA, VPRAI and OGRS3 scoring plus normalization to [0, 1]."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import date
from enum import Enum
from importlib import resources

from .cohort import Cohort, HistorySummary, Person, Taxonomy, age_at, summarize_events
from .errors import ConfigError, DomainError


class RaiKind(str, Enum):
    NCA = "NCA"
    NVCA = "NVCA"
    VPRAI = "VPRAI"
    OGRS3 = "OGRS3"

    def __str__(self):
        return self.value


# report column order
RAI_ORDER = (RaiKind.NCA, RaiKind.NVCA, RaiKind.OGRS3, RaiKind.VPRAI)


@dataclass(frozen=True)
class CurrentOffense:
    category: str
    violent: bool
    grade: str

    @property
    def felony(self) -> bool:
        return self.grade == "felony"


# (upper bound of points, score); rows are checked in order
NCA_TABLE = ((0, 1), (2, 2), (4, 3), (6, 4), (8, 5), (13, 6))
NVCA_TABLE = ((1, 1), (2, 2), (3, 3), (4, 4), (5, 5), (7, 6))


def _table_lookup(points, table, name):
    if isinstance(points, bool) or not isinstance(points, int):
        raise DomainError(f"{name} points must be an integer, got {points!r}")
    if points < 0 or points > table[-1][0]:
        raise DomainError(f"{name} points {points} outside 0..{table[-1][0]}")
    for upper, score in table:
        if points <= upper:
            return score
    raise AssertionError("unreachable")


def _tiered(n, high, high_pts, low_pts):
    if n >= high:
        return high_pts
    return low_pts if n >= 1 else 0


def nca_points(history: HistorySummary, age: int) -> int:
    pts = 2 if age <= 22 else 0
    pts += 3 if history.pending_charges else 0
    pts += 1 if history.prior_misdemeanor_convictions > 0 else 0
    pts += 1 if history.prior_felony_convictions > 0 else 0
    pts += _tiered(history.prior_violent_convictions, 3, 2, 1)
    pts += _tiered(history.prior_fta_last_2y, 2, 2, 1)
    pts += 2 if history.prior_incarceration else 0
    return pts


def nca_score(points: int) -> int:
    return _table_lookup(points, NCA_TABLE, "NCA")


def nvca_points(history: HistorySummary, current: CurrentOffense, age: int) -> int:
    pts = 0
    if current.violent:
        pts += 2
        if age <= 20:
            pts += 1
    pts += 1 if history.pending_charges else 0
    pts += 1 if history.prior_convictions_total > 0 else 0
    pts += _tiered(history.prior_violent_convictions, 3, 2, 1)
    return pts


def nvca_score(history: HistorySummary, current: CurrentOffense, age: int) -> int:
    return _table_lookup(nvca_points(history, current, age), NVCA_TABLE, "NVCA")


def vprai_score(history: HistorySummary, current: CurrentOffense) -> int:
    # outstanding warrants, residence and employment are not in the records and score 0
    pts = 1 if current.felony else 0
    pts += 1 if history.pending_charges else 0
    pts += 1 if history.prior_convictions_total > 0 else 0
    pts += 1 if history.prior_violent_convictions >= 2 else 0
    pts += 2 if history.prior_fta_total >= 2 else 0
    pts += 1 if history.prior_drug_convictions > 0 else 0
    return pts


@dataclass(frozen=True)
class AgeSexBand:
    sex: str
    age_min: int
    age_max: int | None
    coeff: float

    def contains(self, sex, age) -> bool:
        return sex == self.sex and age >= self.age_min and (self.age_max is None or age <= self.age_max)


@dataclass(frozen=True)
class Ogrs3Coefficients:
    intercept: float
    age_sex_bands: tuple[AgeSexBand, ...]
    offense_terms: dict
    career_term_weight: float
    career_constant: float

    def band_term(self, sex, age) -> float:
        for band in self.age_sex_bands:
            if band.contains(sex, age):
                return band.coeff
        raise ConfigError(f"no OGRS3 age/sex band covers sex={sex} age={age}")

    def offense_term(self, category) -> float:
        try:
            return self.offense_terms[category]
        except KeyError:
            raise ConfigError(f"no OGRS3 offense term for category {category!r}") from None

    def check_covers(self, taxonomy: Taxonomy):
        missing = [n for n in taxonomy.names if n not in self.offense_terms]
        if missing:
            raise ConfigError(f"OGRS3 offense terms missing for {', '.join(missing)}")


def parse_ogrs3(data) -> Ogrs3Coefficients:
    try:
        bands = tuple(
            AgeSexBand(str(b["sex"]), int(b["age_min"]),
                       None if b.get("age_max") is None else int(b["age_max"]), float(b["coeff"]))
            for b in data["age_sex_bands"]
        )
        coeffs = Ogrs3Coefficients(
            intercept=float(data["intercept"]),
            age_sex_bands=bands,
            offense_terms={str(k): float(v) for k, v in data["offense_terms"].items()},
            career_term_weight=float(data["career_term_weight"]),
            career_constant=float(data["career_constant_months"]),
        )
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise ConfigError(f"malformed OGRS3 coefficient file: {exc!r}") from None
    if coeffs.career_constant <= 0:
        raise ConfigError("career_constant_months must be positive")
    return coeffs


def load_ogrs3(path=None) -> Ogrs3Coefficients:
    """Read coefficients from JSON; ``None`` loads the packaged illustrative fixture."""
    try:
        if path is None:
            text = resources.files("raiaudit").joinpath("data/ogrs3_fixture.json").read_text("utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        return parse_ogrs3(json.loads(text))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read OGRS3 coefficients: {exc}") from None


def ogrs3_linear(sex: str, age: int, history: HistorySummary, current: CurrentOffense,
                 coeffs: Ogrs3Coefficients) -> float:
    # sanction occasions: prior convictions plus prior arrests without one, i.e. every prior arrest
    sanctions = history.prior_arrests_total
    months = history.months_since_first_arrest if sanctions else 0
    career = math.log((1 + sanctions) / (months + coeffs.career_constant))
    return (coeffs.intercept + coeffs.band_term(sex, age) + coeffs.offense_term(current.category)
            + coeffs.career_term_weight * career)


def logistic(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def ogrs3_score(demographics, history: HistorySummary, current: CurrentOffense,
                coeffs: Ogrs3Coefficients) -> float:
    return logistic(ogrs3_linear(demographics.sex, history.age_at_reference, history, current, coeffs))


@dataclass(frozen=True)
class NormalizationConfig:
    spans: dict = field(default_factory=lambda: {
        RaiKind.NCA: (1.0, 5.0),
        RaiKind.NVCA: (1.0, 5.0),
        RaiKind.VPRAI: (0.0, 5.0),
        RaiKind.OGRS3: (0.0, 1.0),
    })

    def __post_init__(self):
        for kind, (_, span) in self.spans.items():
            if not span > 0:
                raise ConfigError(f"normalization span for {kind} must be positive")

    @classmethod
    def from_dict(cls, data) -> "NormalizationConfig":
        spans = dict(cls().spans)
        for name, entry in (data or {}).items():
            try:
                spans[RaiKind(name)] = (float(entry["span_min"]), float(entry["span"]))
            except (ValueError, KeyError, TypeError):
                raise ConfigError(f"bad normalization entry for {name!r}") from None
        return cls(spans)


def normalize(raw: float, kind: RaiKind, config: NormalizationConfig | None = None) -> float:
    lo, span = (config or DEFAULT_NORMALIZATION).spans[RaiKind(kind)]
    return min(1.0, max(0.0, (raw - lo) / span))


DEFAULT_NORMALIZATION = NormalizationConfig()


@dataclass(frozen=True)
class ScoreBundle:
    raw: dict
    normalized: dict
    reference_date: date


def score_history(demographics, history: HistorySummary, current: CurrentOffense,
                  coeffs: Ogrs3Coefficients, norm: NormalizationConfig | None = None,
                  reference_date: date | None = None) -> ScoreBundle:
    age = history.age_at_reference
    raw = {
        RaiKind.NCA: nca_score(nca_points(history, age)),
        RaiKind.NVCA: nvca_score(history, current, age),
        RaiKind.VPRAI: vprai_score(history, current),
        RaiKind.OGRS3: ogrs3_score(demographics, history, current, coeffs),
    }
    normalized = {k: normalize(v, k, norm) for k, v in raw.items()}
    return ScoreBundle(raw, normalized, reference_date)


def current_offense_for(person: Person, cutoff: date, taxonomy: Taxonomy):
    """Last observed event on or before ``cutoff``, or None."""
    last = None
    for e in person.events:
        if e.observed and e.date <= cutoff:
            last = e
    if last is None:
        return None
    return last, CurrentOffense(last.category, taxonomy.is_violent(last.category), last.grade)


def score_person(person: Person, cutoff: date, taxonomy: Taxonomy, coeffs: Ogrs3Coefficients,
                 norm: NormalizationConfig | None = None) -> ScoreBundle | None:
    """Score a person at their latest arrest on or before ``cutoff``.

    History is taken just before that arrest, which plays the role of the
    current offense. Returns None when the person has no such arrest.
    """
    found = current_offense_for(person, cutoff, taxonomy)
    if found is None:
        return None
    event, current = found
    history = summarize_events(person.events, person.demographics, event.date, taxonomy)
    return score_history(person.demographics, history, current, coeffs, norm, event.date)


def score_cohort(cohort: Cohort, cutoff: date, coeffs: Ogrs3Coefficients,
                 norm: NormalizationConfig | None = None) -> dict:
    out = {}
    for p in cohort:
        bundle = score_person(p, cutoff, cohort.taxonomy, coeffs, norm)
        if bundle is not None:
            out[p.person_id] = bundle
    return out


__all__ = [
    "RaiKind", "RAI_ORDER", "CurrentOffense", "nca_points", "nca_score", "nvca_points",
    "nvca_score", "vprai_score", "Ogrs3Coefficients", "AgeSexBand", "load_ogrs3",
    "parse_ogrs3", "ogrs3_score", "ogrs3_linear", "NormalizationConfig", "normalize",
    "ScoreBundle", "score_history", "score_person", "score_cohort", "age_at",
]
