"""Individuals, offense events and the criminal-history features scorers read.

A cohort is immutable once built. Events are kept per person in date order and
every derived feature is computed from events dated strictly before the
reference date.
"""
from __future__ import annotations

import csv
import io
import json
import re
from dataclasses import dataclass, field, replace
from datetime import date
from importlib import resources
from typing import Iterable, Mapping

from .errors import (
    CohortParseError,
    DomainError,
    DuplicateRowError,
    TaxonomyError,
    UnknownPersonError,
)

SEXES = ("male", "female")
RACES = ("black", "white", "other")
ETHNICITIES = ("hispanic", "non-hispanic", "unknown")
GRADES = ("felony", "misdemeanor")
CATEGORY_NAMES = (
    "drug_use", "drug_sell", "dui", "property", "simple_assault",
    "aggravated_assault", "robbery", "sex_offense", "other",
)
INCARCERATION_KINDS = ("local_jail", "state_prison", "state_jail", "life", "shock_probation")
DISPOSITIONS = (
    ("guilty", "not_guilty", "pending", "fta_charge")
    + tuple(f"incarceration:{k}" for k in INCARCERATION_KINDS)
    + ("none",)
)

CSV_COLUMNS = (
    "person_id", "birth_date", "sex", "race", "ethnicity", "offense_date",
    "category", "grade", "disposition", "disposition_date",
)

_ISO_DATE = re.compile(r"^\d{4}-\d{2}-\d{2}$")


@dataclass(frozen=True)
class Demographics:
    sex: str
    race: str
    ethnicity: str
    birth_date: date

    def __post_init__(self):
        if self.sex not in SEXES:
            raise DomainError(f"unknown sex {self.sex!r}")
        if self.race not in RACES:
            raise DomainError(f"unknown race {self.race!r}")
        if self.ethnicity not in ETHNICITIES:
            raise DomainError(f"unknown ethnicity {self.ethnicity!r}")


@dataclass(frozen=True)
class OffenseCategory:
    name: str
    violent: bool
    default_grade: str

    @property
    def drug(self) -> bool:
        return self.name in ("drug_use", "drug_sell")


class Taxonomy:
    """Ordered set of offense categories loaded from a taxonomy file."""

    def __init__(self, categories: Iterable[OffenseCategory]):
        cats = tuple(categories)
        if not cats:
            raise TaxonomyError("taxonomy is empty")
        seen = {}
        for c in cats:
            if c.name not in CATEGORY_NAMES:
                raise TaxonomyError(f"unknown offense category {c.name!r}")
            if c.default_grade not in GRADES:
                raise TaxonomyError(f"category {c.name!r}: bad default grade {c.default_grade!r}")
            if c.name in seen:
                raise TaxonomyError(f"category {c.name!r} listed twice")
            seen[c.name] = len(seen)
        self.categories = cats
        self._index = seen

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def __contains__(self, name) -> bool:
        return name in self._index

    def __len__(self):
        return len(self.categories)

    def __iter__(self):
        return iter(self.categories)

    def __eq__(self, other):
        return isinstance(other, Taxonomy) and self.categories == other.categories

    def __hash__(self):
        return hash(self.categories)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise TaxonomyError(f"unknown offense category {name!r}") from None

    def get(self, name: str) -> OffenseCategory:
        return self.categories[self.index(name)]

    def is_violent(self, name: str) -> bool:
        return self.get(name).violent


def parse_taxonomy(data) -> Taxonomy:
    if not isinstance(data, list):
        raise TaxonomyError("taxonomy must be a JSON array")
    cats = []
    for i, entry in enumerate(data):
        try:
            cats.append(OffenseCategory(
                name=str(entry["name"]),
                violent=bool(entry["violent"]),
                default_grade=str(entry["default_grade"]),
            ))
        except (KeyError, TypeError):
            raise TaxonomyError(f"taxonomy entry {i} needs name, violent and default_grade") from None
    return Taxonomy(cats)


def load_taxonomy(path=None) -> Taxonomy:
    """Load a taxonomy JSON file, or the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("raiaudit").joinpath("data/taxonomy.json").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise TaxonomyError(f"taxonomy is not valid JSON: {exc}") from None
    return parse_taxonomy(data)


@dataclass(frozen=True, slots=True)
class OffenseEvent:
    person_id: str
    date: date
    category: str
    grade: str
    observed: bool = True
    disposition: str = "none"
    disposition_date: date | None = None

    def __post_init__(self):
        if self.disposition not in DISPOSITIONS:
            raise DomainError(f"unknown disposition {self.disposition!r}")
        if self.grade not in GRADES:
            raise DomainError(f"unknown grade {self.grade!r}")
        if not self.observed and self.disposition != "none":
            raise DomainError("unobserved events cannot carry a disposition")
        if self.disposition_date is not None and self.disposition_date < self.date:
            raise DomainError("disposition_date precedes offense date")

    def sort_key(self):
        return (self.date, self.category, self.disposition,
                self.disposition_date or date.min, self.grade, not self.observed)


@dataclass(frozen=True)
class Person:
    person_id: str
    demographics: Demographics
    events: tuple[OffenseEvent, ...]

    def observed_events(self):
        return [e for e in self.events if e.observed]


@dataclass(frozen=True)
class HistorySummary:
    pending_charges: bool = False
    prior_misdemeanor_convictions: int = 0
    prior_felony_convictions: int = 0
    prior_violent_convictions: int = 0
    prior_fta_last_2y: int = 0
    prior_fta_total: int = 0
    prior_incarceration: bool = False
    prior_convictions_total: int = 0
    prior_drug_convictions: int = 0
    prior_arrests_by_category: Mapping[str, int] = field(default_factory=dict)
    age_at_reference: int = 0
    # extra inputs for the OGRS3 career term
    prior_arrests_total: int = 0
    months_since_first_arrest: int = 0


class Cohort:
    """People keyed by id, each with demographics and a sorted event list."""

    def __init__(self, people: Iterable[Person], taxonomy: Taxonomy):
        ordered = sorted(people, key=lambda p: p.person_id)
        index = {}
        for p in ordered:
            if p.person_id in index:
                raise DomainError(f"duplicate person id {p.person_id!r}")
            index[p.person_id] = p
            prev = None
            for e in p.events:
                if e.person_id != p.person_id:
                    raise DomainError(f"event for {e.person_id!r} filed under {p.person_id!r}")
                if e.category not in taxonomy:
                    raise TaxonomyError(f"unknown offense category {e.category!r}")
                if e.date <= p.demographics.birth_date:
                    raise DomainError(f"person {p.person_id}: offense dated on or before birth")
                if prev is not None and e.date < prev:
                    raise DomainError(f"person {p.person_id}: events not sorted")
                prev = e.date
        self.people = tuple(ordered)
        self.taxonomy = taxonomy
        self._index = index

    def __len__(self):
        return len(self.people)

    def __iter__(self):
        return iter(self.people)

    def __contains__(self, person_id):
        return person_id in self._index

    def __eq__(self, other):
        return (isinstance(other, Cohort) and self.taxonomy == other.taxonomy
                and self.people == other.people)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.person_id for p in self.people)

    def person(self, person_id) -> Person:
        try:
            return self._index[person_id]
        except KeyError:
            raise UnknownPersonError(f"unknown person id {person_id!r}") from None

    def subset(self, ids) -> "Cohort":
        return Cohort([self.person(i) for i in ids], self.taxonomy)

    def with_events(self, extra: Mapping[str, Iterable[OffenseEvent]]) -> "Cohort":
        """Return a new cohort with extra events merged into each person's list."""
        people = []
        for p in self.people:
            added = list(extra.get(p.person_id, ()))
            if added:
                merged = tuple(sorted(p.events + tuple(added), key=OffenseEvent.sort_key))
                p = replace(p, events=merged)
            people.append(p)
        unknown = set(extra) - set(self._index)
        if unknown:
            raise UnknownPersonError(f"unknown person id {sorted(unknown)[0]!r}")
        return Cohort(people, self.taxonomy)

    def observed_only(self) -> "Cohort":
        return Cohort([replace(p, events=tuple(p.observed_events())) for p in self.people
                       if any(e.observed for e in p.events)], self.taxonomy)


def _shift_years(d: date, years: int) -> date:
    try:
        return d.replace(year=d.year + years)
    except ValueError:  # Feb 29 in a non-leap year
        return d.replace(year=d.year + years, day=28)


def age_at(demographics: Demographics, when: date) -> int:
    """Whole years elapsed since birth. A Feb 29 birthday ticks over on Mar 1."""
    born = demographics.birth_date
    if when < born:
        raise DomainError(f"date {when} precedes birth date {born}")
    before_birthday = (when.month, when.day) < (born.month, born.day)
    return when.year - born.year - int(before_birthday)


def whole_months_between(start: date, end: date) -> int:
    months = (end.year - start.year) * 12 + (end.month - start.month)
    if end.day < start.day:
        months -= 1
    return max(months, 0)


def _disposed_by(event: OffenseEvent, reference: date) -> bool:
    return event.disposition_date is None or event.disposition_date <= reference


def summarize_events(events: Iterable[OffenseEvent], demographics: Demographics,
                     reference: date, taxonomy: Taxonomy) -> HistorySummary:
    """Fold a person's events into the history features at ``reference``."""
    fta_window_start = _shift_years(reference, -2)
    pending = False
    misd = fel = violent = fta2 = fta = convictions = drug = 0
    incarcerated = False
    by_cat: dict[str, int] = {}
    first = None
    total = 0
    for e in events:
        if not e.observed or e.date >= reference:
            continue
        total += 1
        by_cat[e.category] = by_cat.get(e.category, 0) + 1
        if first is None or e.date < first:
            first = e.date
        disposed = _disposed_by(e, reference)
        if e.disposition == "pending" or not disposed:
            pending = True
        if e.disposition == "fta_charge":
            fta += 1
            if e.date >= fta_window_start:
                fta2 += 1
        if not disposed:
            continue
        if e.disposition == "guilty":
            convictions += 1
            if e.grade == "felony":
                fel += 1
            else:
                misd += 1
            cat = taxonomy.get(e.category)
            if cat.violent:
                violent += 1
            if cat.drug:
                drug += 1
        elif e.disposition.startswith("incarceration:"):
            incarcerated = True
    return HistorySummary(
        pending_charges=pending,
        prior_misdemeanor_convictions=misd,
        prior_felony_convictions=fel,
        prior_violent_convictions=violent,
        prior_fta_last_2y=fta2,
        prior_fta_total=fta,
        prior_incarceration=incarcerated,
        prior_convictions_total=convictions,
        prior_drug_convictions=drug,
        prior_arrests_by_category=by_cat,
        age_at_reference=age_at(demographics, reference),
        prior_arrests_total=total,
        months_since_first_arrest=0 if first is None else whole_months_between(first, reference),
    )


def history_at(cohort: Cohort, person_id, reference_date: date) -> HistorySummary:
    p = cohort.person(person_id)
    return summarize_events(p.events, p.demographics, reference_date, cohort.taxonomy)


def _parse_date(text, what, row):
    if not _ISO_DATE.match(text or ""):
        raise CohortParseError(f"malformed {what} {text!r}", row)
    try:
        return date.fromisoformat(text)
    except ValueError:
        raise CohortParseError(f"invalid {what} {text!r}", row) from None


def _parse_choice(text, allowed, what, row):
    if text not in allowed:
        raise CohortParseError(f"unknown {what} {text!r}", row)
    return text


def parse_cohort(data, taxonomy: Taxonomy | None = None) -> Cohort:
    """Parse cohort CSV bytes (or text). Rows are numbered from 1 after the header.

    An optional trailing ``observed`` column (0/1) is accepted so augmented
    exports read back in.
    """
    if taxonomy is None:
        taxonomy = load_taxonomy()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8-sig")
        except UnicodeDecodeError as exc:
            raise CohortParseError(f"input is not UTF-8: {exc}") from None
    reader = csv.reader(io.StringIO(data, newline=""))
    header = next(reader, None)
    if header is None:
        raise CohortParseError("empty input: missing header")
    header = [h.strip() for h in header]
    has_observed = header == list(CSV_COLUMNS) + ["observed"]
    if tuple(header) != CSV_COLUMNS and not has_observed:
        raise CohortParseError(f"header must be {','.join(CSV_COLUMNS)}")
    width = len(header)

    demo: dict[str, Demographics] = {}
    events: dict[str, list[OffenseEvent]] = {}
    seen = set()
    for rowno, rec in enumerate(reader, start=1):
        if not rec or all(not f.strip() for f in rec):
            continue
        if len(rec) != width:
            raise CohortParseError(f"expected {width} fields, got {len(rec)}", rowno)
        f = dict(zip(header, (x.strip() for x in rec)))
        pid = f["person_id"]
        if not pid:
            raise CohortParseError("empty person_id", rowno)
        birth = _parse_date(f["birth_date"], "birth_date", rowno)
        odate = _parse_date(f["offense_date"], "offense_date", rowno)
        sex = _parse_choice(f["sex"], SEXES, "sex", rowno)
        race = _parse_choice(f["race"], RACES, "race", rowno)
        eth = _parse_choice(f["ethnicity"], ETHNICITIES, "ethnicity", rowno)
        if f["category"] not in taxonomy:
            raise TaxonomyError(f"row {rowno}: unknown offense category {f['category']!r}")
        grade = f["grade"] or taxonomy.get(f["category"]).default_grade
        _parse_choice(grade, GRADES, "grade", rowno)
        disp = f["disposition"] or "none"
        _parse_choice(disp, DISPOSITIONS, "disposition", rowno)
        ddate = _parse_date(f["disposition_date"], "disposition_date", rowno) if f["disposition_date"] else None
        observed = True
        if has_observed:
            if f["observed"] not in ("0", "1"):
                raise CohortParseError(f"observed must be 0 or 1, got {f['observed']!r}", rowno)
            observed = f["observed"] == "1"
        if odate <= birth:
            raise CohortParseError("offense_date must follow birth_date", rowno)
        if ddate is not None and ddate < odate:
            raise CohortParseError("disposition_date precedes offense_date", rowno)
        if not observed and disp != "none":
            raise CohortParseError("unobserved event with a disposition", rowno)
        d = Demographics(sex, race, eth, birth)
        if demo.setdefault(pid, d) != d:
            raise CohortParseError(f"person {pid!r} has inconsistent demographics", rowno)
        key = (pid, odate, f["category"], disp)
        if observed:
            if key in seen:
                raise DuplicateRowError(f"duplicate row for {key[0]!r} {odate} {key[2]} {disp}", rowno)
            seen.add(key)
        events.setdefault(pid, []).append(
            OffenseEvent(pid, odate, f["category"], grade, observed, disp, ddate))
    people = [Person(pid, demo[pid], tuple(sorted(evs, key=OffenseEvent.sort_key)))
              for pid, evs in events.items()]
    return Cohort(people, taxonomy)


def serialize_cohort(cohort: Cohort, include_observed: bool | None = None) -> bytes:
    """Canonical CSV: rows ordered by person id, then event order."""
    if include_observed is None:
        include_observed = any(not e.observed for p in cohort for e in p.events)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS + (("observed",) if include_observed else ()))
    for p in cohort:
        d = p.demographics
        for e in p.events:
            if not include_observed and not e.observed:
                continue
            row = [p.person_id, d.birth_date.isoformat(), d.sex, d.race, d.ethnicity,
                   e.date.isoformat(), e.category, e.grade, e.disposition,
                   e.disposition_date.isoformat() if e.disposition_date else ""]
            if include_observed:
                row.append("1" if e.observed else "0")
            w.writerow(row)
    return buf.getvalue().encode("utf-8")
