"""Unobserved-crime budgets and their weighted assignment to cohort members.

For each offense category and demographic group the total number of crimes
implied by the group's arrests and arrest rate is scaled by the re-offense
rate; the excess over observed arrests is handed out to group members, with
probability rising in each member's recent arrest count.
"""
from __future__ import annotations

from dataclasses import dataclass
from datetime import date
from fractions import Fraction

import numpy as np

from .cohort import Cohort, OffenseEvent, age_at
from .errors import ContractError, DomainError
from .rates import ArrestRateTable, GroupKey, LambdaTable, parse_band, resolve_identity
from .seeding import generator, mix_seed


@dataclass(frozen=True)
class AugmentParams:
    omega: float
    delta_t: int
    master_seed: int
    year_range: tuple[int, int]

    def __post_init__(self):
        start, end = self.year_range
        if end < start:
            raise DomainError(f"year range {self.year_range} is empty")
        if not (isinstance(self.delta_t, int) and self.delta_t >= 1):
            raise DomainError(f"delta_t must be a positive integer, got {self.delta_t!r}")
        if self.delta_t > end - start + 1:
            raise DomainError(f"delta_t {self.delta_t} exceeds the {end - start + 1}-year range")
        if not (np.isfinite(self.omega) and self.omega >= 0):
            raise DomainError(f"omega must be finite and non-negative, got {self.omega!r}")


def round_half_up(x: Fraction) -> int:
    return (x + Fraction(1, 2)).__floor__()


def unobserved_count(arrests: int, ar: float, lam: float) -> int:
    """round_half_up(lam * A / AR - A), floored at zero, in exact arithmetic."""
    if not 0 < ar <= 1:
        raise DomainError(f"arrest rate {ar} outside (0, 1]")
    if lam < ar or lam > 1:
        raise ContractError(f"re-offense rate {lam} must lie in [AR={ar}, 1]; clamp it first")
    if arrests < 0:
        raise DomainError("arrest count must be non-negative")
    a = Fraction(arrests)
    return max(0, round_half_up(Fraction(lam) * a / Fraction(ar) - a))


def per_year_budget(total: int, delta_t: int) -> int:
    return round_half_up(Fraction(total, delta_t))


@dataclass(frozen=True)
class AssignmentWeights:
    ids: tuple
    probabilities: np.ndarray


def _weights(counts: np.ndarray, budget: int, group_size: int, omega: float) -> np.ndarray:
    raw = budget / group_size + omega * counts.astype(float)
    total = raw.sum()
    if total <= 0:
        return np.full(len(counts), 1.0 / len(counts))
    return raw / total


def assignment_weights(members, budget: int, group_size: int, omega: float) -> AssignmentWeights:
    """members: sequence of (id, windowed arrest count)."""
    members = list(members)
    if not members:
        raise DomainError("cannot weight an empty member list")
    if group_size < 1:
        raise DomainError("group size must be at least 1")
    if budget < 0:
        raise DomainError("budget must be non-negative")
    ids = tuple(m[0] for m in members)
    counts = np.array([m[1] for m in members], dtype=float)
    return AssignmentWeights(ids, _weights(counts, budget, group_size, omega))


@dataclass(frozen=True)
class Window:
    target_year: int
    first_year: int
    event_years: tuple[int, ...]
    full_budget: bool


def windows(year_range, delta_t) -> list[Window]:
    """First window spans start..start+delta_t and receives the whole budget;
    each later year y looks back over y-delta_t..y and receives budget/delta_t."""
    start, end = year_range
    first_end = min(start + delta_t, end)
    out = [Window(first_end, start, tuple(range(start, first_end + 1)), True)]
    for y in range(first_end + 1, end + 1):
        out.append(Window(y, y - delta_t, (y,), False))
    return out


@dataclass
class Draws:
    category: str
    target_year: int
    group: object
    budget: int
    persons: np.ndarray  # cohort positions
    years: np.ndarray


@dataclass
class AugmentPlan:
    cohort: Cohort
    categories: tuple[str, ...]
    draws: list

    def counts(self) -> np.ndarray:
        """Synthetic crimes per (person, category) in cohort order."""
        out = np.zeros((len(self.cohort), len(self.categories)), dtype=np.int64)
        col = {c: i for i, c in enumerate(self.categories)}
        for d in self.draws:
            np.add.at(out[:, col[d.category]], d.persons, 1)
        return out

    def totals(self) -> dict:
        out: dict = {}
        for d in self.draws:
            out[(d.category, d.group)] = out.get((d.category, d.group), 0) + len(d.persons)
        return out


class _CohortIndex:
    """Per-person arrays shared by all categories."""

    def __init__(self, cohort: Cohort, year_range):
        self.start, self.end = year_range
        self.years = np.arange(self.start, self.end + 1)
        n, ny = len(cohort), len(self.years)
        self.ages = np.full((n, ny), -1, dtype=np.int64)
        for i, p in enumerate(cohort):
            for j, y in enumerate(self.years):
                ref = date(int(y), 7, 1)
                if ref >= p.demographics.birth_date:
                    self.ages[i, j] = age_at(p.demographics, ref)
        self.arrests: dict[str, np.ndarray] = {}
        for c in cohort.taxonomy.names:
            self.arrests[c] = np.zeros((n, ny), dtype=np.int64)
        for i, p in enumerate(cohort):
            for e in p.events:
                if e.observed and self.start <= e.date.year <= self.end:
                    self.arrests[e.category][i, e.date.year - self.start] += 1
        self.cumulative = {c: np.concatenate([np.zeros((n, 1), dtype=np.int64), a.cumsum(axis=1)], axis=1)
                           for c, a in self.arrests.items()}

    def window_counts(self, category, first_year, last_year) -> np.ndarray:
        lo = max(first_year, self.start) - self.start
        hi = min(last_year, self.end) - self.start
        cs = self.cumulative[category]
        return cs[:, hi + 1] - cs[:, lo]


def _group_ids(cohort: Cohort, idx: _CohortIndex, category: str, table: ArrestRateTable):
    """Group index per (person, year) for ``category`` (-1 = outside every band) and the key list."""
    bands = table.bands(category)
    spans = [parse_band(b) for b in bands]
    band_idx = np.full(idx.ages.shape, -1, dtype=np.int64)
    for bi, (lo, hi) in enumerate(spans):
        mask = idx.ages >= lo
        if hi is not None:
            mask &= idx.ages <= hi
        band_idx[mask] = bi
    identities: dict = {}
    ident = np.empty(len(cohort), dtype=np.int64)
    for i, p in enumerate(cohort):
        race, eth = resolve_identity(category, p.demographics)
        ident[i] = identities.setdefault((p.demographics.sex, race, eth), len(identities))
    keys = [GroupKey(s, r, e, b) for (s, r, e) in identities for b in bands]
    gid = np.where(band_idx >= 0, ident[:, None] * len(bands) + band_idx, -1)
    return gid, keys


def _event_dates(cohort: Cohort, persons, years):
    out = []
    for i, y in zip(persons.tolist(), years.tolist()):
        born = cohort.people[i].demographics.birth_date
        try:
            adult = born.replace(year=born.year + 18)
        except ValueError:
            adult = date(born.year + 18, 3, 1)
        out.append(max(date(y, 7, 1), adult))
    return out


def plan_unobserved(cohort: Cohort, rate_table: ArrestRateTable, lambda_table: LambdaTable,
                    params: AugmentParams) -> AugmentPlan:
    """Draw every synthetic crime without building events; see ``assign_unobserved``."""
    idx = _CohortIndex(cohort, params.year_range)
    categories = tuple(c for c in cohort.taxonomy.names if c in rate_table.categories)
    draws = []
    for category in categories:
        gid, keys = _group_ids(cohort, idx, category, rate_table)
        for win in windows(params.year_range, params.delta_t):
            col = win.target_year - idx.start
            counts = idx.window_counts(category, win.first_year, win.target_year)
            g_col = gid[:, col]
            order = np.argsort(g_col, kind="stable")
            sorted_g = g_col[order]
            starts = np.flatnonzero(np.r_[True, sorted_g[1:] != sorted_g[:-1]]) if len(order) else []
            bounds = list(starts) + [len(order)]
            for s, e in zip(bounds[:-1], bounds[1:]):
                g = int(sorted_g[s])
                if g < 0:
                    continue
                members = order[s:e]
                member_counts = counts[members]
                a = int(member_counts.sum())
                if a == 0:
                    continue
                key = keys[g]
                ar = rate_table.rate(category, key, win.target_year)
                lam = lambda_table.clamped(category, key, ar)
                budget = unobserved_count(a, ar, lam)
                if not win.full_budget:
                    budget = per_year_budget(budget, params.delta_t)
                if budget == 0:
                    continue
                p = _weights(member_counts, budget, len(members), params.omega)
                rng = generator(mix_seed(params.master_seed, category, key.label(), win.target_year))
                picks = members[rng.choice(len(members), size=budget, replace=True, p=p)]
                years = np.array(win.event_years, dtype=np.int64)[np.arange(budget) % len(win.event_years)]
                draws.append(Draws(category, win.target_year, key, budget, picks, years))
    return AugmentPlan(cohort, categories, draws)


def assign_unobserved(cohort: Cohort, rate_table: ArrestRateTable, lambda_table: LambdaTable,
                      params: AugmentParams) -> Cohort:
    """Cohort with synthetic (observed=False) crimes added.

    Synthetic events are dated July 1 of their assigned year, or the
    person's 18th birthday when that falls later.
    """
    plan = plan_unobserved(cohort, rate_table, lambda_table, params)
    extra: dict[str, list] = {}
    tax = cohort.taxonomy
    for d in plan.draws:
        grade = tax.get(d.category).default_grade
        for i, when in zip(d.persons.tolist(), _event_dates(cohort, d.persons, d.years)):
            pid = cohort.people[i].person_id
            extra.setdefault(pid, []).append(OffenseEvent(pid, when, d.category, grade, observed=False))
    return cohort.with_events(extra)
