"""Exact matching on binned covariates and matched score differences.

People are grouped into cells that agree on sex, age bin and the bin of
their count in every offense category. Within a cell the effect is the
difference of mean normalized scores between the two arms; the overall
effect is the cell-size weighted mean of those differences.
"""
from __future__ import annotations

import bisect
import math
import statistics
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import ConfigError, ContractError, EstimationError
from .scores import RAI_ORDER, RaiKind
from .seeding import mix_seed

DEFAULT_AGE_LOWERS = (18, 30)
DEFAULT_COUNT_LOWERS = (0, 1, 2, 3, 5, 7, 10, 20, 50)
COUNT_PRESETS = {
    "50+": DEFAULT_COUNT_LOWERS,
    "20+": (0, 1, 2, 3, 5, 7, 10, 20),
    "10+": (0, 1, 2, 3, 5, 7, 10),
}


def _labels(lowers):
    out = []
    for i, lo in enumerate(lowers):
        if i + 1 == len(lowers):
            out.append(f"{lo}+")
        else:
            hi = lowers[i + 1] - 1
            out.append(str(lo) if hi == lo else f"{lo}-{hi}")
    return tuple(out)


def _lowers_from_labels(labels):
    lowers = []
    for lab in labels:
        lab = str(lab).strip().replace("–", "-")
        lowers.append(int(lab.rstrip("+").split("-")[0]))
    return tuple(lowers)


@dataclass(frozen=True)
class BinScheme:
    """Bins are given by their lower bounds; the last bin is open-ended."""
    age_lowers: tuple = DEFAULT_AGE_LOWERS
    count_lowers: tuple = DEFAULT_COUNT_LOWERS
    name: str = ""

    def __post_init__(self):
        for what, lowers in (("age", self.age_lowers), ("count", self.count_lowers)):
            if not lowers or list(lowers) != sorted(set(lowers)):
                raise ConfigError(f"{what} bin bounds must be strictly increasing: {lowers}")
        if self.count_lowers[0] != 0:
            raise ConfigError("count bins must start at 0")
        # labels must round-trip, i.e. bins are contiguous
        if _lowers_from_labels(_labels(self.count_lowers)) != tuple(self.count_lowers):
            raise ConfigError("count bins are not contiguous")

    @property
    def label(self) -> str:
        return self.name or self.count_labels[-1]

    @property
    def count_labels(self):
        return _labels(self.count_lowers)

    @property
    def age_labels(self):
        return _labels(self.age_lowers)

    @classmethod
    def parse(cls, spec) -> "BinScheme":
        """Accepts a preset name ('50+', '20+', '10+'), a list of count-bin labels,
        or a dict with ``count_bins`` and optional ``age_bins`` label lists."""
        if isinstance(spec, BinScheme):
            return spec
        if isinstance(spec, str):
            if spec not in COUNT_PRESETS:
                raise ConfigError(f"unknown bin preset {spec!r}")
            return cls(count_lowers=COUNT_PRESETS[spec], name=spec)
        if isinstance(spec, dict):
            ages = _lowers_from_labels(spec.get("age_bins", _labels(DEFAULT_AGE_LOWERS)))
            counts = _lowers_from_labels(spec.get("count_bins", _labels(DEFAULT_COUNT_LOWERS)))
            return cls(ages, counts, spec.get("name", ""))
        try:
            return cls(count_lowers=_lowers_from_labels(spec))
        except (TypeError, ValueError):
            raise ConfigError(f"cannot parse bin scheme {spec!r}") from None


def bin_count(n: int, scheme: BinScheme) -> int:
    if n < 0:
        raise ContractError(f"count must be non-negative, got {n}")
    return bisect.bisect_right(scheme.count_lowers, n) - 1


def bin_age(age: int, scheme: BinScheme) -> int:
    # anything below the first bound shares the first bin
    return max(0, bisect.bisect_right(scheme.age_lowers, age) - 1)


class CellKey(NamedTuple):
    sex: str
    age_bin: int
    count_bins: tuple


@dataclass(frozen=True)
class Comparison:
    name: str
    arm_a: Callable
    arm_b: Callable

    def arm(self, race, ethnicity) -> int:
        """0 for arm a, 1 for arm b, -1 for neither."""
        a = self.arm_a(race, ethnicity)
        b = self.arm_b(race, ethnicity)
        if a and b:
            raise ContractError(f"comparison {self.name}: arms overlap for {race}/{ethnicity}")
        return 0 if a else 1 if b else -1

    def swapped(self) -> "Comparison":
        a, b = self.name.split("-", 1) if "-" in self.name else (self.name, "other")
        return Comparison(f"{b}-{a}", self.arm_b, self.arm_a)


COMPARISONS = {
    "black-white": Comparison("black-white", lambda r, e: r == "black", lambda r, e: r == "white"),
    "hispanic-white": Comparison(
        "hispanic-white",
        lambda r, e: e == "hispanic",
        lambda r, e: r == "white" and e == "non-hispanic",
    ),
}


def get_comparison(name) -> Comparison:
    if isinstance(name, Comparison):
        return name
    try:
        return COMPARISONS[name]
    except KeyError:
        raise ConfigError(f"unknown comparison {name!r}; choose from {sorted(COMPARISONS)}") from None


@dataclass(frozen=True)
class MatchUnit:
    person_id: str
    sex: str
    race: str
    ethnicity: str
    age: int
    arrest_counts: tuple
    crime_counts: tuple
    scores: dict


class UnitTable:
    """Column-oriented view of match units for fast cell construction."""

    def __init__(self, ids, sex, race, ethnicity, age, arrests, crimes, scores):
        self.ids = list(ids)
        self.sex = np.asarray(sex, dtype=object)
        self.race = np.asarray(race, dtype=object)
        self.ethnicity = np.asarray(ethnicity, dtype=object)
        self.age = np.asarray(age, dtype=np.int64)
        arrests = np.asarray(arrests, dtype=np.int64)
        k = arrests.shape[-1] if arrests.ndim == 2 else (arrests.size // max(len(self.ids), 1))
        self.arrests = arrests.reshape(len(self.ids), k)
        self.crimes = np.asarray(crimes, dtype=np.int64).reshape(len(self.ids), k)
        self.scores = np.asarray(scores, dtype=float).reshape(len(self.ids), len(RAI_ORDER))

    def __len__(self):
        return len(self.ids)

    @classmethod
    def from_units(cls, units) -> "UnitTable":
        units = list(units)
        k = len(units[0].arrest_counts) if units else 0
        return cls(
            [u.person_id for u in units], [u.sex for u in units], [u.race for u in units],
            [u.ethnicity for u in units], [u.age for u in units],
            np.array([u.arrest_counts for u in units], dtype=np.int64).reshape(len(units), k),
            np.array([u.crime_counts for u in units], dtype=np.int64).reshape(len(units), k),
            [[u.scores[r] for r in RAI_ORDER] for u in units],
        )

    def with_crimes(self, crimes) -> "UnitTable":
        return UnitTable(self.ids, self.sex, self.race, self.ethnicity, self.age,
                         self.arrests, crimes, self.scores)

    def take(self, mask) -> "UnitTable":
        mask = np.asarray(mask)
        return UnitTable([i for i, m in zip(self.ids, mask) if m], self.sex[mask], self.race[mask],
                         self.ethnicity[mask], self.age[mask], self.arrests[mask],
                         self.crimes[mask], self.scores[mask])

    def units(self):
        return [MatchUnit(self.ids[i], self.sex[i], self.race[i], self.ethnicity[i], int(self.age[i]),
                          tuple(int(x) for x in self.arrests[i]), tuple(int(x) for x in self.crimes[i]),
                          {r: float(self.scores[i, j]) for j, r in enumerate(RAI_ORDER)})
                for i in range(len(self))]


@dataclass
class MatchedCell:
    key: CellKey
    ids_a: list
    ids_b: list
    scores_a: np.ndarray  # (n_a, 4) in RAI_ORDER
    scores_b: np.ndarray

    @property
    def n_a(self):
        return len(self.ids_a)

    @property
    def n_b(self):
        return len(self.ids_b)

    @property
    def weight(self):
        return self.n_a + self.n_b


@dataclass
class CellSet:
    cells: list
    unmatched_a: int
    unmatched_b: int

    @property
    def n_matched_a(self):
        return sum(c.n_a for c in self.cells)

    @property
    def n_matched_b(self):
        return sum(c.n_b for c in self.cells)


def _arms(table: UnitTable, comparison: Comparison) -> np.ndarray:
    cache = {}
    out = np.empty(len(table), dtype=np.int64)
    for i, (r, e) in enumerate(zip(table.race, table.ethnicity)):
        if (r, e) not in cache:
            cache[(r, e)] = comparison.arm(r, e)
        out[i] = cache[(r, e)]
    return out


def _key_matrix(table: UnitTable, scheme: BinScheme, covariate_source: str) -> np.ndarray:
    if covariate_source == "arrests":
        counts = table.arrests
    elif covariate_source == "crimes":
        counts = table.crimes
    else:
        raise ConfigError(f"covariate_source must be 'arrests' or 'crimes', got {covariate_source!r}")
    if (counts < 0).any():
        raise ContractError("negative covariate count")
    count_bins = np.searchsorted(np.asarray(scheme.count_lowers), counts, side="right") - 1
    age_bins = np.maximum(np.searchsorted(np.asarray(scheme.age_lowers), table.age, side="right") - 1, 0)
    sex = (table.sex == "male").astype(np.int64)
    return np.column_stack([sex, age_bins, count_bins]).astype(np.int64)


def _cell_stats(table: UnitTable, scheme: BinScheme, covariate_source: str, comparison: Comparison):
    """Per-cell arm sizes and score sums over people in either arm."""
    arm = _arms(table, comparison)
    keep = arm >= 0
    keys = _key_matrix(table, scheme, covariate_source)[keep]
    arm = arm[keep]
    scores = table.scores[keep]
    if len(arm) == 0:
        return keys[:0], np.zeros(0), np.zeros(0), np.zeros((0, scores.shape[1])), np.zeros((0, scores.shape[1])), np.zeros(0, dtype=np.int64), keep, arm
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    m = len(uniq)
    is_a = arm == 0
    n_a = np.bincount(inv[is_a], minlength=m)
    n_b = np.bincount(inv[~is_a], minlength=m)
    sum_a = np.column_stack([np.bincount(inv[is_a], weights=scores[is_a, j], minlength=m)
                             for j in range(scores.shape[1])])
    sum_b = np.column_stack([np.bincount(inv[~is_a], weights=scores[~is_a, j], minlength=m)
                             for j in range(scores.shape[1])])
    return uniq, n_a, n_b, sum_a, sum_b, inv, keep, arm


def build_cells(units, scheme: BinScheme, covariate_source: str, comparison) -> CellSet:
    """Matched cells (both arms present), in key order, plus unmatched counts per arm."""
    table = units if isinstance(units, UnitTable) else UnitTable.from_units(units)
    comparison = get_comparison(comparison)
    uniq, n_a, n_b, _, _, inv, keep, arm = _cell_stats(table, scheme, covariate_source, comparison)
    kept_ids = [i for i, k in zip(table.ids, keep) if k]
    kept_scores = table.scores[keep]
    members: dict[int, tuple[list, list]] = {}
    for pos, (cell, side) in enumerate(zip(inv.tolist(), arm.tolist())):
        members.setdefault(cell, ([], []))[side].append(pos)
    cells = []
    unmatched_a = unmatched_b = 0
    for c in range(len(uniq)):
        if n_a[c] == 0 or n_b[c] == 0:
            unmatched_a += int(n_a[c])
            unmatched_b += int(n_b[c])
            continue
        pa, pb = members[c]
        row = uniq[c]
        key = CellKey("male" if row[0] == 1 else "female", int(row[1]), tuple(int(x) for x in row[2:]))
        cells.append(MatchedCell(key, [kept_ids[i] for i in pa], [kept_ids[i] for i in pb],
                                 kept_scores[pa], kept_scores[pb]))
    return CellSet(cells, unmatched_a, unmatched_b)


def _rai_col(rai) -> int:
    return RAI_ORDER.index(RaiKind(rai))


def cae(cell: MatchedCell, rai) -> float:
    if cell.n_a == 0 or cell.n_b == 0:
        raise ContractError("conditional effect needs both arms non-empty")
    j = _rai_col(rai)
    return float(cell.scores_a[:, j].mean() - cell.scores_b[:, j].mean())


def ae(cells, rai) -> float:
    """Weighted mean of per-cell effects with weight n_a + n_b."""
    cells = list(cells.cells if isinstance(cells, CellSet) else cells)
    if not cells:
        raise EstimationError("no overlap: no cell holds members of both arms")
    w = np.array([c.weight for c in cells], dtype=float)
    v = np.array([cae(c, rai) for c in cells])
    return float((w * v).sum() / w.sum())


@dataclass
class ReplicateEffect:
    """AE for every RAI from one matching pass, without materialising cells."""
    ae: dict
    n_cells: int
    n_matched_a: int
    n_matched_b: int
    unmatched_a: int
    unmatched_b: int


def fast_effects(table: UnitTable, scheme: BinScheme, covariate_source: str, comparison) -> ReplicateEffect:
    comparison = get_comparison(comparison)
    _, n_a, n_b, sum_a, sum_b, _, _, _ = _cell_stats(table, scheme, covariate_source, comparison)
    both = (n_a > 0) & (n_b > 0)
    if not both.any():
        raise EstimationError(f"no overlap between arms of {comparison.name}")
    na, nb = n_a[both].astype(float), n_b[both].astype(float)
    caes = sum_a[both] / na[:, None] - sum_b[both] / nb[:, None]
    w = na + nb
    values = (w[:, None] * caes).sum(axis=0) / w.sum()
    return ReplicateEffect(
        {r: float(values[j]) for j, r in enumerate(RAI_ORDER)},
        int(both.sum()), int(n_a[both].sum()), int(n_b[both].sum()),
        int(n_a[~both].sum()), int(n_b[~both].sum()),
    )


@dataclass
class EffectEstimate:
    rai: RaiKind
    comparison: str
    covariate_source: str
    ae: float
    ae_std: float
    n_seeds: int
    n_cells: int
    n_matched_a: int
    n_matched_b: int
    unmatched_a: int = 0
    unmatched_b: int = 0
    ae_values: tuple = ()
    per_cell: list = field(default_factory=list)


ESTIMATE_COLUMNS = ("rai", "comparison", "covariate_source", "ae", "ae_std", "n_seeds",
                    "n_cells", "n_matched_a", "n_matched_b")


def replicate_seed(master_seed: int, k: int) -> int:
    return mix_seed(master_seed, "replicate", k)


def summarize(values) -> tuple[float, float]:
    values = list(values)
    mean = math.fsum(values) / len(values)
    std = statistics.stdev(values) if len(values) >= 2 else float("nan")
    return mean, std


def estimate_effect(table_for_seed, scheme: BinScheme, comparison, covariate_source: str,
                    n_seeds: int, master_seed: int = 0, with_cells: bool = False) -> dict:
    """Run the matching pass once per replicate seed and summarise every RAI.

    ``table_for_seed(seed)`` returns the UnitTable for that seed. With
    ``covariate_source='arrests'`` nothing is stochastic, so the table is built
    once and its AE repeated, giving a standard deviation of exactly 0.
    """
    if n_seeds < 1:
        raise ConfigError("n_seeds must be at least 1")
    comparison = get_comparison(comparison)
    reps = []
    first_table = None
    if covariate_source == "arrests":
        first_table = table_for_seed(None)
        reps = [fast_effects(first_table, scheme, covariate_source, comparison)] * n_seeds
    else:
        for k in range(n_seeds):
            table = table_for_seed(replicate_seed(master_seed, k))
            if first_table is None:
                first_table = table
            reps.append(fast_effects(table, scheme, covariate_source, comparison))
    cells = build_cells(first_table, scheme, covariate_source, comparison).cells if with_cells else []
    out = {}
    for rai in RAI_ORDER:
        values = [r.ae[rai] for r in reps]
        mean, std = summarize(values)
        per_cell = [(c.key, c.n_a, c.n_b, cae(c, rai)) for c in cells]
        out[rai] = EffectEstimate(rai, comparison.name, covariate_source, mean, std, n_seeds,
                                  reps[0].n_cells, reps[0].n_matched_a, reps[0].n_matched_b,
                                  reps[0].unmatched_a, reps[0].unmatched_b, tuple(values), per_cell)
    return out


def age_band_labels(scheme: BinScheme):
    return scheme.age_labels


def subgroup_effects(table_for_seed, scheme: BinScheme, comparison, covariate_source: str,
                     n_seeds: int, master_seed: int = 0):
    """Effects within each sex x age-bin stratum.

    Returns (results, warnings); results maps (sex, age label) to the
    per-RAI estimates, strata without overlap are left out and noted in
    warnings.
    """
    results = {}
    warnings = []
    labels = scheme.age_labels
    for sex in ("male", "female"):
        for b, label in enumerate(labels):
            def restricted(seed, sex=sex, b=b):
                t = table_for_seed(seed)
                bins = np.maximum(np.searchsorted(np.asarray(scheme.age_lowers), t.age, side="right") - 1, 0)
                return t.take((t.sex == sex) & (bins == b))
            try:
                results[(sex, label)] = estimate_effect(restricted, scheme, comparison,
                                                        covariate_source, n_seeds, master_seed)
            except EstimationError as exc:
                warnings.append(f"stratum {sex} {label}: {exc}")
    return results, warnings
