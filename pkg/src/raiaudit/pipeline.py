"""Crime -> incident -> arrest -> conviction -> prison pipeline, and the
predictive-policing resource feedback loop between locations."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError, DegenerateInputError, DomainError
from .seeding import generator

STAGES = ("crimes", "incidents", "arrests", "convictions", "prison")


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise DomainError(f"{name}={p} outside [0, 1]")


@dataclass(frozen=True)
class StageRates:
    p_discovery: float
    p_reporting: float
    p_incident_to_arrest: float
    p_arrest_to_conviction: float
    p_conviction_to_prison: float

    def __post_init__(self):
        for name in ("p_discovery", "p_reporting", "p_incident_to_arrest",
                     "p_arrest_to_conviction", "p_conviction_to_prison"):
            _check_prob(name, getattr(self, name))
        if self.p_discovery + self.p_reporting > 1.0 + 1e-12:
            raise DomainError("p_discovery + p_reporting exceeds 1")

    @property
    def p_crime_to_incident(self) -> float:
        return self.p_discovery + self.p_reporting

    def chain(self) -> tuple[float, float, float, float]:
        return (min(1.0, self.p_crime_to_incident), self.p_incident_to_arrest,
                self.p_arrest_to_conviction, self.p_conviction_to_prison)


def expected_counts(n_crimes, rates: StageRates) -> dict:
    if n_crimes < 0:
        raise DomainError("n_crimes must be non-negative")
    out = {"crimes": float(n_crimes)}
    level = float(n_crimes)
    for stage, p in zip(STAGES[1:], rates.chain()):
        level *= p
        out[stage] = level
    return out


def sample_pipeline(n_crimes: int, rates: StageRates, seed: int, size=None) -> dict:
    """Nested binomial draws; with ``size`` every stage is an array of replicates."""
    if n_crimes < 0:
        raise DomainError("n_crimes must be non-negative")
    rng = generator(seed)
    level = np.full(size, n_crimes, dtype=np.int64) if size is not None else n_crimes
    out = {"crimes": level}
    for stage, p in zip(STAGES[1:], rates.chain()):
        level = rng.binomial(level, p)
        out[stage] = level
    return out


def recommend_resources(predicted) -> np.ndarray:
    pred = np.asarray(predicted, dtype=float)
    if pred.ndim != 1 or len(pred) == 0:
        raise DomainError("need at least one location")
    if (pred < 0).any():
        raise DomainError("predicted incidents must be non-negative")
    total = pred.sum()
    if total <= 0:
        raise DegenerateInputError("all predicted incidents are zero; no recommendation possible")
    return pred / total


@dataclass(frozen=True)
class LocationState:
    name: str
    resources: float
    p_discovery: tuple  # per subgroup
    p_reporting: tuple
    mix: tuple = (1.0,)
    n_crimes: float = 1000.0
    history: tuple = ()  # incidents per past step, oldest first
    clipped: bool = False

    def __post_init__(self):
        if not (len(self.p_discovery) == len(self.p_reporting) == len(self.mix)):
            raise ConfigError(f"location {self.name}: subgroup vectors differ in length")
        if abs(sum(self.mix) - 1.0) > 1e-9:
            raise ConfigError(f"location {self.name}: subgroup mix must sum to 1")
        for d, r in zip(self.p_discovery, self.p_reporting):
            _check_prob("p_discovery", d)
            _check_prob("p_reporting", r)
            if d + r > 1.0 + 1e-12:
                raise ConfigError(f"location {self.name}: discovery + reporting exceeds 1")

    @property
    def discovery(self) -> float:
        return float(sum(m * d for m, d in zip(self.mix, self.p_discovery)))

    @property
    def reporting(self) -> float:
        return float(sum(m * r for m, r in zip(self.mix, self.p_reporting)))

    @property
    def enforcement(self) -> float:
        return self.discovery + self.reporting


@dataclass(frozen=True)
class FeedbackConfig:
    s: float
    locations: tuple
    recency_weights: tuple = (1.0,)  # first entry weighs the most recent step
    horizon: int = 10
    mode: str = "expectation"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.s <= 1.0:
            raise ConfigError(f"s={self.s} outside [0, 1]")
        w = np.asarray(self.recency_weights, dtype=float)
        if len(w) == 0 or (w < 0).any() or abs(w.sum() - 1.0) > 1e-9:
            raise ConfigError("recency weights must be non-negative and sum to 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.mode not in ("expectation", "sampled"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if not self.locations:
            raise ConfigError("need at least one location")
        if abs(sum(l.resources for l in self.locations) - 1.0) > 1e-9:
            raise ConfigError("initial resource shares must sum to 1")


def uniform_recency(k: int) -> tuple:
    return tuple([1.0 / k] * k)


def predicted_incidents(history, weights) -> float:
    recent = list(reversed(history))
    return float(sum(w * n for w, n in zip(weights, recent)))


def _seed_history(loc: LocationState) -> LocationState:
    if loc.history:
        return loc
    return replace(loc, history=(loc.n_crimes * loc.enforcement,))


def step_feedback(states, config: FeedbackConfig, rng=None) -> list:
    """Advance every location by one step.

    Resources move a fraction ``s`` towards the model's recommendation,
    discovery probabilities scale with the change in resources (capped so
    discovery plus reporting stays within 1), reporting is left alone, and
    the step's incidents are appended to each location's history.
    """
    states = [_seed_history(l) for l in states]
    pred = [predicted_incidents(l.history, config.recency_weights) for l in states]
    recom = recommend_resources(pred)
    out = []
    for loc, rec in zip(states, recom):
        new_res = (1.0 - config.s) * loc.resources + config.s * rec
        if loc.resources == 0.0:
            if new_res > 0.0:
                raise DegenerateInputError(
                    f"location {loc.name} had no resources; change ratio undefined")
            ratio = 1.0
        else:
            ratio = new_res / loc.resources
        clipped = False
        p_d = []
        for d, r in zip(loc.p_discovery, loc.p_reporting):
            scaled = d * ratio
            cap = 1.0 - r
            if scaled > cap:
                scaled, clipped = cap, True
            p_d.append(max(0.0, scaled))
        nxt = replace(loc, resources=new_res, p_discovery=tuple(p_d), clipped=clipped)
        if config.mode == "expectation":
            incidents = nxt.n_crimes * nxt.enforcement
        else:
            if rng is None:
                raise ConfigError("sampled mode needs a random generator")
            incidents = float(rng.binomial(int(round(nxt.n_crimes)), min(1.0, nxt.enforcement)))
        out.append(replace(nxt, history=loc.history + (incidents,)))
    total = sum(l.resources for l in out)
    if abs(total - 1.0) > 1e-9:
        raise DomainError(f"resource shares drifted to {total}")
    return out


@dataclass(frozen=True)
class FeedbackRecord:
    step: int
    location: str
    resources: float
    p_discovery: float
    p_reporting: float
    enforcement_prob: float
    difference_factor: float
    clipped: bool = False


def _records(step, states):
    ref = states[-1].enforcement
    return [FeedbackRecord(step, l.name, l.resources, l.discovery, l.reporting, l.enforcement,
                           l.enforcement / ref if ref > 0 else float("nan"), l.clipped)
            for l in states]


def run_feedback(config: FeedbackConfig) -> list:
    """Records for steps 0..horizon; the difference factor of each location is
    its enforcement probability divided by that of the last location."""
    rng = generator(config.seed) if config.mode == "sampled" else None
    states = [_seed_history(l) for l in config.locations]
    out = _records(0, states)
    for t in range(1, config.horizon + 1):
        states = step_feedback(states, config, rng)
        out.extend(_records(t, states))
    return out


def difference_series(records, location) -> list:
    return [r.difference_factor for r in records if r.location == location]


FEEDBACK_COLUMNS = ("step", "location", "resources", "p_discovery", "p_reporting",
                    "enforcement_prob", "difference_factor")


def feedback_to_csv(records) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(FEEDBACK_COLUMNS)
    for r in records:
        w.writerow([r.step, r.location] + [repr(float(v)) for v in (r.resources, r.p_discovery, r.p_reporting,
                                                                     r.enforcement_prob, r.difference_factor)])
    return buf.getvalue().encode("utf-8")


def parse_scenario(data) -> FeedbackConfig:
    """Build a FeedbackConfig from a decoded scenario JSON object."""
    try:
        locs = []
        for entry in data["locations"]:
            p_d = entry["p_discovery"]
            p_r = entry["p_reporting"]
            p_d = tuple(p_d) if isinstance(p_d, list) else (float(p_d),)
            p_r = tuple(p_r) if isinstance(p_r, list) else (float(p_r),)
            mix = tuple(entry.get("mix", [1.0 / len(p_d)] * len(p_d)))
            locs.append(LocationState(
                name=str(entry["name"]), resources=float(entry["resources"]),
                p_discovery=tuple(float(x) for x in p_d), p_reporting=tuple(float(x) for x in p_r),
                mix=tuple(float(x) for x in mix), n_crimes=float(entry.get("n_crimes", 1000.0)),
                history=tuple(float(x) for x in entry.get("history", ())),
            ))
        if "recency_weights" in data:
            weights = tuple(float(x) for x in data["recency_weights"])
        else:
            weights = uniform_recency(int(data.get("memory", 1)))
        return FeedbackConfig(
            s=float(data["s"]), locations=tuple(locs), recency_weights=weights,
            horizon=int(data.get("horizon", 10)), mode=str(data.get("mode", "expectation")),
            seed=int(data.get("seed", 0)),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed scenario: {exc!r}") from None
    except DomainError as exc:
        raise ConfigError(f"malformed scenario: {exc}") from None


@dataclass(frozen=True)
class StepFunction:
    """Non-negative step function: value of the last (threshold, value) with threshold <= n."""
    steps: tuple = ()

    def __post_init__(self):
        thresholds = [t for t, _ in self.steps]
        if thresholds != sorted(thresholds):
            raise ConfigError("step thresholds must be increasing")
        if any(v < 0 for _, v in self.steps):
            raise ConfigError("step values must be non-negative")

    def __call__(self, n) -> float:
        value = 0.0
        for threshold, v in self.steps:
            if n >= threshold:
                value = v
        return value


@dataclass(frozen=True)
class PairStep:
    """delta(n_incidents, n_convictions) as the sum of one step function per argument."""
    incidents: StepFunction = field(default_factory=StepFunction)
    convictions: StepFunction = field(default_factory=StepFunction)

    def __call__(self, n_incidents, n_convictions) -> float:
        return self.incidents(n_incidents) + self.convictions(n_convictions)


@dataclass(frozen=True)
class HistoryModifiers:
    delta_pp: StepFunction = field(default_factory=StepFunction)
    delta_ra1: PairStep = field(default_factory=PairStep)
    delta_ra2: PairStep = field(default_factory=PairStep)
    delta_inc: StepFunction = field(default_factory=StepFunction)


@dataclass(frozen=True)
class HistoryCounts:
    location_incidents: int = 0
    incidents: int = 0
    convictions: int = 0
    prison: int = 0


def apply_history_modifiers(rates: StageRates, counts: HistoryCounts, modifiers: HistoryModifiers) -> StageRates:
    """Scale each transition by (1 + delta(history)) and clip to [0, 1].

    The location term scales discovery and reporting together; the two
    risk-assessment terms act on conviction and prison transitions.
    """
    pp = 1.0 + modifiers.delta_pp(counts.location_incidents)
    d, r = rates.p_discovery * pp, rates.p_reporting * pp
    if d + r > 1.0:
        d, r = d / (d + r), r / (d + r)
    conv = min(1.0, rates.p_arrest_to_conviction * (1.0 + modifiers.delta_ra1(counts.incidents, counts.convictions)))
    prison = min(1.0, rates.p_conviction_to_prison * (1.0 + modifiers.delta_ra2(counts.incidents, counts.convictions)))
    return StageRates(d, r, rates.p_incident_to_arrest, conv, prison)


def crime_rate_factor(counts: HistoryCounts, modifiers: HistoryModifiers) -> float:
    """Multiplier on the base offending probability after prior prison terms."""
    return 1.0 + modifiers.delta_inc(counts.prison)
