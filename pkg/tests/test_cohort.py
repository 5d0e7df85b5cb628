from datetime import date, timedelta

import pytest
from hypothesis import given, settings, strategies as st

from raiaudit.cohort import (Demographics, OffenseEvent, age_at, history_at, parse_cohort, parse_taxonomy,
                             serialize_cohort, summarize_events)
from raiaudit.errors import (CohortParseError, DomainError, DuplicateRowError, TaxonomyError,
                             UnknownPersonError)

from conftest import cohort_of, csv_text, person, row


def test_one_row_gives_one_person_one_event():
    c = parse_cohort(csv_text([row()]).encode())
    assert len(c) == 1
    assert len(c.person("p1").events) == 1


def test_guilty_misdemeanor_counts_as_prior_misdemeanor_conviction():
    c = parse_cohort(csv_text([row(disp="guilty", grade="misdemeanor", ddate="2010-06-01")]))
    h = history_at(c, "p1", date(2012, 1, 1))
    assert h.prior_misdemeanor_convictions == 1
    assert h.prior_felony_convictions == 0


def test_bad_birth_date_names_row():
    text = csv_text([row(), row(pid="p2", birth="1990-13-40")])
    with pytest.raises(CohortParseError) as info:
        parse_cohort(text)
    assert info.value.row == 2
    assert "row 2" in str(info.value)


def test_unknown_category_rejected():
    with pytest.raises(TaxonomyError):
        parse_cohort(csv_text([row(cat="jaywalking")]))


def test_duplicate_row_rejected():
    with pytest.raises(DuplicateRowError):
        parse_cohort(csv_text([row(), row()]))


def test_wrong_header_rejected():
    with pytest.raises(CohortParseError):
        parse_cohort("person_id,birth_date\np1,1980-01-01\n")


def test_empty_grade_uses_taxonomy_default(taxonomy):
    c = parse_cohort(csv_text([row(cat="robbery", grade="")]), taxonomy)
    assert c.person("p1").events[0].grade == taxonomy.get("robbery").default_grade


def test_taxonomy_rejects_names_outside_closed_set():
    with pytest.raises(TaxonomyError):
        parse_taxonomy([{"name": "piracy", "violent": True, "default_grade": "felony"}])


def test_empty_history():
    c = cohort_of([person("a", [(date(2015, 1, 1), "property", "misdemeanor")])])
    h = history_at(c, "a", date(2015, 1, 1))
    assert h.prior_convictions_total == 0
    assert h.prior_fta_total == 0
    assert not h.pending_charges
    assert h.prior_arrests_by_category == {}


def test_disposed_after_reference_is_pending():
    c = cohort_of([person("a", [(date(2015, 1, 1), "property", "misdemeanor", "guilty", date(2016, 6, 1))])])
    h = history_at(c, "a", date(2016, 1, 1))
    assert h.pending_charges
    # not yet a conviction either
    assert h.prior_convictions_total == 0


def test_felony_and_fta_window():
    ref = date(2020, 6, 1)
    c = cohort_of([person("a", [
        (date(2017, 6, 1), "robbery", "felony", "guilty", date(2017, 9, 1)),
        (date(2019, 6, 1), "property", "misdemeanor", "fta_charge"),
        (date(2017, 6, 2), "property", "misdemeanor", "fta_charge"),
    ])])
    h = history_at(c, "a", ref)
    assert (h.prior_felony_convictions, h.prior_fta_last_2y, h.prior_fta_total) == (1, 1, 2)


def test_unknown_person():
    c = cohort_of([person("a", [(date(2015, 1, 1), "property", "misdemeanor")])])
    with pytest.raises(UnknownPersonError):
        history_at(c, "zz", date(2016, 1, 1))


@pytest.mark.parametrize("born,when,expected", [
    (date(2000, 6, 1), date(2022, 6, 1), 22),
    (date(2000, 6, 2), date(2022, 6, 1), 21),
    (date(2000, 2, 29), date(2021, 3, 1), 21),
])
def test_age_at_examples(born, when, expected):
    assert age_at(Demographics("male", "white", "non-hispanic", born), when) == expected


def test_age_before_birth():
    with pytest.raises(DomainError):
        age_at(Demographics("male", "white", "non-hispanic", date(2000, 1, 1)), date(1999, 1, 1))


def _age_by_counting(born, when):
    # step day by day and bump the age on each anniversary (Feb 29 -> Mar 1 in common years)
    age = 0
    d = born
    while d < when:
        d += timedelta(days=1)
        if (d.month, d.day) == (born.month, born.day):
            age += 1
        elif (born.month, born.day) == (2, 29) and (d.month, d.day) == (3, 1) and not _leap(d.year):
            age += 1
    return age


def _leap(y):
    return y % 4 == 0 and (y % 100 != 0 or y % 400 == 0)


@settings(max_examples=60, deadline=None)
@given(st.dates(date(1990, 1, 1), date(2004, 12, 31)), st.integers(0, 9000))
def test_age_matches_day_count(born, offset):
    when = born + timedelta(days=offset)
    assert age_at(Demographics("female", "other", "unknown", born), when) == _age_by_counting(born, when)


def test_leap_day_oracle_agrees_on_example():
    assert _age_by_counting(date(2000, 2, 29), date(2021, 3, 1)) == 21
    assert _age_by_counting(date(2000, 2, 29), date(2021, 2, 28)) == 20


CATS = ["property", "robbery", "drug_use", "simple_assault", "dui"]
DISPS = ["guilty", "not_guilty", "pending", "fta_charge", "incarceration:local_jail", "none"]

event_st = st.tuples(st.integers(0, 4000), st.sampled_from(CATS), st.sampled_from(["felony", "misdemeanor"]),
                     st.sampled_from(DISPS), st.one_of(st.none(), st.integers(0, 400)))


def _events(raw):
    out = []
    for day, cat, grade, disp, lag in raw:
        d = date(2005, 1, 1) + timedelta(days=day)
        out.append(OffenseEvent("x", d, cat, grade, True, disp, None if lag is None else d + timedelta(days=lag)))
    return sorted(out, key=OffenseEvent.sort_key)


DEMO = Demographics("male", "black", "non-hispanic", date(1980, 1, 1))


@settings(max_examples=80, deadline=None)
@given(st.lists(event_st, max_size=12), st.integers(0, 4500), st.integers(0, 1500))
def test_history_counts_monotone_in_reference(taxonomy, raw, a, extra):
    evs = _events(raw)
    r1 = date(2005, 1, 1) + timedelta(days=a)
    r2 = r1 + timedelta(days=extra)
    h1 = summarize_events(evs, DEMO, r1, taxonomy)
    h2 = summarize_events(evs, DEMO, r2, taxonomy)
    for f in ("prior_misdemeanor_convictions", "prior_felony_convictions", "prior_violent_convictions",
              "prior_fta_total", "prior_convictions_total", "prior_drug_convictions", "prior_arrests_total"):
        assert getattr(h2, f) >= getattr(h1, f), f
    assert h2.prior_incarceration >= h1.prior_incarceration


@settings(max_examples=80, deadline=None)
@given(st.lists(event_st, max_size=10), st.integers(0, 4500), event_st, st.integers(0, 800))
def test_events_on_or_after_reference_ignored(taxonomy, raw, a, late, after):
    evs = _events(raw)
    ref = date(2005, 1, 1) + timedelta(days=a)
    before = [e for e in evs if e.date < ref]
    _, cat, grade, disp, lag = late
    d = ref + timedelta(days=after)
    extra = OffenseEvent("x", d, cat, grade, True, disp, None if lag is None else d + timedelta(days=lag))
    assert summarize_events(before + [extra], DEMO, ref, taxonomy) == summarize_events(before, DEMO, ref, taxonomy)


person_rows = st.lists(
    st.tuples(st.sampled_from(["a", "b", "c"]), st.integers(0, 3000), st.sampled_from(CATS),
              st.sampled_from(DISPS)),
    min_size=1, max_size=15, unique_by=lambda t: (t[0], t[1], t[2], t[3]))


@settings(max_examples=60, deadline=None)
@given(person_rows, st.randoms(use_true_random=False))
def test_serialize_round_trip(rows, rnd):
    demo = {"a": ("1970-03-03", "male", "white", "hispanic"), "b": ("1985-07-07", "female", "black", "non-hispanic"),
            "c": ("1990-12-31", "male", "other", "unknown")}
    lines = []
    for pid, day, cat, disp in rows:
        b, s, r, e = demo[pid]
        lines.append(row(pid, b, s, r, e, (date(2008, 1, 1) + timedelta(days=day)).isoformat(), cat,
                         "misdemeanor", disp, ""))
    rnd.shuffle(lines)
    text = csv_text(lines)
    once = serialize_cohort(parse_cohort(text))
    assert serialize_cohort(parse_cohort(once)) == once
    assert sorted(once.decode().splitlines()[1:]) == sorted(text.splitlines()[1:])
