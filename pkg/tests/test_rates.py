from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from raiaudit.cohort import Demographics
from raiaudit.errors import DataError, DomainError, EstimationError, RateLookupError
from raiaudit.rates import (ArrestRateTable, GroupKey, SurveyAggregateRow, SurveyMicroRow, build_lambda_table,
                            canonical_band, check_partition, clamp_lambda, estimate_lambda_rearrest,
                            estimate_lambda_survey, estimate_rates_averaging, estimate_rates_regression,
                            load_published_lambdas, lookup_rate, make_key, multiply_rates, parse_survey_aggregate,
                            parse_survey_micro, rate_table_to_csv, wls_line)

from conftest import cohort_of, person

BM = GroupKey("male", "black", "non-hispanic", "30+")
WM = GroupKey("male", "white", "non-hispanic", "30+")


def agg(year, off, arr, cat="property", key=BM):
    return SurveyAggregateRow(year, cat, key, off, arr)


def test_averaging_single_cell():
    t = estimate_rates_averaging([agg(2010, 10, 2)], years=range(2010, 2013))
    assert [t.rate("property", BM, y) for y in (2010, 2011, 2012)] == [0.2, 0.2, 0.2]


def test_averaging_weighted_mean():
    t = estimate_rates_averaging([agg(2010, 10, 2), agg(2011, 30, 9)])
    assert t.rate("property", BM, 2010) == pytest.approx(0.275)
    assert t.rate("property", BM, 2011) == pytest.approx(0.275)


def test_averaging_zero_offenders_names_cell():
    with pytest.raises(EstimationError, match="property"):
        estimate_rates_averaging([agg(2010, 0, 0)])


def test_regression_recovers_exact_line():
    rows = [agg(1, 10, 1), agg(2, 10, 2), agg(3, 10, 3)]
    t = estimate_rates_regression(rows)
    for y, r in ((1, 0.1), (2, 0.2), (3, 0.3)):
        assert t.rate("property", BM, y) == pytest.approx(r, abs=1e-12)


def test_regression_constant_equals_averaging():
    rows = [agg(2010, 10, 3), agg(2011, 20, 6), agg(2012, 40, 12)]
    a = estimate_rates_averaging(rows)
    r = estimate_rates_regression(rows)
    for y in (2010, 2011, 2012):
        assert r.rate("property", BM, y) == pytest.approx(a.rate("property", BM, y), abs=1e-12)


def test_regression_clips_below_zero():
    rows = [agg(2010, 100, 30), agg(2011, 100, 15), agg(2012, 100, 1)]
    t = estimate_rates_regression(rows, years=range(2010, 2016))
    assert t.rate("property", BM, 2015) == 0.0
    assert t.rate("property", BM, 2010) > 0


def test_regression_single_year_falls_back():
    t = estimate_rates_regression([agg(2010, 10, 4)], years=[2010, 2011])
    assert t.rate("property", BM, 2011) == 0.4
    assert ("property", BM) in t.fallback
    assert b",1\n" in rate_table_to_csv(t)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.floats(0, 1), st.integers(1, 1000)), min_size=3, max_size=12))
def test_wls_matches_lstsq(points):
    xs = [float(p[0]) for p in points]
    if len(set(xs)) < 2:
        return
    ys = [p[1] for p in points]
    ws = [float(p[2]) for p in points]
    sw = np.sqrt(ws)
    design = np.column_stack([np.ones(len(xs)), xs]) * sw[:, None]
    (b0, b1), *_ = np.linalg.lstsq(design, np.asarray(ys) * sw, rcond=None)
    icept, slope = wls_line(xs, ys, ws)
    assert icept == pytest.approx(b0, abs=1e-9)
    assert slope == pytest.approx(b1, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(2000, 2005), st.integers(1, 50), st.integers(0, 50)), min_size=1,
                max_size=8), st.integers(0, 7))
def test_averaging_invariant_to_row_splitting(raw, which):
    rows = [agg(y, o, min(a, o)) for y, o, a in raw]
    i = which % len(rows)
    r = rows[i]
    half = r.n_offenders // 2
    harr = min(r.n_arrested, half)
    split = rows[:i] + [agg(r.year, half, harr), agg(r.year, r.n_offenders - half, r.n_arrested - harr)] + rows[i + 1:]
    a = estimate_rates_averaging(rows)
    b = estimate_rates_averaging(split)
    assert a.rates.keys() == b.rates.keys()
    for k in a.rates:
        assert a.rates[k] == pytest.approx(b.rates[k], abs=1e-15)


def test_survey_lambda_direct_ratio():
    rows = [SurveyMicroRow(BM, frozenset({"robbery"} if i < 4 else set()), True) for i in range(10)]
    rows.append(SurveyMicroRow(BM, frozenset({"robbery"}), False))
    assert estimate_lambda_survey(rows, "robbery", BM) == 0.4
    assert estimate_lambda_survey(rows, "dui", BM) == 0.0
    with pytest.raises(EstimationError):
        estimate_lambda_survey(rows, "dui", WM)


def test_survey_lambda_reproduces_published_dui_row():
    key = make_key("male", "black", "non-hispanic", ">34")
    rows = [SurveyMicroRow(key, frozenset({"dui"} if i < 51 else {"property"}), True) for i in range(100)]
    published = load_published_lambdas().value("dui", key)
    assert published == 0.51
    assert estimate_lambda_survey(rows, "dui", key) == published


def test_micro_parse_drug_sell_excludes_drug_use():
    rows = parse_survey_micro("sex,race,ethnicity,age_band,reported_categories,ever_arrested\n"
                              "male,black,non-hispanic,18-34,drug_use;drug_sell,1\n")
    assert rows[0].reported_categories == frozenset({"drug_sell"})


def _members(n, repeaters, cat="robbery"):
    out = []
    for i in range(n):
        evs = [(date(2010, 1, 1), cat, "felony")]
        if i < repeaters:
            evs.append((date(2012, 1, 1), cat, "felony"))
        out.append(person(f"m{i}", evs))
    return out


def test_rearrest_lambda():
    assert estimate_lambda_rearrest(_members(4, 1), "robbery") == 0.25
    assert estimate_lambda_rearrest(_members(4, 0), "robbery") == 0.0
    with pytest.raises(EstimationError):
        estimate_lambda_rearrest([], "robbery")


def test_rearrest_lambda_reproduces_published_robbery_row():
    key = make_key("male", "black", "non-hispanic", ">29")
    assert load_published_lambdas().value("robbery", key) == 0.85
    assert estimate_lambda_rearrest(_members(20, 17), "robbery") == 0.85


def test_published_table_uses_hispanic_rows():
    t = load_published_lambdas()
    key = GroupKey("male", "any", "hispanic", "35+")
    assert 0 <= t.value("dui", key) <= 1


@pytest.mark.parametrize("lam,ar,out", [(0.1, 0.3, 0.3), (1.4, 0.3, 1.0), (0.5, 0.3, 0.5)])
def test_clamp_examples(lam, ar, out):
    assert clamp_lambda(lam, ar) == out


def test_clamp_zero_rate():
    with pytest.raises(DomainError):
        clamp_lambda(0.5, 0.0)


def _table():
    rates = {}
    for cat in ("property", "robbery", "dui", "drug_use"):
        for sex in ("male", "female"):
            for band in (("18-34", "35+") if cat in ("dui", "drug_use") else ("18-29", "30+")):
                for race, eth in (("black", "non-hispanic"), ("white", "non-hispanic"),
                                  ("other", "non-hispanic"), ("any", "hispanic")):
                    base = {"black": 0.2, "white": 0.1, "other": 0.15, "any": 0.3}[race]
                    rates[(cat, GroupKey(sex, race, eth, band), 2015)] = base
    return ArrestRateTable(rates, "averaging")


def test_lookup_examples():
    t = _table()
    wh = Demographics("male", "white", "hispanic", date(1980, 1, 1))
    assert lookup_rate(t, "dui", wh, 2015) == 0.3
    assert lookup_rate(t, "robbery", wh, 2015) == 0.1
    bn = Demographics("male", "black", "non-hispanic", date(1980, 1, 1))
    assert lookup_rate(t, "property", bn, 2015) == 0.2


def test_lookup_missing_key():
    with pytest.raises(RateLookupError):
        lookup_rate(_table(), "property", Demographics("male", "black", "non-hispanic", date(1980, 1, 1)), 2016)


@settings(max_examples=150, deadline=None)
@given(st.sampled_from(["male", "female"]), st.sampled_from(["black", "white", "other"]),
       st.sampled_from(["hispanic", "non-hispanic", "unknown"]), st.integers(18, 90),
       st.sampled_from(["property", "robbery", "dui", "drug_use"]))
def test_lookup_total_on_complete_table(sex, race, eth, age, cat):
    demo = Demographics(sex, race, eth, date(2015 - age, 1, 1))
    t = _table()
    r = lookup_rate(t, cat, demo, 2015)
    assert r == lookup_rate(t, cat, demo, 2015)
    assert 0 <= r <= 1


def test_multiply_examples():
    t = ArrestRateTable({("property", BM, 2015): 0.2, ("robbery", BM, 2015): 0.6, ("property", WM, 2015): 0.2},
                        "averaging")
    assert multiply_rates(t, "black", 1.0) == t
    m3 = multiply_rates(t, "black", 3)
    assert m3.rate("property", BM, 2015) == pytest.approx(0.6)
    assert m3.rate("property", WM, 2015) == 0.2
    assert multiply_rates(t, "black", 2).rate("robbery", BM, 2015) == 1.0


def test_aggregate_parse_names_bad_row():
    text = ("year,category,sex,race,ethnicity,age_band,n_offenders,n_arrested\n"
            "2010,property,male,black,non-hispanic,18-29,10,2\n"
            "2010,property,male,white,non-hispanic,18-29,5,9\n")
    with pytest.raises(DataError, match="row 2"):
        parse_survey_aggregate(text)


def test_bands():
    assert canonical_band(">34") == "35+"
    check_partition(["18-29", "30+"])
    with pytest.raises(DataError):
        check_partition(["18-29", "31+"])


rate_st = st.floats(0.001, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 10), st.sampled_from([0, 1, 2])), min_size=1, max_size=12), rate_st)
def test_emitted_lambdas_respect_clamp(spec, ar):
    # a cohort's re-arrest estimates, clamped against the rate, always land in [AR, 1]
    people = []
    for i, (n, cnt) in enumerate(spec):
        evs = [(date(2010 + j, 3, 1), "robbery", "felony") for j in range(max(cnt, 1))]
        people.append(person(f"p{i}", evs, birth=date(1970, 1, 1)))
    c = cohort_of(people)
    rates = {("robbery", GroupKey(s, r, "non-hispanic", b), 2015): ar
             for s in ("male", "female") for r in ("black", "white", "other") for b in ("18-29", "30+")}
    table = ArrestRateTable(rates, "averaging")
    lam = build_lambda_table("rearrest", table, c, when=date(2015, 7, 1))
    for (cat, key), v in lam.values.items():
        assert 0 <= v <= 1
        c_v = lam.clamped(cat, key, ar)
        assert ar <= c_v <= 1
