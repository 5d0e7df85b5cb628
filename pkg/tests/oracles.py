"""Slow, obviously-correct reference implementations used by the tests."""
from fractions import Fraction

# the default count bins written out as explicit closed intervals
COUNT_INTERVALS = [(0, 0), (1, 1), (2, 2), (3, 4), (5, 6), (7, 9), (10, 19), (20, 49), (50, None)]
AGE_INTERVALS = [(0, 29), (30, None)]


def interval_index(n, intervals):
    for i, (lo, hi) in enumerate(intervals):
        if n >= lo and (hi is None or n <= hi):
            return i
    raise ValueError(n)


def in_arm(comparison, race, ethnicity):
    if comparison == "black-white":
        return "a" if race == "black" else "b" if race == "white" else None
    if comparison == "hispanic-white":
        if ethnicity == "hispanic":
            return "a"
        return "b" if race == "white" and ethnicity == "non-hispanic" else None
    raise ValueError(comparison)


def brute_force_ae(people, comparison, rai_index, use_crimes=False):
    """people: iterable of (sex, race, ethnicity, age, counts, scores). Returns AE or None."""
    cells = {}
    for sex, race, eth, age, counts, scores in people:
        arm = in_arm(comparison, race, eth)
        if arm is None:
            continue
        key = (sex, interval_index(age, AGE_INTERVALS)) + tuple(interval_index(c, COUNT_INTERVALS) for c in counts)
        cells.setdefault(key, {"a": [], "b": []})[arm].append(scores[rai_index])
    num = 0.0
    den = 0
    for arms in cells.values():
        if arms["a"] and arms["b"]:
            cae = sum(arms["a"]) / len(arms["a"]) - sum(arms["b"]) / len(arms["b"])
            w = len(arms["a"]) + len(arms["b"])
            num += w * cae
            den += w
    return None if den == 0 else num / den


def average_ranks(values):
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = Fraction(i + j + 2, 2)
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def pearson(xs, ys):
    n = len(xs)
    mx = sum(Fraction(x) for x in xs) / n
    my = sum(Fraction(y) for y in ys) / n
    sxy = sum((Fraction(x) - mx) * (Fraction(y) - my) for x, y in zip(xs, ys))
    sxx = sum((Fraction(x) - mx) ** 2 for x in xs)
    syy = sum((Fraction(y) - my) ** 2 for y in ys)
    return float(sxy) / (float(sxx) * float(syy)) ** 0.5
