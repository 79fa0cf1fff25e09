"""Independent reference implementations used by the tests.

Pure Python, no numpy: sorting for order statistics, a left-to-right scan
for sums.
"""

import math
from fractions import Fraction


def five_stats(xs):
    """(max, min, mean, population std, median) of a list of floats."""
    s = sorted(xs)
    n = len(s)
    total = 0.0
    for x in xs:
        total += x
    mean = total / n
    sq = 0.0
    for x in xs:
        d = x - mean
        sq += d * d
    median = s[n // 2] if n % 2 else (s[n // 2 - 1] + s[n // 2]) / 2
    return s[-1], s[0], mean, math.sqrt(sq / n), median


def exact_mean_var(xs):
    """Mean and population variance in exact rational arithmetic."""
    fr = [Fraction(x) for x in xs]
    m = sum(fr) / len(fr)
    return m, sum((x - m) ** 2 for x in fr) / len(fr)


def fba_count(durations, r):
    n_base = max(1, math.floor(sum(durations) / len(durations)))
    return max(1, math.floor(r * n_base + 0.5))


def block_of(t, t0, t1, n):
    """Index of the FBA interval holding timestamp ``t`` (last interval closed)."""
    if t >= t1:
        return n - 1
    return min(n - 1, int((t - t0) * n // (t1 - t0)))


def majority(labels):
    counts = {}
    for x in labels:
        counts[x] = counts.get(x, 0) + 1
    best = max(counts.values())
    return min(k for k, v in counts.items() if v == best)
