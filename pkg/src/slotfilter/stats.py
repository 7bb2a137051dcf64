"""McNemar's test, the chi-squared tail, and multi-seed summaries."""
import math
import statistics
from decimal import Decimal

import numpy as np

from .errors import UndefinedTestError, UsageError

_TINY = 1e-300
_REL_TOL = 1e-15
_MAX_TERMS = 10_000


def _lower_series(a, x):
    # regularized lower incomplete gamma P(a, x), valid for x < a + 1
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(_MAX_TERMS):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * _REL_TOL:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _upper_fraction(a, x):
    # regularized upper incomplete gamma Q(a, x) by modified Lentz, for x >= a + 1
    b = x + 1.0 - a
    c = 1.0 / _TINY
    d = 1.0 / b
    h = d
    for i in range(1, _MAX_TERMS):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = _TINY if abs(d) < _TINY else d
        c = b + an / c
        c = _TINY if abs(c) < _TINY else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _REL_TOL:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a, x):
    """Regularized upper incomplete gamma function Q(a, x)."""
    if a <= 0 or x < 0:
        raise UsageError("gamma_q needs a > 0 and x >= 0")
    if x == 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _lower_series(a, x)
    return _upper_fraction(a, x)


def chi2_sf(x, df=1):
    """Survival function of the chi-squared distribution (relative accuracy ~1e-10 or better)."""
    if x <= 0:
        return 1.0
    return gamma_q(df / 2.0, x / 2.0)


def discordant_counts(correct_a, correct_b):
    """``(b, c)``: queries only model A gets right, and only model B gets right."""
    a = np.asarray(correct_a, dtype=bool)
    b = np.asarray(correct_b, dtype=bool)
    if a.shape != b.shape:
        raise UsageError(f"paired predictions differ in length: {a.size} vs {b.size}")
    return int(np.sum(a & ~b)), int(np.sum(~a & b))


def mcnemar_from_counts(b, c, correction=True):
    if b < 0 or c < 0:
        raise UsageError("discordant counts must be non-negative")
    n = b + c
    if n == 0:
        raise UndefinedTestError("McNemar's test is undefined without discordant pairs")
    # the corrected form is used as written, without clamping |b - c| - 1 at zero,
    # so b == c gives 1 / (b + c) rather than 0
    diff = abs(b - c) - 1 if correction else abs(b - c)
    chi2 = diff * diff / n
    return chi2, chi2_sf(chi2, 1)


def mcnemar(correct_a, correct_b, correction=True):
    """Chi-squared statistic and p-value for two models' paired per-query correctness.

    With ``correction`` (the default) the statistic is ``(|b - c| - 1)^2 / (b + c)``.
    """
    return mcnemar_from_counts(*discordant_counts(correct_a, correct_b), correction=correction)


def aggregate_seeds(accuracies):
    """Median, mean and sample standard deviation (n - 1) of per-seed accuracies.

    Accepts numbers or objects with an ``accuracy`` attribute. The arithmetic is
    done in decimal on each value's shortest repr, so ``[78.2, 78.5, 78.8]``
    gives a std of exactly 0.3 rather than 0.29999999999999716.
    """
    vals = [Decimal(repr(float(v.accuracy if hasattr(v, "accuracy") else v))) for v in accuracies]
    if not vals:
        raise UsageError("no runs to aggregate")
    if not all(v.is_finite() for v in vals):
        raise UsageError("accuracies must be finite")
    std = statistics.stdev(vals) if len(vals) > 1 else Decimal(0)
    return float(statistics.median(vals)), float(statistics.mean(vals)), float(std)
