"""Two-group cohort statistics and quartile-based cam severity classes.

Distribution functions come from :mod:`scipy.special` (``ndtr``, ``ndtri``,
``stdtr``, ``fdtrc``), whose absolute error is far below 1e-10 over the ranges
used here. The tests themselves (Shapiro-Wilk, Levene, t, Mann-Whitney,
Pearson) are implemented directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import special

from .errors import InputError, NumericalError

ALPHA = 0.05
EXACT_MW_LIMIT = 16
SEVERITIES = ("negligible", "mild", "moderate", "major")


@dataclass(frozen=True, eq=False)
class Sample:
    values: np.ndarray
    group: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64).ravel()
        if v.size < 1:
            raise InputError("a sample needs at least one value")
        if not np.all(np.isfinite(v)):
            raise InputError(f"sample {self.group!r} has non-finite values")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)


def _sample(s):
    return s if isinstance(s, Sample) else Sample(s)


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    test_name: str
    n: tuple
    method: str = ""
    df: float | None = None
    branch: str = ""
    notes: tuple = field(default_factory=tuple)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        object.__setattr__(self, "p_value", float(min(max(self.p_value, 0.0), 1.0)))

    def summary(self):
        """``U = 240.0, p < 0.001`` style text."""
        sym = {"mann-whitney": "U", "pearson": "r", "levene": "W", "shapiro-wilk": "W"}
        if self.test_name.endswith("t-test"):
            df = self.df if self.df is None or self.test_name.startswith("welch") else int(self.df)
            head = f"t({df:.4g}) = {self.statistic:.2f}" if df is not None else f"t = {self.statistic:.2f}"
        else:
            s = sym.get(self.test_name, "stat")
            head = f"{s} = {self.statistic:.1f}" if s == "U" else f"{s} = {self.statistic:.3f}"
        p = "p < 0.001" if self.p_value < 0.001 else f"p = {self.p_value:.3f}"
        return f"{head}, {p}"


# -- Shapiro-Wilk ----------------------------------------------------------------

_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(c, x):
    return sum(ci * x ** k for k, ci in enumerate(c))


def _sw_coefficients(n):
    """Royston's approximation to the Shapiro-Wilk weights (antisymmetric, unit norm)."""
    if n == 3:
        return np.array([-math.sqrt(0.5), 0.0, math.sqrt(0.5)])
    m = special.ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    summ2 = float(m @ m)
    u = 1.0 / math.sqrt(n)
    a = m / math.sqrt(summ2)
    an = a[-1] + _poly(_C1, u)
    if n > 5:
        an1 = a[-2] + _poly(_C2, u)
        phi = (summ2 - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (1 - 2 * an ** 2 - 2 * an1 ** 2)
        a = m / math.sqrt(phi)
        a[-1], a[-2], a[0], a[1] = an, an1, -an, -an1
    else:
        phi = (summ2 - 2 * m[-1] ** 2) / (1 - 2 * an ** 2)
        a = m / math.sqrt(phi)
        a[-1], a[0] = an, -an
    return a


def shapiro_wilk(s) -> TestResult:
    """Shapiro-Wilk W with Royston's (1992/1995) normalising p-value approximation.

    Valid for 3 <= n <= 5000.
    """
    s = _sample(s)
    n = len(s)
    if not 3 <= n <= 5000:
        raise InputError(f"Shapiro-Wilk needs 3 <= n <= 5000, got {n}")
    x = np.sort(s.values)
    ss = float(((x - x.mean()) ** 2).sum())
    if ss == 0:
        raise NumericalError("Shapiro-Wilk is undefined for a constant sample")
    a = _sw_coefficients(n)
    w = min(float((a @ x) ** 2 / ss), 1.0)
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
    else:
        y = math.log1p(-w) if w < 1 else -math.inf
        if n <= 11:
            gamma = _poly(_G, n)
            if y >= gamma:
                return TestResult(w, 0.0, "shapiro-wilk", (n,), "royston")
            y = -math.log(gamma - y)
            mu, sigma = _poly(_C3, n), math.exp(_poly(_C4, n))
        else:
            ln = math.log(n)
            mu, sigma = _poly(_C5, ln), math.exp(_poly(_C6, ln))
        p = float(special.ndtr(-(y - mu) / sigma)) if np.isfinite(y) else 1.0
    return TestResult(w, p, "shapiro-wilk", (n,), "royston")


# -- variance and location tests ---------------------------------------------------

def levene(a, b) -> TestResult:
    """Classical (mean-centred) Levene test for equal variances."""
    groups = [_sample(a).values, _sample(b).values]
    if min(len(g) for g in groups) < 2:
        raise InputError("Levene needs at least two values per group")
    z = [np.abs(g - g.mean()) for g in groups]
    n = np.array([len(g) for g in groups])
    big_n, k = n.sum(), len(groups)
    zbar_i = np.array([zi.mean() for zi in z])
    zbar = np.concatenate(z).mean()
    # equal group means give exactly zero, not the roundoff of the pooled mean
    between = 0.0 if np.ptp(zbar_i) == 0 else float((n * (zbar_i - zbar) ** 2).sum())
    within = float(sum(((zi - m) ** 2).sum() for zi, m in zip(z, zbar_i)))
    df1, df2 = k - 1, big_n - k
    if within == 0:
        stat, p = (0.0, 1.0) if between == 0 else (math.inf, 0.0)
    else:
        stat = float(df2 / df1 * between / within)
        p = float(special.fdtrc(df1, df2, stat))
    return TestResult(stat, p, "levene", tuple(int(v) for v in n), "mean-centred", (int(df1), int(df2)))


def t_test(a, b, equal_variance=True) -> TestResult:
    """Two-sided two-sample t-test, pooled or Welch-Satterthwaite."""
    x, y = _sample(a).values, _sample(b).values
    na, nb = len(x), len(y)
    if min(na, nb) < 2:
        raise InputError("t-test needs at least two values per group")
    va, vb = x.var(ddof=1), y.var(ddof=1)
    if va == 0 and vb == 0:
        raise NumericalError("t-test is undefined when both samples are constant")
    diff = x.mean() - y.mean()
    if equal_variance:
        df = na + nb - 2
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
        name = "student t-test"
    else:
        qa, qb = va / na, vb / nb
        se = math.sqrt(qa + qb)
        # scale-free form; squaring tiny variances directly underflows
        ra, rb = qa / (qa + qb), qb / (qa + qb)
        df = 1.0 / (ra ** 2 / (na - 1) + rb ** 2 / (nb - 1))
        name = "welch t-test"
    t = diff / se
    p = float(2.0 * special.stdtr(df, -abs(t)))
    return TestResult(float(t), p, name, (na, nb), "pooled" if equal_variance else "welch", float(df))


def _ranks(v):
    """Average ranks (1-based) and the tie group sizes."""
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    sizes = np.diff(np.r_[starts, len(v)])
    avg = starts + (sizes + 1) / 2.0
    ranks = np.empty(len(v))
    ranks[order] = np.repeat(avg, sizes)
    return ranks, sizes


@lru_cache(maxsize=None)
def _u_counts(m, n):
    """Number of orderings with each value of U for group sizes (m, n), as a tuple."""
    if m == 0 or n == 0:
        return (1,)
    left = _u_counts(m - 1, n)       # largest value from the first group: adds n
    right = _u_counts(m, n - 1)      # largest value from the second group
    out = [0] * (m * n + 1)
    for u, c in enumerate(left):
        out[u + n] += c
    for u, c in enumerate(right):
        out[u] += c
    return tuple(out)


def mann_whitney_exact_p(u_a, m, n):
    """Two-sided exact p: ``2 * P(U <= min(U_a, U_b))``, at most 1."""
    counts = _u_counts(m, n)
    u = int(round(min(u_a, m * n - u_a)))
    return min(1.0, 2.0 * sum(counts[: u + 1]) / sum(counts))


def mann_whitney_u(a, b) -> TestResult:
    """Mann-Whitney U (reported as ``min(U_a, U_b)``), two-sided.

    Exact enumeration when ``n_a + n_b <= 16`` and there are no ties; otherwise
    the normal approximation with tie and continuity corrections.
    """
    x, y = _sample(a).values, _sample(b).values
    m, n = len(x), len(y)
    ranks, ties = _ranks(np.concatenate([x, y]))
    u_a = float(ranks[:m].sum() - m * (m + 1) / 2.0)
    u = min(u_a, m * n - u_a)
    if m + n <= EXACT_MW_LIMIT and np.all(ties == 1):
        return TestResult(u, mann_whitney_exact_p(u_a, m, n), "mann-whitney", (m, n), "exact")
    big_n = m + n
    tie_term = float((ties ** 3 - ties).sum()) / (big_n * (big_n - 1)) if big_n > 1 else 0.0
    var = m * n / 12.0 * ((big_n + 1) - tie_term)
    if var <= 0:
        p = 1.0
    else:
        z = max(abs(u_a - m * n / 2.0) - 0.5, 0.0) / math.sqrt(var)
        p = float(2.0 * special.ndtr(-z))
    return TestResult(u, p, "mann-whitney", (m, n), "normal approximation")


def pearson(x, y) -> TestResult:
    """Pearson r with a two-sided t-distribution p-value on ``n - 2`` df."""
    xv, yv = _sample(x).values, _sample(y).values
    n = len(xv)
    if n != len(yv):
        raise InputError("Pearson needs paired samples of equal length")
    if n < 3:
        raise InputError("Pearson needs at least three pairs")
    dx, dy = xv - xv.mean(), yv - yv.mean()
    sxx, syy = float(dx @ dx), float(dy @ dy)
    if sxx == 0 or syy == 0:
        raise NumericalError("Pearson r is undefined for a constant sample")
    r = float(np.clip((dx @ dy) / math.sqrt(sxx * syy), -1.0, 1.0))
    if abs(r) == 1.0:
        p = 0.0
    else:
        t = r * math.sqrt((n - 2) / (1.0 - r * r))
        p = float(2.0 * special.stdtr(n - 2, -abs(t)))
    return TestResult(r, p, "pearson", (n,), "t", float(n - 2))


# -- classification --------------------------------------------------------------

@dataclass(frozen=True)
class ClassificationThresholds:
    q1: float
    q2: float
    q3: float

    def __post_init__(self):
        if not self.q1 <= self.q2 <= self.q3:
            raise InputError(f"quartiles must be ordered, got {self.q1}, {self.q2}, {self.q3}")


# Reference quartiles (mm^3) of the published male and female cohorts.
MALE_THRESHOLDS = ClassificationThresholds(657.38, 969.22, 1466.51)
FEMALE_THRESHOLDS = ClassificationThresholds(111.06, 272.97, 497.93)


def cohort_quartiles(volumes) -> ClassificationThresholds:
    """Q1, Q2, Q3 by linear interpolation between closest ranks."""
    v = _sample(volumes).values
    if len(v) < 4:
        raise InputError(f"quartiles need at least four values, got {len(v)}")
    q = np.percentile(v, [25, 50, 75], method="linear")
    return ClassificationThresholds(*(float(x) for x in q))


def classify_cam(volume, thresholds: ClassificationThresholds) -> str:
    """negligible (<= Q1), mild (<= Q2), moderate (<= Q3) or major (> Q3)."""
    for name, q in zip(SEVERITIES, (thresholds.q1, thresholds.q2, thresholds.q3)):
        if volume <= q:
            return name
    return SEVERITIES[-1]


def select_test_and_compare(a, b, alpha=ALPHA) -> TestResult:
    """Shapiro-Wilk on both groups; t-test if both look normal (Welch when Levene
    rejects equal variances), Mann-Whitney otherwise."""
    a, b = _sample(a), _sample(b)
    if min(len(a), len(b)) < 3:
        raise InputError("each group needs at least three values")
    notes = []
    normal = True
    for s in (a, b):
        try:
            sw = shapiro_wilk(s)
            notes.append(f"shapiro {s.group or '?'}: W={sw.statistic:.4f} p={sw.p_value:.4g}")
            normal &= sw.p_value > alpha
        except NumericalError:
            notes.append(f"shapiro {s.group or '?'}: constant sample")
            normal = False
    if normal:
        lev = levene(a, b)
        notes.append(f"levene: W={lev.statistic:.4f} p={lev.p_value:.4g}")
        welch = lev.p_value <= alpha
        res = t_test(a, b, equal_variance=not welch)
        branch = "welch" if welch else "pooled"
    else:
        res = mann_whitney_u(a, b)
        branch = "mann-whitney"
    return TestResult(res.statistic, res.p_value, res.test_name, res.n, res.method, res.df,
                      branch, tuple(notes))
