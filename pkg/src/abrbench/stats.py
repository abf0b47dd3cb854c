"""Evaluation statistics: correlation criteria, the VQEG logistic
mapping, Wilcoxon signed-rank and variance-ratio tests, one-way ANOVA,
and pairwise significance matrices.

The Wilcoxon test uses the exact null distribution (enumeration over
sign patterns, computed by dynamic programming over doubled ranks) up
to n = 25 and a tie-corrected normal approximation with continuity
correction beyond. The F-distribution CDF is evaluated through the
regularized incomplete beta function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.special import betainc

ROW_BETTER = "row_better"
ROW_WORSE = "row_worse"
INDISTINGUISHABLE = "indistinguishable"

_GLYPH = {ROW_BETTER: "1", ROW_WORSE: "0", INDISTINGUISHABLE: "-"}


def _clean_pair(x, y, min_len: int):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("inputs must be equal-length 1-D vectors")
    if len(x) < min_len:
        raise ValueError(f"need at least {min_len} samples, got {len(x)}")
    return x, y


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _clean_pair(x, y, 3)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = math.sqrt(float(dx @ dx))
    sy = math.sqrt(float(dy @ dy))
    if sx == 0.0 or sy == 0.0:
        raise ValueError("degenerate (zero-variance) input")
    return float(dx @ dy) / (sx * sy)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """Ranks 1..n with ties replaced by their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = avg
        i = j + 1
    return ranks


def srcc(x, y) -> float:
    """Spearman rank-order correlation: Pearson on average ranks."""
    x, y = _clean_pair(x, y, 3)
    return plcc(_average_ranks(x), _average_ranks(y))


def krcc(x, y) -> float:
    """Kendall tau-b by O(n^2) pair counting with tie correction."""
    x, y = _clean_pair(x, y, 3)
    n = len(x)
    concordant = discordant = ties_x = ties_y = 0
    for i in range(n):
        for j in range(i + 1, n):
            a = x[i] - x[j]
            b = y[i] - y[j]
            if a == 0 and b == 0:
                ties_x += 1
                ties_y += 1
            elif a == 0:
                ties_x += 1
            elif b == 0:
                ties_y += 1
            elif (a > 0) == (b > 0):
                concordant += 1
            else:
                discordant += 1
    n0 = n * (n - 1) // 2
    denom = math.sqrt((n0 - ties_x) * (n0 - ties_y))
    if denom == 0.0:
        raise ValueError("all-tied input")
    return (concordant - discordant) / denom


def logistic_5(s: np.ndarray, beta) -> np.ndarray:
    """VQEG 5-parameter monotone mapping."""
    b1, b2, b3, b4, b5 = beta
    with np.errstate(over="ignore"):  # exp overflow saturates to the correct limit
        return b1 * (0.5 - 1.0 / (1.0 + np.exp(b2 * (s - b3)))) + b4 * s + b5


@dataclass(frozen=True)
class LogisticFit:
    mapped: np.ndarray
    beta: tuple[float, float, float, float, float]
    converged: bool

    def __call__(self, s) -> np.ndarray:
        return logistic_5(np.asarray(s, dtype=float), self.beta)


def fit_logistic(objective_scores, mos, max_nfev: int = 2000) -> LogisticFit:
    """Least-squares fit of the 5-parameter logistic from a deterministic start.

    Initialization: b3 = median score, |b1| = MOS range, b2 = 1/std of
    the scores, b4 = 0, b5 = mean MOS, with the sign of b1/b4 following
    the sign of the raw correlation. Sign bounds keep the fitted
    mapping monotone over the whole axis. Reports ``converged=False``
    when the optimizer hit its budget; the best iterate is still
    returned.
    """
    s, m = _clean_pair(objective_scores, mos, 5)
    std = s.std()
    if std == 0.0:
        raise ValueError("degenerate objective scores")
    rising = plcc(s, m) >= 0.0
    span = float(m.max() - m.min())
    x0 = np.array([span if rising else -span, 1.0 / std, float(np.median(s)), 0.0, float(m.mean())])
    if rising:
        lower = [0.0, 0.0, -np.inf, 0.0, -np.inf]
        upper = [np.inf, np.inf, np.inf, np.inf, np.inf]
    else:
        lower = [-np.inf, 0.0, -np.inf, -np.inf, -np.inf]
        upper = [0.0, np.inf, np.inf, 0.0, np.inf]
    x0 = np.clip(x0, lower, upper)

    def residuals(beta):
        return logistic_5(s, beta) - m

    result = least_squares(residuals, x0, bounds=(lower, upper), max_nfev=max_nfev)
    beta = tuple(float(v) for v in result.x)
    return LogisticFit(mapped=logistic_5(s, beta), beta=beta, converged=bool(result.status > 0))


def _signed_rank_statistic(diff: np.ndarray) -> tuple[float, np.ndarray]:
    """W+ and the average ranks of |diff| (zero differences removed by caller)."""
    ranks = _average_ranks(np.abs(diff))
    w_plus = float(ranks[diff > 0].sum())
    return w_plus, ranks


def _exact_signed_rank_p(w_plus: float, ranks: np.ndarray) -> float:
    """Two-sided exact p by DP over doubled ranks (handles tied ranks)."""
    doubled = [int(round(2.0 * r)) for r in ranks]
    total = sum(doubled)
    counts = np.zeros(total + 1, dtype=float)
    counts[0] = 1.0
    for d in doubled:
        shifted = np.zeros_like(counts)
        shifted[d:] = counts[: total + 1 - d]
        counts = counts + shifted
    denom = 2.0 ** len(ranks)
    w2 = int(round(2.0 * w_plus))
    p_le = counts[: w2 + 1].sum() / denom
    p_ge = counts[w2:].sum() / denom
    return min(1.0, 2.0 * min(p_le, p_ge))


def _normal_signed_rank_p(w_plus: float, ranks: np.ndarray) -> float:
    """Tie-corrected normal approximation with continuity correction."""
    n = len(ranks)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    if var <= 0:
        return 1.0
    d = w_plus - mean
    z = (d - 0.5 * np.sign(d)) / math.sqrt(var)
    return math.erfc(abs(z) / math.sqrt(2.0))


def wilcoxon_signed_rank(a, b, alpha: float = 0.05, exact_limit: int = 25) -> tuple[str, float]:
    """Paired two-sided signed-rank test; direction from the rank sums.

    Zero differences are dropped first. If none remain the samples are
    identical: (indistinguishable, p = 1). Fewer than 6 nonzero
    differences cannot reach significance and raise instead.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    diff = a - b
    diff = diff[diff != 0.0]
    n = len(diff)
    if n == 0:
        return INDISTINGUISHABLE, 1.0
    if n < 6:
        raise ValueError(f"only {n} nonzero differences; need at least 6")
    w_plus, ranks = _signed_rank_statistic(diff)
    if n <= exact_limit:
        p = _exact_signed_rank_p(w_plus, ranks)
    else:
        p = _normal_signed_rank_p(w_plus, ranks)
    if p >= alpha:
        return INDISTINGUISHABLE, p
    mean = n * (n + 1) / 4.0
    return (ROW_BETTER if w_plus > mean else ROW_WORSE), p


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F distribution via the regularized incomplete beta."""
    if x <= 0:
        return 0.0
    return float(betainc(d1 / 2.0, d2 / 2.0, d1 * x / (d1 * x + d2)))


def f_test_variance(residuals_a, residuals_b, alpha: float = 0.05) -> tuple[str, float]:
    """Two-sided variance-ratio test; the smaller-variance side is better."""
    a = np.asarray(residuals_a, dtype=float)
    b = np.asarray(residuals_b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("need at least 2 samples per side")
    var_a = float(a.var(ddof=1))
    var_b = float(b.var(ddof=1))
    if var_b == 0.0:
        raise ValueError("zero variance in denominator")
    f = var_a / var_b
    cdf = f_cdf(f, len(a) - 1, len(b) - 1)
    p = min(1.0, 2.0 * min(cdf, 1.0 - cdf))
    if p >= alpha:
        return INDISTINGUISHABLE, p
    return (ROW_BETTER if var_a < var_b else ROW_WORSE), p


def one_way_anova(groups) -> tuple[float, float]:
    """Classical one-way ANOVA: between/within mean-square ratio and p-value."""
    groups = [np.asarray(g, dtype=float) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise ValueError("need at least 2 groups of at least 2 samples")
    n_total = sum(len(g) for g in groups)
    grand = sum(float(g.sum()) for g in groups) / n_total
    ss_between = sum(len(g) * (float(g.mean()) - grand) ** 2 for g in groups)
    ss_within = sum(float(((g - g.mean()) ** 2).sum()) for g in groups)
    d1 = len(groups) - 1
    d2 = n_total - len(groups)
    if ss_within == 0.0:
        raise ValueError("degenerate groups: zero within-group variance")
    f = (ss_between / d1) / (ss_within / d2)
    p = 1.0 - f_cdf(f, d1, d2)
    return f, p


@dataclass(frozen=True)
class SignificanceMatrix:
    """Pairwise better/worse/indistinguishable decisions between methods."""

    labels: tuple[str, ...]
    cells: tuple[tuple[str, ...], ...]
    p_values: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        n = len(self.labels)
        if len(self.cells) != n or any(len(r) != n for r in self.cells):
            raise ValueError("cells must be square over labels")
        for i in range(n):
            if self.cells[i][i] != INDISTINGUISHABLE:
                raise ValueError("diagonal must be indistinguishable")
            for j in range(n):
                a, b = self.cells[i][j], self.cells[j][i]
                ok = (a == ROW_BETTER and b == ROW_WORSE) or (a == ROW_WORSE and b == ROW_BETTER) or (
                    a == b == INDISTINGUISHABLE
                )
                if not ok:
                    raise ValueError("matrix must be antisymmetric")

    def to_markdown(self) -> str:
        head = "| | " + " | ".join(self.labels) + " |"
        sep = "|" + "---|" * (len(self.labels) + 1)
        rows = [head, sep]
        for label, row in zip(self.labels, self.cells):
            rows.append("| " + label + " | " + " | ".join(_GLYPH[c] for c in row) + " |")
        return "\n".join(rows) + "\n"

    def to_csv(self) -> str:
        rows = ["," + ",".join(self.labels)]
        for label, row in zip(self.labels, self.cells):
            rows.append(label + "," + ",".join(_GLYPH[c] for c in row))
        return "\n".join(rows) + "\n"


def build_significance_matrix(
    method_samples: dict[str, list[float]],
    test: str = "wilcoxon",
    mos=None,
    alpha: float = 0.05,
) -> SignificanceMatrix:
    """Pairwise test over methods sampled on the same items.

    ``wilcoxon`` compares the per-item samples directly. ``f_test``
    compares post-logistic prediction residuals against ``mos``: each
    method's scores are mapped through their own fitted logistic first.
    """
    labels = tuple(method_samples.keys())
    lengths = {len(v) for v in method_samples.values()}
    if len(lengths) != 1:
        raise ValueError("all methods must be sampled over the same items")
    if test == "wilcoxon":
        data = {k: np.asarray(v, dtype=float) for k, v in method_samples.items()}
        pair_fn = lambda x, y: wilcoxon_signed_rank(x, y, alpha)
    elif test == "f_test":
        if mos is None:
            raise ValueError("f_test requires the mos vector")
        mos = np.asarray(mos, dtype=float)
        data = {}
        for k, v in method_samples.items():
            fit = fit_logistic(v, mos)
            data[k] = fit.mapped - mos
        pair_fn = lambda x, y: f_test_variance(x, y, alpha)
    else:
        raise ValueError(f"unknown test {test!r}; expected wilcoxon or f_test")

    n = len(labels)
    cells = [[INDISTINGUISHABLE] * n for _ in range(n)]
    ps = [[1.0] * n for _ in range(n)]
    flipped = {ROW_BETTER: ROW_WORSE, ROW_WORSE: ROW_BETTER, INDISTINGUISHABLE: INDISTINGUISHABLE}
    for i in range(n):
        for j in range(i + 1, n):
            decision, p = pair_fn(data[labels[i]], data[labels[j]])
            cells[i][j] = decision
            cells[j][i] = flipped[decision]
            ps[i][j] = ps[j][i] = p
    return SignificanceMatrix(
        labels=labels,
        cells=tuple(tuple(r) for r in cells),
        p_values=tuple(tuple(r) for r in ps),
    )
