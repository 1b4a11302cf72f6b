"""Evaluation harness: composite scoring, two-sample significance tests,
effect sizes, and rater agreement.

The p-value machinery (normal CDF, regularized incomplete beta for the
t distribution) is implemented here with stdlib math so the evaluation
contract carries no external statistics dependency; reference-library
agreement is asserted by the test suite, not assumed at runtime.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .errors import EffectSizeUndefinedError, UserError

ANSWER_SCALE = 4.0
CITATION_SCALE = 2.0


@dataclass(frozen=True)
class ScoreSample:
    query_id: str
    answer_score: float
    citation_score: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.answer_score <= ANSWER_SCALE:
            raise ValueError(f"answer_score {self.answer_score} outside [0, 4]")
        if self.citation_score is not None and not (
            0.0 <= self.citation_score <= CITATION_SCALE
        ):
            raise ValueError(f"citation_score {self.citation_score} outside [0, 2]")


@dataclass(frozen=True)
class SystemSummary:
    name: str
    n: int
    answer_mean: float
    answer_std: float
    citation_mean: float | None
    citation_std: float | None
    composite_mean: float
    composite_std: float
    std_defined: bool = True


def composite_score(
    answer: float, citation: float | None, lambda_weight: float
) -> float:
    """Blend per-scale-normalized answer (0-4) and citation (0-2)
    quality into [0, 1]. Systems without citation support score on the
    normalized answer alone."""
    if not 0.0 <= lambda_weight <= 1.0:
        raise ValueError(f"lambda {lambda_weight} outside [0, 1]")
    if not 0.0 <= answer <= ANSWER_SCALE:
        raise ValueError(f"answer {answer} outside [0, 4]")
    if citation is None:
        return answer / ANSWER_SCALE
    if not 0.0 <= citation <= CITATION_SCALE:
        raise ValueError(f"citation {citation} outside [0, 2]")
    return lambda_weight * (answer / ANSWER_SCALE) + (1.0 - lambda_weight) * (
        citation / CITATION_SCALE
    )


def _mean(xs: list[float]) -> float:
    if not xs:
        raise ValueError("empty sample")
    return sum(xs) / len(xs)


def _sample_var(xs: list[float]) -> float:
    if len(xs) < 2:
        raise ValueError("need at least two observations for variance")
    m = _mean(xs)
    return sum((x - m) ** 2 for x in xs) / (len(xs) - 1)


def mean_delta(a: list[float], b: list[float]) -> float:
    return _mean(a) - _mean(b)


# ── Distribution machinery ─────────────────────────────────────────


def normal_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _betacf(a: float, b: float, x: float) -> float:
    # Lentz's continued fraction for the incomplete beta function
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    if math.isinf(t):
        return 0.0
    if df <= 0:
        raise ValueError("degrees of freedom must be positive")
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


# ── Two-sample tests ───────────────────────────────────────────────


def students_t(a: list[float], b: list[float]) -> tuple[float, float]:
    """Pooled-variance two-sample t with two-sided p."""
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two observations")
    diff = _mean(a) - _mean(b)
    sp2 = ((na - 1) * _sample_var(a) + (nb - 1) * _sample_var(b)) / (na + nb - 2)
    if sp2 == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    return t, t_two_sided_p(t, na + nb - 2)


def welch_t(a: list[float], b: list[float]) -> tuple[float, float]:
    """Unpooled-variance t with Welch-Satterthwaite degrees of freedom."""
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two observations")
    diff = _mean(a) - _mean(b)
    va, vb = _sample_var(a) / na, _sample_var(b) / nb
    if va + vb == 0.0:
        if diff == 0.0:
            return 0.0, 1.0
        return math.copysign(math.inf, diff), 0.0
    t = diff / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (na - 1) + vb**2 / (nb - 1))
    return t, t_two_sided_p(t, df)


def _midranks(pooled: list[float]) -> list[float]:
    order = sorted(range(len(pooled)), key=lambda i: pooled[i])
    ranks = [0.0] * len(pooled)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        midrank = (i + j) / 2.0 + 1.0
        for k in range(i, j + 1):
            ranks[order[k]] = midrank
        i = j + 1
    return ranks


_EXACT_TOTAL_LIMIT = 20


def mann_whitney_u(a: list[float], b: list[float]) -> tuple[float, float]:
    """Rank-sum U (for group a) with midrank tie handling.

    Exact permutation enumeration for small pooled samples; otherwise a
    normal approximation with tie-corrected variance and continuity
    correction. All-tied data gives p = 1.
    """
    na, nb = len(a), len(b)
    if na < 1 or nb < 1:
        raise ValueError("both groups must be non-empty")
    pooled = list(a) + list(b)
    ranks = _midranks(pooled)
    ra = sum(ranks[:na])
    u = ra - na * (na + 1) / 2.0
    n = na + nb
    if len(set(pooled)) == 1:
        return u, 1.0
    if n <= _EXACT_TOTAL_LIMIT:
        return u, _exact_mw_p(ranks, na, u)
    mu = na * nb / 2.0
    tie_counts: dict[float, int] = {}
    for value in pooled:
        tie_counts[value] = tie_counts.get(value, 0) + 1
    tie_term = sum(t**3 - t for t in tie_counts.values()) / (n * (n - 1))
    sigma2 = na * nb / 12.0 * ((n + 1) - tie_term)
    sigma = math.sqrt(sigma2)
    num = u - mu
    if num > 0:
        num -= 0.5
    elif num < 0:
        num += 0.5
    z = num / sigma
    return u, min(1.0, 2.0 * normal_sf(abs(z)))


def _exact_mw_p(ranks: list[float], na: int, u_obs: float) -> float:
    offset = na * (na + 1) / 2.0
    total = 0
    le = 0
    ge = 0
    eps = 1e-9
    for combo in itertools.combinations(range(len(ranks)), na):
        u = sum(ranks[i] for i in combo) - offset
        total += 1
        if u <= u_obs + eps:
            le += 1
        if u >= u_obs - eps:
            ge += 1
    return min(1.0, 2.0 * min(le, ge) / total)


# ── Effect sizes and agreement ─────────────────────────────────────

EFFECT_THRESHOLDS = ((0.2, "negligible"), (0.5, "small"), (0.8, "medium"))


def cohens_d(a: list[float], b: list[float]) -> float:
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise ValueError("each group needs at least two observations")
    pooled = math.sqrt(
        ((na - 1) * _sample_var(a) + (nb - 1) * _sample_var(b)) / (na + nb - 2)
    )
    if pooled == 0.0:
        raise EffectSizeUndefinedError("zero pooled standard deviation")
    return (_mean(a) - _mean(b)) / pooled


def cohens_d_from_stats(
    mean_a: float, std_a: float, n_a: int, mean_b: float, std_b: float, n_b: int
) -> float:
    pooled = math.sqrt(
        ((n_a - 1) * std_a**2 + (n_b - 1) * std_b**2) / (n_a + n_b - 2)
    )
    if pooled == 0.0:
        raise EffectSizeUndefinedError("zero pooled standard deviation")
    return (mean_a - mean_b) / pooled


def classify_effect_size(d: float) -> str:
    magnitude = abs(d)
    for bound, label in EFFECT_THRESHOLDS:
        if magnitude < bound:
            return label
    return "large"


def cohens_kappa(ratings_a: list, ratings_b: list) -> float:
    if len(ratings_a) != len(ratings_b):
        raise ValueError("rating vectors must have equal length")
    n = len(ratings_a)
    if n == 0:
        raise ValueError("rating vectors must be non-empty")
    labels = sorted(set(ratings_a) | set(ratings_b), key=repr)
    p_o = sum(1 for x, y in zip(ratings_a, ratings_b) if x == y) / n
    p_e = sum(
        (ratings_a.count(lbl) / n) * (ratings_b.count(lbl) / n) for lbl in labels
    )
    if p_e == 1.0:
        # both raters constant and identical: perfect agreement
        return 1.0
    return (p_o - p_e) / (1.0 - p_e)


# ── Run summaries ──────────────────────────────────────────────────


def summarize_run(
    samples: list[ScoreSample], lambda_weight: float, name: str = ""
) -> SystemSummary:
    if not samples:
        raise ValueError("no samples")
    composites = [
        composite_score(s.answer_score, s.citation_score, lambda_weight)
        for s in samples
    ]
    answers = [s.answer_score for s in samples]
    citations = [s.citation_score for s in samples if s.citation_score is not None]
    has_citations = len(citations) == len(samples) and bool(citations)
    n = len(samples)
    std_defined = n >= 2

    def std(xs: list[float]) -> float:
        return math.sqrt(_sample_var(xs)) if len(xs) >= 2 else 0.0

    return SystemSummary(
        name=name,
        n=n,
        answer_mean=_mean(answers),
        answer_std=std(answers),
        citation_mean=_mean(citations) if has_citations else None,
        citation_std=std(citations) if has_citations else None,
        composite_mean=_mean(composites),
        composite_std=std(composites),
        std_defined=std_defined,
    )


def composites_for(samples: list[ScoreSample], lambda_weight: float) -> list[float]:
    return [
        composite_score(s.answer_score, s.citation_score, lambda_weight)
        for s in samples
    ]


def load_scores(path: str | Path) -> dict[str, list[ScoreSample]]:
    """Score-file input: JSON lines
    {query_id, system, answer_score, citation_score?}."""
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise UserError(f"cannot read score file {path}: {exc}") from exc
    systems: dict[str, list[ScoreSample]] = {}
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
            sample = ScoreSample(
                query_id=str(record["query_id"]),
                answer_score=float(record["answer_score"]),
                citation_score=(
                    float(record["citation_score"])
                    if record.get("citation_score") is not None
                    else None
                ),
            )
            system = record["system"]
        except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
            raise UserError(f"{path}:{lineno}: bad score record: {exc}") from exc
        systems.setdefault(system, []).append(sample)
    return systems


def compare_systems(
    a: list[ScoreSample], b: list[ScoreSample], lambda_weight: float
) -> dict:
    ca = composites_for(a, lambda_weight)
    cb = composites_for(b, lambda_weight)
    t_stat, t_p = students_t(ca, cb)
    w_stat, w_p = welch_t(ca, cb)
    u_stat, u_p = mann_whitney_u(ca, cb)
    try:
        d = cohens_d(ca, cb)
        d_class = classify_effect_size(d)
    except EffectSizeUndefinedError:
        d, d_class = None, "undefined"
    return {
        "delta_mean": mean_delta(ca, cb),
        "t": t_stat,
        "t_p": t_p,
        "welch_t": w_stat,
        "welch_p": w_p,
        "u": u_stat,
        "u_p": u_p,
        "cohens_d": d,
        "effect_class": d_class,
    }
