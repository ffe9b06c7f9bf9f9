"""Answer-level evaluation metrics and seed-level significance testing.

Accuracy is exact string match after canonicalization; precision/recall/F1
work on whitespace token sets per question and are averaged over questions.
The significance test is Welch's unequal-variance t-test with a two-sided
p-value from the regularized incomplete beta function (evaluated by Lentz's
continued fraction, tolerance 1e-10).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

from .errors import DataError, StatisticsError


@dataclass(frozen=True)
class PredictionRecord:
    id: str
    prediction: str
    ground_truth: str


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    n: int


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p: float
    significant: bool  # p < 0.05


def canonicalize(answer: str) -> str:
    """Trim, collapse internal whitespace, casefold.  No diacritic stripping:
    that could merge distinct Vietnamese words."""
    return " ".join(answer.split()).casefold()


def _tokens(answer: str, multiset: bool):
    toks = canonicalize(answer).split()
    return toks if multiset else set(toks)


def _overlap(pred, gt, multiset: bool) -> int:
    if not multiset:
        return len(pred & gt)
    gt_counts: dict[str, int] = {}
    for t in gt:
        gt_counts[t] = gt_counts.get(t, 0) + 1
    hit = 0
    for t in pred:
        if gt_counts.get(t, 0) > 0:
            gt_counts[t] -= 1
            hit += 1
    return hit


def _require_nonempty(records) -> list:
    records = list(records)
    if not records:
        raise ValueError("metrics require at least one record")
    return records


def accuracy(records) -> float:
    records = _require_nonempty(records)
    hits = sum(1 for r in records if canonicalize(r.prediction) == canonicalize(r.ground_truth))
    return hits / len(records)


def _per_question_pr(r: PredictionRecord, multiset: bool) -> tuple[float, float]:
    pred = _tokens(r.prediction, multiset)
    gt = _tokens(r.ground_truth, multiset)
    if not gt:
        raise DataError(f"record {r.id!r} has empty ground truth after tokenization")
    inter = _overlap(pred, gt, multiset)
    p = inter / len(pred) if pred else 0.0  # empty prediction -> precision 0
    rec = inter / len(gt)
    return p, rec


def precision(records, multiset: bool = False) -> float:
    records = _require_nonempty(records)
    return sum(_per_question_pr(r, multiset)[0] for r in records) / len(records)


def recall(records, multiset: bool = False) -> float:
    records = _require_nonempty(records)
    return sum(_per_question_pr(r, multiset)[1] for r in records) / len(records)


def f1(records, multiset: bool = False) -> float:
    records = _require_nonempty(records)
    total = 0.0
    for r in records:
        p, rec = _per_question_pr(r, multiset)
        if p == 0.0 and rec == 0.0:
            continue
        total += 2.0 * p * rec / (p + rec)
    return total / len(records)


def report(records, multiset: bool = False) -> MetricsReport:
    records = _require_nonempty(records)
    return MetricsReport(
        accuracy=accuracy(records),
        precision=precision(records, multiset),
        recall=recall(records, multiset),
        f1=f1(records, multiset),
        n=len(records),
    )


# ---------------------------------------------------------------------------
# Prediction-file round trip (JSON Lines, UTF-8)


def write_predictions(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(
                {"id": r.id, "prediction": r.prediction, "ground_truth": r.ground_truth},
                ensure_ascii=False) + "\n")


def read_predictions(path) -> list[PredictionRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(PredictionRecord(
                    id=str(obj["id"]),
                    prediction=str(obj["prediction"]),
                    ground_truth=str(obj["ground_truth"]),
                ))
            except (json.JSONDecodeError, KeyError) as exc:
                raise DataError(f"bad prediction record at line {lineno}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Welch's t-test


def _betacf(a: float, b: float, x: float, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Continued fraction for the incomplete beta (Lentz's method)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
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
        if abs(delta - 1.0) < tol:
            return h
    raise StatisticsError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log(1.0 - x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_sf2(t: float, df: float) -> float:
    """Two-sided tail probability P(|T_df| >= |t|)."""
    if df <= 0:
        raise StatisticsError(f"degrees of freedom must be positive, got {df}")
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def welch_t_test(a, b, pooled: bool = False) -> TTestResult:
    a = [float(v) for v in a]
    b = [float(v) for v in b]
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise StatisticsError("each sample needs at least 2 observations")
    ma = sum(a) / na
    mb = sum(b) / nb
    va = sum((v - ma) ** 2 for v in a) / (na - 1)
    vb = sum((v - mb) ** 2 for v in b) / (nb - 1)
    if va == 0.0 and vb == 0.0:
        raise StatisticsError("degenerate samples: both variances are zero")
    if pooled:
        df = float(na + nb - 2)
        sp2 = ((na - 1) * va + (nb - 1) * vb) / df
        se = math.sqrt(sp2 * (1.0 / na + 1.0 / nb))
    else:
        sea2 = va / na
        seb2 = vb / nb
        se = math.sqrt(sea2 + seb2)
        df = (sea2 + seb2) ** 2 / (
            sea2 ** 2 / (na - 1) + seb2 ** 2 / (nb - 1)
        )
    t = (ma - mb) / se
    p = student_t_sf2(t, df)
    return TTestResult(t=t, df=df, p=p, significant=p < 0.05)
