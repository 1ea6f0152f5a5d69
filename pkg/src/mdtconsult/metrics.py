"""Evaluation metrics for both tasks, batch aggregation, participation rates."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import median
from typing import Any, Iterable, Sequence

from .domain import normalize_label
from .errors import EmptyGold, EmptyResults, ValidationError
from .toolkit import DDIGraph

ABSENT_RANK = 11
OUT_OF_LIST = ">10"
HIT_KS = (1, 3, 10)


@dataclass(frozen=True)
class CaseResult:
    case_id: str
    task: str
    rank: int | None = None
    predicted_meds: frozenset[str] | None = None
    gold_meds: frozenset[str] | None = None
    team: tuple[str, ...] = ()
    error: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "team", tuple(self.team))
        if self.task == "diagnosis":
            if self.predicted_meds is not None or self.gold_meds is not None:
                raise ValidationError(f"{self.case_id}: diagnosis result carries medication sets")
        elif self.task == "treatment":
            if self.rank is not None or self.predicted_meds is None or self.gold_meds is None:
                raise ValidationError(f"{self.case_id}: treatment result needs both medication sets and no rank")
            object.__setattr__(self, "predicted_meds", frozenset(self.predicted_meds))
            object.__setattr__(self, "gold_meds", frozenset(self.gold_meds))
        else:
            raise ValidationError(f"unknown task {self.task!r}")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {"case_id": self.case_id, "task": self.task, "team": list(self.team), "error": self.error}
        if self.task == "diagnosis":
            d["rank"] = self.rank
        else:
            d["predicted_meds"] = sorted(self.predicted_meds, key=normalize_label)
            d["gold_meds"] = sorted(self.gold_meds, key=normalize_label)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "CaseResult":
        if d["task"] == "diagnosis":
            return cls(d["case_id"], "diagnosis", rank=d.get("rank"), team=tuple(d.get("team", ())), error=d.get("error"))
        return cls(
            d["case_id"], "treatment",
            predicted_meds=frozenset(d["predicted_meds"]), gold_meds=frozenset(d["gold_meds"]),
            team=tuple(d.get("team", ())), error=d.get("error"),
        )


def _require(results: Sequence[CaseResult]) -> None:
    if not results:
        raise EmptyResults("no case results")


def _ranks(results: Iterable[CaseResult | int | None]) -> list[int | None]:
    return [r.rank if isinstance(r, CaseResult) else r for r in results]


def hit_at_k(results: Sequence[CaseResult | int | None], k: int) -> float:
    """Fraction of cases whose best gold rank is within the top ``k``."""
    if k < 1:
        raise ValidationError("k must be >= 1")
    ranks = _ranks(results)
    _require(ranks)
    return sum(1 for r in ranks if r is not None and r <= k) / len(ranks)


def median_rank(results: Sequence[CaseResult | int | None]) -> float | str:
    ranks = _ranks(results)
    _require(ranks)
    m = median(ABSENT_RANK if r is None else r for r in ranks)
    return OUT_OF_LIST if m > 10 else float(m)


def _norm(s: Iterable[str]) -> set[str]:
    return {normalize_label(x) for x in s}


def _jaccard_frac(pred: Iterable[str], gold: Iterable[str]) -> Fraction:
    p, g = _norm(pred), _norm(gold)
    if not g:
        raise EmptyGold("gold medication set is empty")
    return Fraction(len(p & g), len(p | g))


def jaccard(pred: Iterable[str], gold: Iterable[str]) -> float:
    return float(_jaccard_frac(pred, gold))


def _prf_frac(pred: Iterable[str], gold: Iterable[str]) -> tuple[Fraction, Fraction, Fraction]:
    p, g = _norm(pred), _norm(gold)
    if not g:
        raise EmptyGold("gold medication set is empty")
    inter = len(p & g)
    precision = Fraction(inter, len(p)) if p else Fraction(0)
    recall = Fraction(inter, len(g))
    # 2PR/(P+R) reduces to 2|p&g|/(|p|+|g|)
    f1 = Fraction(2 * inter, len(p) + len(g)) if inter else Fraction(0)
    return precision, recall, f1


def f1(pred: Iterable[str], gold: Iterable[str]) -> tuple[float, float, float]:
    """(precision, recall, F1); precision is 0 for an empty prediction."""
    return tuple(float(x) for x in _prf_frac(pred, gold))


def _ddi_frac(pred: Iterable[str], graph: DDIGraph) -> Fraction:
    drugs = sorted({graph._canon(m) for m in pred})
    n = len(drugs)
    if n < 2:
        return Fraction(0)
    hits = sum(
        1
        for i in range(n)
        for j in range(i + 1, n)
        if frozenset((drugs[i], drugs[j])) in graph.edges
    )
    return Fraction(hits, n * (n - 1) // 2)


def ddi_rate(pred: Iterable[str], graph: DDIGraph) -> float:
    """Share of unordered distinct drug pairs in ``pred`` that interact."""
    return float(_ddi_frac(pred, graph))


def avg_med(results: Sequence[CaseResult | Iterable[str]]) -> float:
    _require(results)
    sizes = [len(r.predicted_meds) if isinstance(r, CaseResult) else len(set(r)) for r in results]
    return float(Fraction(sum(sizes), len(sizes)))


def participation_rates(results: Sequence[CaseResult], departments: Iterable[str] = ()) -> dict[str, float]:
    """Fraction of cases whose team includes each department."""
    counts: dict[str, int] = {d: 0 for d in departments}
    for r in results:
        for d in set(r.team):
            counts[d] = counts.get(d, 0) + 1
    n = len(results)
    return {d: (c / n if n else 0.0) for d, c in counts.items()}


def participation_csv(rates: dict[str, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["department", "rate"])
    for d, rate in rates.items():
        w.writerow([d, f"{rate:.6f}"])
    return buf.getvalue()


def _mean(values: Sequence[Fraction]) -> float:
    return float(sum(values, Fraction(0)) / len(values))


@dataclass
class MetricsReport:
    task: str
    n_cases: int
    hit_at: dict[int, float] = field(default_factory=dict)
    median_rank: float | str | None = None
    jaccard: float | None = None
    f1: float | None = None
    ddi: float | None = None
    avg_med: float | None = None
    mean_team_size: float = 0.0
    n_errors: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "n_cases": self.n_cases,
            "n_errors": self.n_errors,
            "hit_at": {str(k): v for k, v in self.hit_at.items()},
            "median_rank": self.median_rank,
            "jaccard": self.jaccard,
            "f1": self.f1,
            "ddi": self.ddi,
            "avg_med": self.avg_med,
            "mean_team_size": self.mean_team_size,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        if self.task == "diagnosis":
            heads = ["Hit@1", "Hit@3", "Hit@10", "MR"]
            mr = self.median_rank if isinstance(self.median_rank, str) else f"{self.median_rank:.1f}"
            vals = [f"{self.hit_at[1]:.4f}", f"{self.hit_at[3]:.4f}", f"{self.hit_at[10]:.4f}", mr]
        else:
            heads = ["Jaccard", "F1", "DDI", "#MED"]
            ddi = "n/a" if self.ddi is None else f"{self.ddi:.4f}"
            vals = [f"{self.jaccard:.4f}", f"{self.f1:.4f}", ddi, f"{self.avg_med:.2f}"]
        heads += ["Team", "N"]
        vals += [f"{self.mean_team_size:.2f}", str(self.n_cases)]
        widths = [max(len(h), len(v)) for h, v in zip(heads, vals)]
        line = lambda cells: "  ".join(c.rjust(w) for c, w in zip(cells, widths))
        return line(heads) + "\n" + line(vals) + "\n"


def aggregate(results: Sequence[CaseResult], graph: DDIGraph | None = None) -> MetricsReport:
    _require(results)
    tasks = {r.task for r in results}
    if len(tasks) != 1:
        raise ValidationError(f"mixed tasks in one batch: {sorted(tasks)}")
    task = tasks.pop()
    report = MetricsReport(
        task=task,
        n_cases=len(results),
        mean_team_size=float(Fraction(sum(len(r.team) for r in results), len(results))),
        n_errors=sum(1 for r in results if r.error),
    )
    if task == "diagnosis":
        report.hit_at = {k: hit_at_k(results, k) for k in HIT_KS}
        report.median_rank = median_rank(results)
        return report
    report.jaccard = _mean([_jaccard_frac(r.predicted_meds, r.gold_meds) for r in results])
    report.f1 = _mean([_prf_frac(r.predicted_meds, r.gold_meds)[2] for r in results])
    if graph is not None:
        report.ddi = _mean([_ddi_frac(r.predicted_meds, graph) for r in results])
    report.avg_med = avg_med(results)
    return report
