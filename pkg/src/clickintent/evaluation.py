"""Test-split metrics, the multi-seed protocol and Welch significance tests."""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

from scipy import stats as sps

from .domain import Corpus, EmptySplit, Label, SymbolizedSession
from .training import ModelSpec, train_model

REPORT_VERSION = 1


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


@dataclass
class RunMetrics:
    """Confusion counts with BUY as the positive class, plus derived rates.

    Rates with a zero denominator are None rather than 0.
    """

    tp: int
    fn: int
    fp: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.fp + self.tn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    def precision(self, label: Label) -> float | None:
        return _ratio(self.tp, self.tp + self.fp) if label is Label.BUY else _ratio(self.tn, self.tn + self.fn)

    def recall(self, label: Label) -> float | None:
        return _ratio(self.tp, self.tp + self.fn) if label is Label.BUY else _ratio(self.tn, self.tn + self.fp)

    def f1(self, label: Label) -> float | None:
        p, r = self.precision(label), self.recall(label)
        if p is None or r is None or p + r == 0:
            return None
        return 2 * p * r / (p + r)

    def to_dict(self) -> dict:
        return {
            "confusion": {"tp": self.tp, "fn": self.fn, "fp": self.fp, "tn": self.tn},
            "accuracy": self.accuracy,
            "per_class": {
                lab.value: {"precision": self.precision(lab), "recall": self.recall(lab), "f1": self.f1(lab)}
                for lab in Label
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RunMetrics":
        return cls(**doc["confusion"])


def confusion(truth: Sequence[Label], predicted: Sequence[Label]) -> RunMetrics:
    if len(truth) != len(predicted):
        raise ValueError("truth and predictions differ in length")
    if not truth:
        raise EmptySplit("no sessions to evaluate")
    tp = sum(1 for t, p in zip(truth, predicted) if t is Label.BUY and p is Label.BUY)
    fn = sum(1 for t, p in zip(truth, predicted) if t is Label.BUY and p is not Label.BUY)
    fp = sum(1 for t, p in zip(truth, predicted) if t is not Label.BUY and p is Label.BUY)
    return RunMetrics(tp, fn, fp, len(truth) - tp - fn - fp)


def evaluate(model, test: Sequence[SymbolizedSession]) -> RunMetrics:
    """Score ``model`` (anything with ``predict(sessions)``) on a labeled split."""
    if not test:
        raise EmptySplit("test split is empty")
    return confusion([s.label for s in test], model.predict(test))


@dataclass
class EvalReport:
    model_id: str
    config: dict
    seeds: list[int]
    runs: list[RunMetrics]
    wall_clock: list[float] = field(default_factory=list)

    @property
    def accuracies(self) -> list[float]:
        return [r.accuracy for r in self.runs]

    @property
    def mean(self) -> float:
        return statistics.fmean(self.accuracies)

    @property
    def sd(self) -> float:
        """Sample standard deviation over runs; 0 for a single run."""
        return statistics.stdev(self.accuracies) if len(self.runs) > 1 else 0.0

    @property
    def pooled(self) -> RunMetrics:
        return RunMetrics(*(sum(getattr(r, k) for r in self.runs) for k in ("tp", "fn", "fp", "tn")))

    def to_dict(self, include_timing: bool = False) -> dict:
        doc = {
            "format": "clickintent.eval_report",
            "version": REPORT_VERSION,
            "model_id": self.model_id,
            "config": self.config,
            "seeds": self.seeds,
            "accuracies": self.accuracies,
            "mean_accuracy": self.mean,
            "sd_accuracy": self.sd,
            "pooled": self.pooled.to_dict(),
            "runs": [r.to_dict() for r in self.runs],
        }
        if include_timing:
            doc["wall_clock_s"] = self.wall_clock
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "EvalReport":
        return cls(
            model_id=doc["model_id"],
            config=doc["config"],
            seeds=list(doc["seeds"]),
            runs=[RunMetrics.from_dict(r) for r in doc["runs"]],
            wall_clock=list(doc.get("wall_clock_s", [])),
        )

    def to_json(self, include_timing: bool = False) -> str:
        return json.dumps(self.to_dict(include_timing), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        return cls.from_dict(json.loads(text))


def multi_seed_eval(spec: ModelSpec, corpus: Corpus, n_runs: int = 10, base_seed: int = 0) -> EvalReport:
    """Train and test ``spec`` once per seed base_seed + i.

    Count-based models involve no randomness and are run exactly once.
    """
    runs = 1 if spec.deterministic else n_runs
    if runs < 1:
        raise ValueError("n_runs must be >= 1")
    seeds = [base_seed + i for i in range(runs)]
    results, clock = [], []
    for seed in seeds:
        start = time.perf_counter()
        model = train_model(spec, corpus, seed)
        results.append(evaluate(model, corpus.test))
        clock.append(time.perf_counter() - start)
    return EvalReport(spec.model_id, spec.to_dict(), seeds, results, clock)


def format_table(reports: Sequence[EvalReport]) -> str:
    """Plain-text accuracy table; the spread is shown only for multi-run reports."""
    width = max([len("Model")] + [len(r.model_id) for r in reports]) + 2
    lines = [f"{'Model':<{width}}Accuracy"]
    for r in reports:
        cell = f"{r.mean:.3f}"
        if len(r.runs) > 1:
            cell += f" (± {r.sd:.3f})"
        lines.append(f"{r.model_id:<{width}}{cell}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class Comparison:
    decision: str            # "a_better" | "b_better" | "indistinguishable"
    t_statistic: float
    df: float
    p_value: float
    confidence: float
    point_comparison: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def welch_t(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Welch's t statistic and Welch-Satterthwaite degrees of freedom."""
    na, nb = len(a), len(b)
    va, vb = statistics.variance(a) / na, statistics.variance(b) / nb
    diff = statistics.fmean(a) - statistics.fmean(b)
    se2 = va + vb
    if se2 == 0:
        t = 0.0 if diff == 0 else math.copysign(math.inf, diff)
        return t, float(na + nb - 2)
    df = se2 * se2 / (va * va / (na - 1) + vb * vb / (nb - 1))
    return diff / math.sqrt(se2), df


def compare_accuracies(a: Sequence[float], b: Sequence[float], confidence: float = 0.99) -> Comparison:
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    mean_a, mean_b = statistics.fmean(a), statistics.fmean(b)
    if len(a) < 2 or len(b) < 2:
        decision = "indistinguishable" if mean_a == mean_b else ("a_better" if mean_a > mean_b else "b_better")
        return Comparison(decision, math.nan, math.nan, math.nan, confidence, point_comparison=True)
    t, df = welch_t(a, b)
    if math.isinf(t):
        p = 0.0
    elif t == 0.0:
        p = 1.0
    else:
        p = float(2.0 * sps.t.sf(abs(t), df))
    if p < 1.0 - confidence:
        decision = "a_better" if mean_a > mean_b else "b_better"
    else:
        decision = "indistinguishable"
    return Comparison(decision, t, df, p, confidence)


def compare(report_a: EvalReport, report_b: EvalReport, confidence: float = 0.99) -> Comparison:
    """Welch two-sample t-test on per-seed test accuracies."""
    return compare_accuracies(report_a.accuracies, report_b.accuracies, confidence)
