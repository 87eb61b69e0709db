"""Word accuracy, 1 - normalized edit distance, and evaluation reports."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

from ..kernels import levenshtein


@dataclass
class SampleRecord:
    prediction: str
    ground_truth: str
    confidence: float
    latency_ms: float


@dataclass
class EvalReport:
    word_accuracy: float
    one_minus_ned: float
    num_samples: int
    charset_size: int | None = None
    scheme: str | None = None
    refine_iters: int | None = None
    samples: list = field(default_factory=list)

    def summary(self) -> str:
        lines = [
            "== evaluation ==",
            f"samples        {self.num_samples}",
            f"scheme         {self.scheme} (+{self.refine_iters} refine)",
            f"charset        {self.charset_size}",
            f"word accuracy  {self.word_accuracy * 100:.2f}%",
            f"1 - NED        {self.one_minus_ned * 100:.2f}%",
        ]
        return "\n".join(lines)

    def records(self) -> list[str]:
        """One JSON object per sample."""
        return [json.dumps(asdict(s), ensure_ascii=False) for s in self.samples]


def normalized_edit_distance(pred: str, gt: str) -> float:
    longest = max(len(pred), len(gt))
    return 0.0 if longest == 0 else levenshtein(pred, gt) / longest


def compute_metrics(preds: list[str], gts: list[str]) -> EvalReport:
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    n = len(preds)
    if n == 0:
        return EvalReport(0.0, 0.0, 0)
    correct = sum(p == g for p, g in zip(preds, gts))
    score = sum(1.0 - normalized_edit_distance(p, g) for p, g in zip(preds, gts))
    return EvalReport(correct / n, score / n, n)
