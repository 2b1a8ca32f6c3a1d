"""Unit-level localization metrics: accuracy, F-measure, success rate.

The positive class is "forged" (label 1). F-measure degenerates to 0
whenever a 0/0 would occur, which keeps the success-rate threshold
well defined for total misses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_TH = 2.0 / 3.0


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def confusion(pred: np.ndarray, truth: np.ndarray) -> ConfusionCounts:
    """Per-unit confusion counts between a prediction map and ground truth."""
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError(f"grid shapes differ: {pred.shape} vs {truth.shape}")
    p = pred.astype(bool)
    t = truth.astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & t)),
        tn=int(np.count_nonzero(~p & ~t)),
        fp=int(np.count_nonzero(p & ~t)),
        fn=int(np.count_nonzero(~p & t)),
    )


def accuracy(c: ConfusionCounts) -> float:
    if c.total == 0:
        raise ValueError("accuracy of an empty comparison is undefined")
    return (c.tp + c.tn) / c.total


def precision(c: ConfusionCounts) -> float:
    denom = c.tp + c.fp
    return c.tp / denom if denom else 0.0


def recall(c: ConfusionCounts) -> float:
    denom = c.tp + c.fn
    return c.tp / denom if denom else 0.0


def f_measure(c: ConfusionCounts) -> float:
    """Harmonic mean of precision and recall; 0 on any degenerate case."""
    p = precision(c)
    r = recall(c)
    if p + r == 0.0:
        return 0.0
    return 2.0 * p * r / (p + r)


def avg_f(f_values: list[float]) -> float:
    """Arithmetic mean F-measure over a test set."""
    if not f_values:
        raise ValueError("avg_f requires at least one value")
    return float(np.mean(f_values))


def success_rate(f_values: list[float], t_h: float = DEFAULT_TH) -> float:
    """Fraction of images whose F-measure reaches the threshold."""
    if not f_values:
        raise ValueError("success_rate requires at least one value")
    if not 0.0 <= t_h <= 1.0:
        raise ValueError(f"threshold must lie in [0, 1], got {t_h}")
    return float(np.mean([1.0 if f >= t_h else 0.0 for f in f_values]))


@dataclass
class ImageScore:
    image_id: str
    accuracy: float
    precision: float
    recall: float
    f_measure: float


@dataclass
class MetricsReport:
    per_image: list[ImageScore] = field(default_factory=list)
    t_h: float = DEFAULT_TH

    def add(self, image_id: str, counts: ConfusionCounts) -> ImageScore:
        score = ImageScore(
            image_id=image_id,
            accuracy=accuracy(counts),
            precision=precision(counts),
            recall=recall(counts),
            f_measure=f_measure(counts),
        )
        self.per_image.append(score)
        return score

    @property
    def f_values(self) -> list[float]:
        return [s.f_measure for s in self.per_image]

    @property
    def avg_f(self) -> float:
        return avg_f(self.f_values)

    @property
    def success_rate(self) -> float:
        return success_rate(self.f_values, self.t_h)

    def write_tsv(self, path) -> None:
        """One row per image, then summary rows."""
        with open(path, "w", encoding="ascii") as fh:
            fh.write("image\taccuracy\tprecision\trecall\tf_measure\n")
            for s in self.per_image:
                fh.write(
                    f"{s.image_id}\t{s.accuracy:.6f}\t{s.precision:.6f}"
                    f"\t{s.recall:.6f}\t{s.f_measure:.6f}\n"
                )
            fh.write(f"avg_f\t{self.avg_f:.6f}\n")
            fh.write(f"success_rate\t{self.success_rate:.6f}\n")
            fh.write(f"t_h\t{self.t_h:.6f}\n")

    def summary(self) -> dict[str, float]:
        return {
            "n_images": len(self.per_image),
            "avg_accuracy": float(np.mean([s.accuracy for s in self.per_image])),
            "avg_f": self.avg_f,
            "success_rate": self.success_rate,
            "t_h": self.t_h,
        }


def write_summary(path, values: dict) -> None:
    """Flat key=value summary file (machine readable)."""
    with open(path, "w", encoding="ascii") as fh:
        for key, value in values.items():
            fh.write(f"{key}={value}\n")


def read_summary(path) -> dict[str, str]:
    out = {}
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line or "=" not in line:
                continue
            key, value = line.split("=", 1)
            out[key] = value
    return out
