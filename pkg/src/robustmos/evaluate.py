"""Split-level evaluation: accuracies per rule, penalty statistics, profiles.

The per-batch diversity penalty doubles as a label-free shift statistic:
its distribution on in-distribution batches is the reference, and a split
whose mean penalty sits far outside that reference (in reference standard
deviations) is flagged as shifted. The adaptive gate applies pessimistic
aggregation exactly on flagged splits.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .control import RULES
from .model import ModelParams, decide_batch, mixture_forward
from .diversity import penalty
from .synth import Dataset

__all__ = [
    "PenaltyStats",
    "ShiftVerdict",
    "SplitReport",
    "accuracy",
    "penalty_statistic",
    "mixture_profile",
    "expert_prediction_profile",
    "detect_shift",
    "gated_rule",
    "split_report",
    "write_reports_json",
    "write_reports_csv",
    "write_mixture_profile_csv",
    "write_expert_profile_csv",
]

STD_FLOOR = 1e-12


@dataclass(frozen=True)
class PenaltyStats:
    """Mean/std of the per-batch penalty on one split."""

    mean: float
    std: float
    num_batches: int


@dataclass(frozen=True)
class ShiftVerdict:
    reference: PenaltyStats
    target: PenaltyStats
    score: float
    multiplier: float
    shifted: bool

    def to_dict(self) -> dict:
        return {
            "reference_mean": self.reference.mean,
            "reference_std": self.reference.std,
            "target_mean": self.target.mean,
            "target_std": self.target.std,
            "score": self.score,
            "multiplier": self.multiplier,
            "shifted": self.shifted,
        }


def accuracy(model: ModelParams, features: np.ndarray, labels: np.ndarray, rule: str) -> float:
    """Fraction of instances whose decision under the rule matches the label."""
    if features.shape[0] == 0:
        raise ValueError("split is empty")
    return float((decide_batch(model, features, rule) == labels).mean())


def penalty_statistic(
    model: ModelParams,
    features: np.ndarray,
    batch_size: int,
    drop_count: int,
    seed: int = 0,
) -> PenaltyStats:
    """Per-batch penalty mean/std after one seeded shuffle of the split.

    The shuffle guards against file order correlated with features; batch
    size and dropout count should match the ones used in training so values
    are comparable with training-time penalties.
    """
    n = features.shape[0]
    if n < batch_size:
        raise ValueError(f"split of {n} instances is smaller than one batch of {batch_size}")
    order = np.random.default_rng(seed).permutation(n)
    values = []
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        out = mixture_forward(model, features[idx])
        comp = penalty(out.router_probs, drop_count)
        if comp is not None:
            values.append(comp.value)
    arr = np.asarray(values)
    return PenaltyStats(mean=float(arr.mean()), std=float(arr.std()), num_batches=len(values))


def mixture_profile(model: ModelParams, features: np.ndarray) -> np.ndarray:
    """Elementwise mean of the estimated mixture weights over a split."""
    if features.shape[0] == 0:
        raise ValueError("split is empty")
    out = mixture_forward(model, features)
    return out.router_probs.mean(axis=0)


def expert_prediction_profile(model: ModelParams, features: np.ndarray) -> np.ndarray:
    """Mean predicted distribution of each expert; row k is expert k."""
    if features.shape[0] == 0:
        raise ValueError("split is empty")
    out = mixture_forward(model, features)
    return out.expert_probs.mean(axis=0)


def detect_shift(
    reference: PenaltyStats, target: PenaltyStats, multiplier: float = 3.0
) -> ShiftVerdict:
    """Flag a split whose mean penalty deviates from the reference.

    The score is the absolute mean difference in units of the reference's
    per-batch standard deviation; direction is ignored because a shift can
    move the statistic either way.
    """
    score = abs(target.mean - reference.mean) / max(reference.std, STD_FLOOR)
    return ShiftVerdict(
        reference=reference,
        target=target,
        score=float(score),
        multiplier=multiplier,
        shifted=bool(score > multiplier),
    )


def gated_rule(verdict: ShiftVerdict) -> str:
    """Adaptive control: pessimistic aggregation only where a shift is flagged."""
    return "argmin" if verdict.shifted else "estimated"


@dataclass
class SplitReport:
    split: str
    accuracies: dict[str, float]
    penalty_mean: float
    penalty_std: float
    mixture_weights: np.ndarray
    expert_means: np.ndarray

    def to_dict(self) -> dict:
        return {
            "split": self.split,
            "accuracies": self.accuracies,
            "penalty_mean": self.penalty_mean,
            "penalty_std": self.penalty_std,
            "mixture_weights": [float(v) for v in self.mixture_weights],
            "expert_means": [[float(v) for v in row] for row in self.expert_means],
        }


def split_report(
    model: ModelParams,
    data: Dataset,
    batch_size: int,
    drop_count: int,
    rules=RULES,
    seed: int = 0,
) -> SplitReport:
    stats = penalty_statistic(model, data.features, batch_size, drop_count, seed=seed)
    return SplitReport(
        split=data.name,
        accuracies={rule: accuracy(model, data.features, data.labels, rule) for rule in rules},
        penalty_mean=stats.mean,
        penalty_std=stats.std,
        mixture_weights=mixture_profile(model, data.features),
        expert_means=expert_prediction_profile(model, data.features),
    )


def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def write_reports_json(reports: list[SplitReport], path) -> None:
    payload = {"reports": [r.to_dict() for r in reports]}
    Path(path).write_text(json.dumps(payload, indent=1) + "\n")


def write_reports_csv(reports: list[SplitReport], path) -> None:
    """One row per split and rule, with the split's penalty statistics."""
    lines = ["split,rule,accuracy,penalty_mean,penalty_std"]
    for r in reports:
        for rule, acc in r.accuracies.items():
            lines.append(f"{r.split},{rule},{_fmt(acc)},{_fmt(r.penalty_mean)},{_fmt(r.penalty_std)}")
    Path(path).write_text("\n".join(lines) + "\n")


def write_mixture_profile_csv(reports: list[SplitReport], path) -> None:
    """Mean mixture weights per split, one split per row (heatmap-ready)."""
    num_experts = len(reports[0].mixture_weights)
    header = "split," + ",".join(f"weight_{k}" for k in range(num_experts))
    lines = [header]
    for r in reports:
        lines.append(r.split + "," + ",".join(_fmt(v) for v in r.mixture_weights))
    Path(path).write_text("\n".join(lines) + "\n")


def write_expert_profile_csv(reports: list[SplitReport], path) -> None:
    """Mean prediction of each expert per split, one (split, expert) per row."""
    num_labels = reports[0].expert_means.shape[1]
    header = "split,expert," + ",".join(f"p_{y}" for y in range(num_labels))
    lines = [header]
    for r in reports:
        for k, row in enumerate(r.expert_means):
            lines.append(f"{r.split},{k}," + ",".join(_fmt(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")
