"""Detection-fidelity accounting over multi-ion basis states.

The average detection fidelity of a register is the unweighted mean over
prepared basis states of the probability of reading back exactly the
prepared state.  Per-state uncertainties are binomial standard errors and
combine into the average as independent errors.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np


class EvaluationError(ValueError):
    pass


def labels_to_bits(labels: Sequence[str]) -> np.ndarray:
    """Bit matrix from basis-state labels, ion 0 in column 0."""
    if len(labels) == 0:
        raise EvaluationError("no labels given")
    width = len(labels[0])
    out = np.empty((len(labels), width), dtype=np.int8)
    for i, label in enumerate(labels):
        if len(label) != width or any(c not in "01" for c in label):
            raise EvaluationError(f"bad label {label!r}")
        out[i] = [int(c) for c in label]
    return out


def bits_to_labels(bits: np.ndarray) -> list[str]:
    return ["".join("1" if b else "0" for b in row) for row in np.asarray(bits)]


def label_to_index(label: str) -> int:
    return int(label, 2)


def index_to_label(index: int, num_ions: int) -> str:
    return format(index, f"0{num_ions}b")


@dataclass
class ConfusionMatrix:
    """counts[i, j] = shots prepared in state i and measured as state j."""

    counts: np.ndarray
    num_ions: int


def confusion(predicted: Sequence[str], prepared: Sequence[str]) -> ConfusionMatrix:
    if len(predicted) != len(prepared):
        raise EvaluationError(
            f"{len(predicted)} predictions for {len(prepared)} prepared labels"
        )
    if len(prepared) == 0:
        raise EvaluationError("empty evaluation set")
    num_ions = len(prepared[0])
    size = 2**num_ions
    counts = np.zeros((size, size), dtype=np.int64)
    for pred, prep in zip(predicted, prepared):
        if len(pred) != num_ions:
            raise EvaluationError(f"label width mismatch: {pred!r} vs {prep!r}")
        counts[label_to_index(prep), label_to_index(pred)] += 1
    return ConfusionMatrix(counts, num_ions)


@dataclass
class FidelityReport:
    strategy: str
    per_state: np.ndarray
    per_state_stderr: np.ndarray
    shots_per_state: np.ndarray
    average: float
    average_stderr: float

    @property
    def average_error(self) -> float:
        return 1.0 - self.average


def fidelity(matrix: ConfusionMatrix | np.ndarray, strategy: str = "") -> FidelityReport:
    """Per-state and average detection fidelity with binomial uncertainties."""
    counts = matrix.counts if isinstance(matrix, ConfusionMatrix) else np.asarray(matrix)
    counts = counts.astype(float)
    if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
        raise EvaluationError(f"confusion matrix must be square, got {counts.shape}")
    shots = counts.sum(axis=1)
    if np.any(shots == 0):
        missing = [int(i) for i in np.flatnonzero(shots == 0)]
        raise EvaluationError(f"prepared states with no shots: {missing}")
    per_state = np.diag(counts) / shots
    stderr = np.sqrt(per_state * (1.0 - per_state) / shots)
    n_states = counts.shape[0]
    average = float(per_state.mean())
    average_stderr = float(np.sqrt(np.sum(stderr**2)) / n_states)
    return FidelityReport(
        strategy=strategy,
        per_state=per_state,
        per_state_stderr=stderr,
        shots_per_state=shots.astype(np.int64),
        average=average,
        average_stderr=average_stderr,
    )


class ImprovementResult(NamedTuple):
    value: float
    stderr: float


def improvement(
    baseline: FidelityReport | float, candidate: FidelityReport | float
) -> ImprovementResult:
    """Relative reduction of the average detection error.

    Accepts fidelity reports (uncertainty propagated) or bare averages
    (uncertainty zero).  Undefined when the baseline error is zero.
    """

    def unpack(x) -> tuple[float, float]:
        if isinstance(x, FidelityReport):
            return x.average, x.average_stderr
        return float(x), 0.0

    fid_base, se_base = unpack(baseline)
    fid_cand, se_cand = unpack(candidate)
    err_base = 1.0 - fid_base
    err_cand = 1.0 - fid_cand
    if err_base <= 0.0:
        raise EvaluationError("improvement undefined: baseline error is zero")
    value = (err_base - err_cand) / err_base
    variance = (se_cand / err_base) ** 2 + (err_cand * se_base / err_base**2) ** 2
    return ImprovementResult(value, math.sqrt(variance))


def split(
    labels: Sequence[str], fraction: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic stratified split into (train, test) index arrays.

    Each distinct label is permuted independently and cut at
    ``round(fraction * n)``.  The two sides are disjoint, exhaustive, and
    both non-empty for every label.
    """
    if not 0.0 < fraction < 1.0:
        raise EvaluationError(f"fraction must be inside (0, 1), got {fraction}")
    labels = list(labels)
    by_label: dict[str, list[int]] = {}
    for i, label in enumerate(labels):
        by_label.setdefault(label, []).append(i)
    rng = np.random.default_rng(np.random.SeedSequence((seed, len(labels))))
    train: list[int] = []
    test: list[int] = []
    for label in sorted(by_label):
        indices = np.asarray(by_label[label])
        order = rng.permutation(indices.size)
        n_train = int(round(fraction * indices.size))
        if n_train == 0 or n_train == indices.size:
            raise EvaluationError(
                f"label {label!r}: {indices.size} shots cannot be split at {fraction}"
            )
        shuffled = indices[order]
        train.extend(shuffled[:n_train])
        test.extend(shuffled[n_train:])
    return np.sort(np.asarray(train)), np.sort(np.asarray(test))


def write_fidelity_csv(reports: Sequence[FidelityReport], path: str) -> None:
    """One row per (strategy, prepared state) plus an average row each."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "state", "fidelity", "stderr", "shots"])
        for report in reports:
            num_ions = int(np.log2(len(report.per_state)))
            for i, (fid, se, n) in enumerate(
                zip(report.per_state, report.per_state_stderr, report.shots_per_state)
            ):
                writer.writerow(
                    [report.strategy, index_to_label(i, num_ions), f"{fid:.6f}",
                     f"{se:.6f}", int(n)]
                )
            writer.writerow(
                [report.strategy, "average", f"{report.average:.6f}",
                 f"{report.average_stderr:.6f}", int(report.shots_per_state.sum())]
            )


def report_to_dict(report: FidelityReport) -> dict:
    num_ions = int(np.log2(len(report.per_state)))
    return {
        "strategy": report.strategy,
        "average": report.average,
        "average_stderr": report.average_stderr,
        "per_state": {
            index_to_label(i, num_ions): {
                "fidelity": float(f),
                "stderr": float(s),
                "shots": int(n),
            }
            for i, (f, s, n) in enumerate(
                zip(report.per_state, report.per_state_stderr, report.shots_per_state)
            )
        },
    }
