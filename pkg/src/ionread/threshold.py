"""Count-threshold discriminators, fixed and neighbour-adaptive.

The fixed discriminator reads each ion independently: a total count strictly
above the ion's threshold means bright.  The adaptive variant refines this
with one threshold per neighbour-state context, applied iteratively until
the register's bit assignment reaches a fixed point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .evaluate import bits_to_labels, labels_to_bits


class ThresholdError(ValueError):
    pass


def neighbour_indices(num_ions: int, ion: int) -> tuple[int, ...]:
    """Adjacent ions in the chain, in index order."""
    return tuple(j for j in (ion - 1, ion + 1) if 0 <= j < num_ions)


def _as_count_matrix(counts) -> np.ndarray:
    counts = np.asarray(counts)
    if counts.ndim != 2:
        raise ThresholdError(f"counts must be 2-d (shots, ions), got {counts.shape}")
    mat = np.rint(counts).astype(np.int64)
    if not np.allclose(counts, mat):
        raise ThresholdError("counts must be integers")
    if np.any(mat < 0):
        raise ThresholdError("counts must be >= 0")
    return mat


def _best_threshold(counts: np.ndarray, bits: np.ndarray) -> int:
    """Integer threshold minimising training misclassifications.

    Scans 0..max(count); ties go to the smaller threshold.
    """
    bright = counts[bits == 1]
    dark = counts[bits == 0]
    if bright.size == 0 or dark.size == 0:
        raise ThresholdError("channel saw only one class; cannot fit a threshold")
    top = int(counts.max())
    # bright errors: count <= theta; dark errors: count > theta
    bright_cdf = np.cumsum(np.bincount(bright, minlength=top + 1))
    dark_cdf = np.cumsum(np.bincount(dark, minlength=top + 1))
    total = bright_cdf + (dark.size - dark_cdf)
    return int(np.argmin(total))


@dataclass(frozen=True)
class FixedThresholdModel:
    thresholds: tuple[int, ...]

    @property
    def num_ions(self) -> int:
        return len(self.thresholds)

    def to_dict(self) -> dict:
        return {
            "format": "ionread.threshold_fixed",
            "version": 1,
            "thresholds": list(self.thresholds),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FixedThresholdModel":
        if data.get("format") != "ionread.threshold_fixed":
            raise ThresholdError("not a fixed-threshold model record")
        return cls(tuple(int(t) for t in data["thresholds"]))


def fit_fixed(counts, labels: Sequence[str]) -> FixedThresholdModel:
    """Fit one integer threshold per ion from labelled per-ion totals."""
    mat = _as_count_matrix(counts)
    bits = labels_to_bits(labels)
    if bits.shape != mat.shape:
        raise ThresholdError(
            f"counts shape {mat.shape} does not match labels shape {bits.shape}"
        )
    thresholds = tuple(
        _best_threshold(mat[:, i], bits[:, i]) for i in range(mat.shape[1])
    )
    return FixedThresholdModel(thresholds)


def classify_fixed(model: FixedThresholdModel, counts) -> list[str]:
    """Bit i is 1 exactly when the ion's count strictly exceeds its threshold."""
    mat = _as_count_matrix(counts)
    if mat.shape[1] != model.num_ions:
        raise ThresholdError(
            f"expected {model.num_ions} ion columns, got {mat.shape[1]}"
        )
    bits = mat > np.asarray(model.thresholds)
    return bits_to_labels(bits)


def _context_code(bits: np.ndarray, neighbours: tuple[int, ...]) -> np.ndarray:
    code = np.zeros(bits.shape[0], dtype=np.int64)
    for nb in neighbours:
        code = code * 2 + bits[:, nb]
    return code


@dataclass(frozen=True)
class AdaptiveThresholdModel:
    """Per-ion thresholds conditioned on the neighbouring ions' bits.

    ``context_thresholds[i]`` maps a neighbour bit pattern (as a string,
    left neighbour first) to the threshold used for ion ``i`` in that
    context.  Contexts that were too rare to fit inherit the fixed
    threshold and are listed in ``starved_contexts``.
    """

    fixed: FixedThresholdModel
    context_thresholds: tuple[dict, ...]
    starved_contexts: tuple[tuple[int, str], ...] = ()
    max_iterations: int = 10

    @property
    def num_ions(self) -> int:
        return self.fixed.num_ions

    def to_dict(self) -> dict:
        return {
            "format": "ionread.threshold_adaptive",
            "version": 1,
            "fixed_thresholds": list(self.fixed.thresholds),
            "context_thresholds": [dict(c) for c in self.context_thresholds],
            "starved_contexts": [list(s) for s in self.starved_contexts],
            "max_iterations": self.max_iterations,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AdaptiveThresholdModel":
        if data.get("format") != "ionread.threshold_adaptive":
            raise ThresholdError("not an adaptive-threshold model record")
        return cls(
            fixed=FixedThresholdModel(tuple(data["fixed_thresholds"])),
            context_thresholds=tuple(
                {k: int(v) for k, v in c.items()} for c in data["context_thresholds"]
            ),
            starved_contexts=tuple(
                (int(i), str(c)) for i, c in data["starved_contexts"]
            ),
            max_iterations=int(data["max_iterations"]),
        )


def fit_adaptive(
    counts,
    labels: Sequence[str],
    min_context_samples: int = 100,
    max_iterations: int = 10,
) -> AdaptiveThresholdModel:
    """Fit neighbour-conditioned thresholds from labelled per-ion totals.

    Conditioning uses the true neighbour bits of the training labels.  A
    context with fewer than ``min_context_samples`` shots, or missing one of
    the two classes, inherits the unconditioned threshold.
    """
    mat = _as_count_matrix(counts)
    bits = labels_to_bits(labels)
    fixed = fit_fixed(mat, labels)
    num_ions = mat.shape[1]
    tables: list[dict] = []
    starved: list[tuple[int, str]] = []
    for i in range(num_ions):
        neighbours = neighbour_indices(num_ions, i)
        codes = _context_code(bits, neighbours)
        table: dict[str, int] = {}
        for code in range(2 ** len(neighbours)):
            key = format(code, f"0{len(neighbours)}b")
            mask = codes == code
            column = mat[mask, i]
            column_bits = bits[mask, i]
            if (
                mask.sum() < max(min_context_samples, 1)
                or column_bits.min() == column_bits.max()
            ):
                table[key] = fixed.thresholds[i]
                starved.append((i, key))
            else:
                table[key] = _best_threshold(column, column_bits)
        tables.append(table)
    return AdaptiveThresholdModel(
        fixed=fixed,
        context_thresholds=tuple(tables),
        starved_contexts=tuple(starved),
        max_iterations=max_iterations,
    )


def classify_adaptive(
    model: AdaptiveThresholdModel, counts
) -> tuple[list[str], np.ndarray]:
    """Iterate neighbour-conditioned thresholding to a fixed point.

    Starts from the unconditioned assignment and updates all ions
    synchronously.  Returns the final labels plus a per-shot flag that is
    false when the assignment was still changing at the iteration cap.
    """
    mat = _as_count_matrix(counts)
    num_ions = model.num_ions
    if mat.shape[1] != num_ions:
        raise ThresholdError(f"expected {num_ions} ion columns, got {mat.shape[1]}")
    # context-indexed threshold lookup tables, one per ion
    lookup = []
    for i in range(num_ions):
        neighbours = neighbour_indices(num_ions, i)
        table = np.empty(2 ** len(neighbours), dtype=np.int64)
        for code in range(table.size):
            table[code] = model.context_thresholds[i][format(code, f"0{len(neighbours)}b")]
        lookup.append((neighbours, table))
    bits = (mat > np.asarray(model.fixed.thresholds)).astype(np.int8)
    converged = np.zeros(mat.shape[0], dtype=bool)
    for _ in range(model.max_iterations):
        new_bits = np.empty_like(bits)
        for i in range(num_ions):
            neighbours, table = lookup[i]
            thresholds = table[_context_code(bits, neighbours)]
            new_bits[:, i] = mat[:, i] > thresholds
        stable = np.all(new_bits == bits, axis=1)
        converged |= stable
        if stable.all():
            bits = new_bits
            break
        bits = new_bits
    return bits_to_labels(bits), converged


def save_model(model, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)


def load_model(path: str):
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") == "ionread.threshold_fixed":
        return FixedThresholdModel.from_dict(data)
    if data.get("format") == "ionread.threshold_adaptive":
        return AdaptiveThresholdModel.from_dict(data)
    raise ThresholdError(f"{path}: unknown model format {data.get('format')!r}")
