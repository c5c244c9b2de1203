"""Generalized zero-shot evaluation: calibration bias sweep, seen-unseen
curve, and the summary metrics.

A constant added to the seen-composition columns trades seen accuracy
against unseen accuracy; sweeping it over every per-sample flip point (the
gap between the best unseen and best seen score) traces the whole curve.
Predictions are argmax with ties broken toward the lowest column index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInput
from .labelspace import composition_mask
from .model import compose_scores
from .numerics import no_grad


@dataclass
class ScoreMatrix:
    """Scores of evaluation samples over the feasible compositions.

    Optional extras carry what external score files cannot: the
    (verb, object) pair behind each column and the independent component
    scores, which unlock the component-level metrics.
    """

    scores: np.ndarray        # (N, M)
    seen_columns: np.ndarray  # (M,) bool, column composition is trainable
    gt_columns: np.ndarray    # (N,) ground-truth column index
    column_pairs: np.ndarray = None    # (M, 2) verb/object indices
    verb_scores: np.ndarray = None     # (N, N_v)
    object_scores: np.ndarray = None   # (N, N_o)
    verb_targets: np.ndarray = None
    object_targets: np.ndarray = None

    def validate(self):
        n, m = self.scores.shape
        if self.seen_columns.shape != (m,):
            raise InvalidInput("seen flags do not match the column count")
        if self.gt_columns.shape != (n,):
            raise InvalidInput("ground-truth indices do not match the row count")
        if np.any(self.gt_columns < 0) or np.any(self.gt_columns >= m):
            raise InvalidInput("ground-truth column out of range")

    @property
    def gt_is_seen(self):
        return self.seen_columns[self.gt_columns]


@dataclass
class SweepCurve:
    biases: np.ndarray
    seen_accuracy: np.ndarray
    unseen_accuracy: np.ndarray

    def __len__(self):
        return len(self.biases)

    def points(self):
        return list(zip(self.biases, self.seen_accuracy, self.unseen_accuracy))


@dataclass
class EvalReport:
    best_seen: float
    best_unseen: float
    best_harmonic_mean: float
    auc: float
    best_bias: float
    verb_accuracy: float = None
    object_accuracy: float = None
    verb_accuracy_from_composition: float = None
    object_accuracy_from_composition: float = None

    def as_dict(self):
        return {
            "verb_accuracy": self.verb_accuracy,
            "object_accuracy": self.object_accuracy,
            "best_seen": self.best_seen,
            "best_unseen": self.best_unseen,
            "best_harmonic_mean": self.best_harmonic_mean,
            "auc": self.auc,
            "best_bias": self.best_bias,
            "verb_accuracy_from_composition": self.verb_accuracy_from_composition,
            "object_accuracy_from_composition": self.object_accuracy_from_composition,
        }


def predictions_at_bias(matrix, bias):
    """Argmax columns after adding the bias to seen columns (ties -> lowest)."""
    effective = matrix.scores + bias * matrix.seen_columns.astype(matrix.scores.dtype)
    return np.argmax(effective, axis=1)


def accuracies_at_bias(matrix, bias):
    preds = predictions_at_bias(matrix, bias)
    correct = preds == matrix.gt_columns
    seen_rows = matrix.gt_is_seen
    if not seen_rows.any() or seen_rows.all():
        raise InvalidInput("need both seen and unseen ground-truth samples")
    return float(correct[seen_rows].mean()), float(correct[~seen_rows].mean())


def default_biases(matrix):
    """Per-sample flip points, the midpoints between them, and far sentinels.

    Accuracy is a step function of the bias whose breakpoints are the flip
    points; exactly at a breakpoint the tie rule (or the rounding of
    score + bias) can resolve against a sample, so the open intervals
    between breakpoints hold values the breakpoints alone would miss.
    The midpoints sample every interval.
    """
    seen = matrix.seen_columns
    if not seen.any() or seen.all():
        raise InvalidInput("need both seen and unseen composition columns")
    best_seen = matrix.scores[:, seen].max(axis=1)
    best_unseen = matrix.scores[:, ~seen].max(axis=1)
    flips = np.unique(best_unseen - best_seen)
    mids = (flips[:-1] + flips[1:]) * 0.5
    span = float(matrix.scores.max() - matrix.scores.min())
    sentinel = span + 1.0
    return np.unique(np.concatenate(
        ([flips[0] - sentinel], flips, mids, [flips[-1] + sentinel])))


def bias_sweep(matrix, biases=None):
    """Evaluate seen/unseen accuracy at each candidate bias.

    Default candidates are the per-sample flip points with two sentinels;
    an explicit grid can be passed instead (the dense-grid oracle route).
    """
    matrix.validate()
    if biases is None:
        biases = default_biases(matrix)
    else:
        biases = np.asarray(biases, dtype=np.float64)
    seen_acc = np.empty(len(biases))
    unseen_acc = np.empty(len(biases))
    for i, bias in enumerate(biases):
        seen_acc[i], unseen_acc[i] = accuracies_at_bias(matrix, float(bias))
    return SweepCurve(biases=biases, seen_accuracy=seen_acc, unseen_accuracy=unseen_acc)


def harmonic_mean(seen, unseen):
    if seen + unseen == 0.0:
        return 0.0
    return 2.0 * seen * unseen / (seen + unseen)


def curve_auc(curve):
    """Trapezoidal area under the seen (x) vs unseen (y) polyline.

    Plain sequential summation so independently coded oracles can match it
    bit for bit.
    """
    area = 0.0
    xs, ys = curve.seen_accuracy, curve.unseen_accuracy
    for k in range(len(xs) - 1):
        area += (xs[k + 1] - xs[k]) * (ys[k] + ys[k + 1]) * 0.5
    return float(area)


def sweep_metrics(curve, matrix=None):
    """Summary metrics over the curve, plus component accuracies when the
    matrix carries the independent component scores."""
    hms = np.array([harmonic_mean(s, u)
                    for s, u in zip(curve.seen_accuracy, curve.unseen_accuracy)])
    best = int(np.argmax(hms))
    report = EvalReport(
        best_seen=float(curve.seen_accuracy.max()),
        best_unseen=float(curve.unseen_accuracy.max()),
        best_harmonic_mean=float(hms[best]),
        auc=curve_auc(curve),
        best_bias=float(curve.biases[best]),
    )
    if matrix is not None:
        if matrix.verb_scores is not None and matrix.verb_targets is not None:
            preds = np.argmax(matrix.verb_scores, axis=1)
            report.verb_accuracy = float((preds == matrix.verb_targets).mean())
        if matrix.object_scores is not None and matrix.object_targets is not None:
            preds = np.argmax(matrix.object_scores, axis=1)
            report.object_accuracy = float((preds == matrix.object_targets).mean())
        if matrix.column_pairs is not None and matrix.verb_targets is not None:
            cols = predictions_at_bias(matrix, 0.0)
            pred_pairs = matrix.column_pairs[cols]
            report.verb_accuracy_from_composition = float(
                (pred_pairs[:, 0] == matrix.verb_targets).mean())
            report.object_accuracy_from_composition = float(
                (pred_pairs[:, 1] == matrix.object_targets).mean())
    return report


def unseen_accuracy_at_best_hm(curve):
    hms = [harmonic_mean(s, u) for s, u in zip(curve.seen_accuracy, curve.unseen_accuracy)]
    return float(curve.unseen_accuracy[int(np.argmax(hms))])


def score_split(model, dataset, space, split, part="test", mode="full", batch_size=256):
    """Forward every sample of one split and assemble its ScoreMatrix over
    the feasible compositions (train + val + test label sets)."""
    samples = split.samples(part)
    if not samples:
        raise InvalidInput(f"split has no {part} samples")
    feasible = composition_mask(space, split, "feasible")
    cols = np.flatnonzero(feasible)
    col_of = {int(c): i for i, c in enumerate(cols)}
    seen_columns = np.array([c in split.train_compositions for c in cols])
    verb_of, obj_of = space.composition_pairs()
    column_pairs = np.stack([verb_of[cols], obj_of[cols]], axis=1)

    ids = [sid for sid, _ in samples]
    comps = [comp for _, comp in samples]
    try:
        gt_columns = np.array([col_of[int(c)] for c in comps], dtype=np.intp)
    except KeyError as err:
        raise InvalidInput(f"ground-truth composition {err} is not feasible")
    rows = dataset.rows_for(ids)

    dtype = model.config.dtype
    score_rows, verb_rows, object_rows = [], [], []
    with no_grad():
        for start in range(0, len(rows), batch_size):
            chunk = rows[start:start + batch_size]
            bundle, *_ = model.forward(dataset.videos[chunk].astype(dtype))
            score_rows.append(compose_scores(bundle, space, mode).data[:, cols])
            verb_rows.append(bundle.verb_scores.data)
            object_rows.append(bundle.object_scores.data)
    matrix = ScoreMatrix(
        scores=np.concatenate(score_rows, axis=0),
        seen_columns=seen_columns,
        gt_columns=gt_columns,
        column_pairs=column_pairs,
        verb_scores=np.concatenate(verb_rows, axis=0),
        object_scores=np.concatenate(object_rows, axis=0),
        verb_targets=dataset.verb_indices[rows],
        object_targets=dataset.object_indices[rows],
    )
    matrix.validate()
    return matrix


def evaluate_model(model, dataset, space, split, part="test", mode="full"):
    matrix = score_split(model, dataset, space, split, part=part, mode=mode)
    curve = bias_sweep(matrix)
    return sweep_metrics(curve, matrix), curve, matrix
