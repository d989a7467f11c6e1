"""Scoring and detection-error metrics.

A score is the bonafide-minus-spoof logit difference, i.e. the
log-likelihood ratio of the softmax posteriors; higher means more
bona fide. Acceptance uses score >= threshold.

The equal error rate is computed discretely: every candidate threshold
(midpoints between adjacent distinct scores, plus the two infinities)
is swept; FAR(t) is the fraction of spoof trials with score >= t and
FRR(t) the fraction of bona fide trials with score < t. The EER is
(FAR + FRR) / 2 at the candidate minimizing |FAR - FRR|, taking the
lowest threshold on ties. Both error rates are step functions of the
threshold, so the sweep depends only on score order: any strictly
increasing transform of the scores leaves the EER unchanged.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np


class ScoreError(Exception):
    pass


@dataclass
class ScoreEntry:
    utterance_id: str
    score: float
    label: str = "unknown"


@dataclass
class ScoreSet:
    entries: list[ScoreEntry] = field(default_factory=list)

    def append(self, utterance_id: str, score: float, label: str = "unknown"):
        self.entries.append(ScoreEntry(utterance_id, float(score), label))

    def bona_scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries if e.label == "bonafide"])

    def spoof_scores(self) -> np.ndarray:
        return np.array([e.score for e in self.entries if e.label == "spoof"])

    def has_labels(self) -> bool:
        return all(e.label != "unknown" for e in self.entries)


def score_from_logits(logits) -> float:
    """Detection score from (2,)- or (1, 2)-shaped logits."""
    arr = np.asarray(getattr(logits, "data", logits), dtype=np.float64).reshape(-1)
    if arr.shape != (2,):
        raise ValueError(f"expected exactly 2 logits, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError("non-finite logits")
    return float(arr[1] - arr[0])


def _candidate_thresholds(bona: np.ndarray, spoof: np.ndarray) -> np.ndarray:
    values = np.unique(np.concatenate([bona, spoof]))
    mids = (values[:-1] + values[1:]) / 2.0
    return np.concatenate([[-np.inf], mids, [np.inf]])


def _error_rates(bona: np.ndarray, spoof: np.ndarray, thresholds: np.ndarray):
    bona = np.sort(bona)
    spoof = np.sort(spoof)
    far = (len(spoof) - np.searchsorted(spoof, thresholds, side="left")) / len(spoof)
    frr = np.searchsorted(bona, thresholds, side="left") / len(bona)
    return far, frr


def _split_scores(scores: ScoreSet) -> tuple[np.ndarray, np.ndarray]:
    bona = scores.bona_scores()
    spoof = scores.spoof_scores()
    if len(bona) == 0 or len(spoof) == 0:
        raise ScoreError("EER needs at least one score from each class")
    allscores = np.concatenate([bona, spoof])
    if not np.isfinite(allscores).all():
        raise ScoreError("scores must be finite")
    return bona, spoof


def eer_from_arrays(bona: np.ndarray, spoof: np.ndarray) -> tuple[float, float]:
    thresholds = _candidate_thresholds(bona, spoof)
    far, frr = _error_rates(bona, spoof, thresholds)
    idx = int(np.argmin(np.abs(far - frr)))  # first minimum == lowest threshold
    return (far[idx] + frr[idx]) / 2.0, float(thresholds[idx])


def compute_eer(scores: ScoreSet) -> tuple[float, float]:
    """Equal error rate and its threshold for a labeled score set."""
    bona, spoof = _split_scores(scores)
    return eer_from_arrays(bona, spoof)


def det_points(scores: ScoreSet) -> list[tuple[float, float, float]]:
    """(threshold, FAR, FRR) rows across all candidate thresholds.

    FAR is non-increasing and FRR non-decreasing in the threshold; the
    endpoints (1, 0) and (0, 1) are always present. Rows are plain
    numbers for external plotting (probit scaling is the plotter's
    concern).
    """
    bona, spoof = _split_scores(scores)
    thresholds = _candidate_thresholds(bona, spoof)
    far, frr = _error_rates(bona, spoof, thresholds)
    return [(float(t), float(fa), float(fr)) for t, fa, fr in zip(thresholds, far, frr)]


def write_scores(scores: ScoreSet, path):
    """One ``<utterance_id> <score>`` line per entry, 17 significant digits."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in scores.entries:
            fh.write(f"{e.utterance_id} {e.score:.17g}\n")


def write_det_points(points: list[tuple[float, float, float]], path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, fa, fr in points:
            fh.write(f"{t:.17g} {fa:.17g} {fr:.17g}\n")


def read_scores(path, protocol_entries=None) -> ScoreSet:
    """Parse a score file, optionally joining labels from protocol entries.

    Ids present on only one side of the join are reported with a
    warning and left unlabeled.
    """
    scores = ScoreSet()
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ScoreError(f"{path}:{lineno}: expected '<id> <score>', got {raw.rstrip()!r}")
            utt_id, score_text = fields
            if utt_id in seen:
                raise ScoreError(f"{path}:{lineno}: duplicate utterance id {utt_id!r}")
            seen.add(utt_id)
            try:
                score = float(score_text)
            except ValueError as exc:
                raise ScoreError(f"{path}:{lineno}: bad score {score_text!r}") from exc
            scores.append(utt_id, score)

    if protocol_entries is not None:
        keys = {e.utterance_id: e.key for e in protocol_entries}
        unlabeled = []
        for entry in scores.entries:
            if entry.utterance_id in keys:
                entry.label = keys[entry.utterance_id]
            else:
                unlabeled.append(entry.utterance_id)
        missing_scores = sorted(set(keys) - seen)
        if unlabeled:
            warnings.warn(f"no protocol key for scored ids: {', '.join(sorted(unlabeled))}")
        if missing_scores:
            warnings.warn(f"protocol ids without scores: {', '.join(missing_scores)}")
    return scores
