"""Scoring, ROC/EER, balanced accuracy, per-synthesizer reports, embeddings.

Score orientation: higher score means more synthetic, and the positive
class (label 1) is synthetic.  A clip is predicted synthetic when its score
is >= the decision threshold, so ties go to the synthetic side.

EER comes from the ROC convex hull: sweep thresholds at every distinct
score (plus the two trivial endpoints), build the upper convex hull of the
(FPR, TPR) points with exact rational arithmetic, and intersect it with the
line TPR = 1 - FPR.  The hull crossing is the standard "interpolate where
FNR and FPR cross" rule and is computed exactly, so results are bitwise
stable across platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import model as M
from . import tensor as T
from .data import load_wav
from .dsp import FrontendConfig, mel_features
from .errors import InputError, SpoofVaeError
from .tensor import Tensor

SEPARATION_EPS = 1e-12
SCORE_BATCH = 32  # fixed batch extent so scoring order never changes results


@dataclass(frozen=True)
class ScoreRecord:
    """One scored clip: probability of synthetic plus ground truth."""

    clip_id: str
    score: float
    label: int
    synthesizer_id: str

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InputError(f"score must be in [0, 1], got {self.score}")
        if self.label not in (0, 1):
            raise InputError(f"label must be 0 or 1, got {self.label}")


@dataclass
class RocCurve:
    """Sweep points (threshold, FPR, FNR), thresholds ascending."""

    points: list


@dataclass
class EvalReport:
    """Headline metrics plus the per-synthesizer breakdown."""

    eer: float
    eer_threshold: float
    balanced_accuracy: float
    per_synthesizer: list
    counts: dict

    def to_dict(self) -> dict:
        return {
            "eer": self.eer,
            "eer_threshold": self.eer_threshold,
            "balanced_accuracy": self.balanced_accuracy,
            "per_synthesizer": self.per_synthesizer,
            "counts": self.counts,
        }


def _split_scores(records):
    bona = [r.score for r in records if r.label == 0]
    syn = [r.score for r in records if r.label == 1]
    if not bona or not syn:
        raise InputError(
            f"need both classes, got {len(bona)} bonafide and "
            f"{len(syn)} synthetic records")
    return bona, syn


def roc_curve(records) -> RocCurve:
    """Step-function ROC: one point per distinct score, plus both endpoints."""
    bona, syn = _split_scores(records)
    nb, ns = len(bona), len(syn)
    points = [(-math.inf, 1.0, 0.0)]
    for tau in sorted(set(bona) | set(syn)):
        fpr = sum(1 for s in bona if s >= tau) / nb
        fnr = sum(1 for s in syn if s < tau) / ns
        points.append((tau, fpr, fnr))
    points.append((math.inf, 0.0, 1.0))
    return RocCurve(points=points)


def _roc_lattice(bona, syn):
    """Exact (FPR, TPR, threshold) sweep points as Fractions.

    Thresholds are the distinct scores; the trivial endpoints use the
    extreme scores themselves so reported thresholds stay finite.
    """
    nb, ns = len(bona), len(syn)
    taus = sorted(set(bona) | set(syn))
    pts = [(Fraction(0), Fraction(0), taus[-1])]  # accept nothing
    best = {}
    for tau in taus:
        x = Fraction(sum(1 for s in bona if s >= tau), nb)
        y = Fraction(sum(1 for s in syn if s >= tau), ns)
        if x not in best or y > best[x][0]:
            best[x] = (y, tau)
    for x, (y, tau) in best.items():
        pts.append((x, y, tau))
    pts.append((Fraction(1), Fraction(1), taus[0]))  # accept everything
    pts.sort(key=lambda p: (p[0], p[1]))
    return pts


def _upper_hull(pts):
    hull = []
    for p in pts:
        while len(hull) >= 2:
            ax, ay, _ = hull[-2]
            bx, by, _ = hull[-1]
            if (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) >= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def compute_eer(records):
    """EER and its operating threshold, via the exact ROC hull crossing."""
    bona, syn = _split_scores(records)
    hull = _upper_hull(_roc_lattice(bona, syn))
    for (x1, y1, t1), (x2, y2, t2) in zip(hull, hull[1:]):
        f1 = x1 + y1 - 1
        f2 = x2 + y2 - 1
        if f1 <= 0 <= f2:
            span = f2 - f1
            s = Fraction(0) if span == 0 else -f1 / span
            eer = x1 + s * (x2 - x1)
            threshold = t1 + float(s) * (t2 - t1)
            return float(eer), float(threshold)
    raise SpoofVaeError("ROC hull never crossed the equal-error line")


def balanced_accuracy(records, threshold: float = 0.5) -> float:
    """Mean of the two per-class recalls at the threshold."""
    bona, syn = _split_scores(records)
    recall_bona = sum(1 for s in bona if s < threshold) / len(bona)
    recall_syn = sum(1 for s in syn if s >= threshold) / len(syn)
    return 0.5 * (recall_bona + recall_syn)


def per_synthesizer_report(records, threshold: float = 0.5) -> list:
    """Accuracy and count per synthesizer group, bona fide first."""
    groups = {}
    for r in records:
        groups.setdefault(r.synthesizer_id, []).append(r)
    order = sorted(groups, key=lambda g: (g != "bonafide", g))
    out = []
    for gid in order:
        recs = groups[gid]
        correct = sum(1 for r in recs
                      if (r.score >= threshold) == (r.label == 1))
        out.append({"synthesizer_id": gid, "accuracy": correct / len(recs),
                    "count": len(recs)})
    return out


def eval_report(records) -> EvalReport:
    eer, threshold = compute_eer(records)
    return EvalReport(
        eer=eer, eer_threshold=threshold,
        balanced_accuracy=balanced_accuracy(records),
        per_synthesizer=per_synthesizer_report(records),
        counts={"bonafide": sum(1 for r in records if r.label == 0),
                "synthetic": sum(1 for r in records if r.label == 1)})


# ---- scoring ----------------------------------------------------------------

def load_clip_features(rec, frontend: FrontendConfig) -> np.ndarray:
    """Front-end features for one manifest record, shape (1, mels, frames)."""
    return mel_features(load_wav(rec.path), frontend)[None, :, :]


def score_features(bundle: M.ModelBundle, feats: np.ndarray) -> np.ndarray:
    """Inference scores for a (N, 1, mels, frames) stack, fixed batching."""
    out = np.empty(feats.shape[0], dtype=np.float32)
    for i in range(0, feats.shape[0], SCORE_BATCH):
        scores, _, _ = M.infer(bundle, Tensor(feats[i:i + SCORE_BATCH]))
        out[i:i + SCORE_BATCH] = scores
    return out


def score_dataset(bundle: M.ModelBundle, records, frontend: FrontendConfig):
    """Score every readable clip; returns (score records, failure entries).

    Output order follows the manifest.  A clip that cannot be read or
    featurized becomes a failure entry {clip_id, path, error} and the run
    continues.
    """
    kept = []
    feats = []
    failures = []
    for rec in records:
        try:
            feats.append(load_clip_features(rec, frontend))
        except (OSError, SpoofVaeError) as exc:
            failures.append({"clip_id": rec.clip_id, "path": rec.path,
                             "error": str(exc)})
            continue
        kept.append(rec)
    if not kept:
        return [], failures
    scores = score_features(bundle, np.stack(feats))
    out = [ScoreRecord(clip_id=rec.clip_id, score=float(s),
                       label=0 if rec.label == "bonafide" else 1,
                       synthesizer_id=rec.synthesizer_id)
           for rec, s in zip(kept, scores)]
    return out, failures


def write_scores_csv(records, path) -> None:
    """Scores as CSV text, 6 significant digits."""
    with open(path, "w", newline="") as fh:
        fh.write("clip_id,label,synthesizer_id,score\n")
        for r in records:
            label = "bonafide" if r.label == 0 else "synthetic"
            fh.write(f"{r.clip_id},{label},{r.synthesizer_id},{r.score:.6g}\n")


# ---- embeddings -------------------------------------------------------------

EMBED_GENERAL = "general"
EMBED_DISENTANGLED = "disentangled"
EMBED_BOTH = "both"


def compute_embeddings(bundle: M.ModelBundle, feats: np.ndarray,
                       which: str) -> np.ndarray:
    """Mean latents (no sampling) for a feature stack, shape (N, d or 2d)."""
    if which not in (EMBED_GENERAL, EMBED_DISENTANGLED, EMBED_BOTH):
        raise InputError(f"which must be general/disentangled/both, got {which!r}")
    parts = []
    with T.no_grad():
        for i in range(0, feats.shape[0], SCORE_BATCH):
            x = Tensor(feats[i:i + SCORE_BATCH])
            cols = []
            if which in (EMBED_GENERAL, EMBED_BOTH):
                cols.append(M.encode(bundle, M.GENERAL, x).mu.data)
            if which in (EMBED_DISENTANGLED, EMBED_BOTH):
                cols.append(M.encode(bundle, M.DISENTANGLED, x).mu.data)
            parts.append(np.concatenate(cols, axis=1))
    return np.concatenate(parts, axis=0)


def export_embeddings(bundle: M.ModelBundle, records, which: str,
                      frontend: FrontendConfig):
    """CSV lines of per-clip mean latents; returns (lines, failures).

    The first line is the header clip_id,label,synthesizer_id,f_0,...;
    failures mirror score_dataset's entries.
    """
    kept = []
    feats = []
    failures = []
    for rec in records:
        try:
            feats.append(load_clip_features(rec, frontend))
        except (OSError, SpoofVaeError) as exc:
            failures.append({"clip_id": rec.clip_id, "path": rec.path,
                             "error": str(exc)})
            continue
        kept.append(rec)
    width = bundle.config.latent_dim * (2 if which == EMBED_BOTH else 1)
    lines = ["clip_id,label,synthesizer_id," +
             ",".join(f"f_{i}" for i in range(width))]
    if kept:
        emb = compute_embeddings(bundle, np.stack(feats), which)
        for rec, row in zip(kept, emb):
            vals = ",".join(f"{v:.6g}" for v in row)
            lines.append(f"{rec.clip_id},{rec.label},{rec.synthesizer_id},{vals}")
    return lines, failures


def separation_ratio(embeddings: np.ndarray, labels) -> float:
    """Centroid gap over mean within-class spread, Euclidean.

    Zero spread falls back to dividing by 1e-12, the documented stand-in
    for an infinite ratio.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    if emb.ndim != 2 or emb.shape[0] != y.shape[0]:
        raise InputError(
            f"embeddings {emb.shape} and labels {y.shape} do not align")
    mask = y == 1
    if not mask.any() or mask.all():
        raise InputError("separation_ratio needs both classes")
    c0 = emb[~mask].mean(axis=0)
    c1 = emb[mask].mean(axis=0)
    centroids = np.where(mask[:, None], c1[None, :], c0[None, :])
    within = float(np.mean(np.linalg.norm(emb - centroids, axis=1)))
    gap = float(np.linalg.norm(c1 - c0))
    return gap / max(within, SEPARATION_EPS)
