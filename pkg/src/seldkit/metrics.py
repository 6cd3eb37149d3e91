"""Joint localisation/detection metrics: LE_CD, LR_CD, ER_20 and F_20.

Predictions and references are matched per frame and per class by minimum total
angular distance. Localisation error and recall use every matched pair;
location-dependent detection counts a matched pair as a true positive only when
it is closer than the spatial threshold, and as a substitution otherwise.
Error-rate terms are accumulated over 1 s segments (ten 100 ms frames).
"""

from __future__ import annotations

import itertools
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from seldkit.geometry import angular_distance, sph_to_cart
from seldkit.scene import read_label_csv

SPATIAL_THRESHOLD_DEG = 20.0
FRAMES_PER_SEGMENT = 10
LE_SENTINEL = 180.0
REPORT_FIELDS = ("le_cd", "lr_cd", "er_20", "f_20")

# frame -> class -> array of unit DOAs, shape (n, 3)
FrameSets = Mapping[int, Mapping[int, np.ndarray]]


@dataclass
class FrameMatch:
    pairs: list[tuple[int, float]] = field(default_factory=list)  # (class, distance)
    unmatched_pred: int = 0
    unmatched_ref: int = 0


@dataclass
class SeldReport:
    le_cd: float
    lr_cd: float
    er_20: float
    f_20: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    substitutions: int = 0
    deletions: int = 0
    insertions: int = 0
    n_ref: int = 0
    matched_pairs: int = 0
    le_undefined: bool = False
    er_degenerate: bool = False

    def metrics(self) -> tuple[float, float, float, float]:
        return (self.le_cd, self.lr_cd, self.er_20, self.f_20)

    def summary_line(self) -> str:
        return f"{self.le_cd:.1f} {self.lr_cd:.1f} {self.er_20:.2f} {self.f_20:.1f}"

    def to_text(self) -> str:
        return "\n".join(f"{k}={v}" for k, v in asdict(self).items())

    @staticmethod
    def csv_header() -> str:
        return ",".join(REPORT_FIELDS + ("tp", "fp", "fn", "n_ref"))

    def csv_row(self) -> str:
        return f"{self.summary_line().replace(' ', ',')},{self.tp},{self.fp},{self.fn},{self.n_ref}"


def hungarian_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    rows, cols = linear_sum_assignment(cost)
    return list(zip(rows.tolist(), cols.tolist()))


def brute_force_assignment(cost: np.ndarray) -> list[tuple[int, int]]:
    """Exhaustive minimum-cost matching of size ``min(n_rows, n_cols)``."""
    n_rows, n_cols = cost.shape
    best, best_pairs = np.inf, []
    if n_rows <= n_cols:
        for perm in itertools.permutations(range(n_cols), n_rows):
            total = sum(cost[i, j] for i, j in enumerate(perm))
            if total < best:
                best, best_pairs = total, list(enumerate(perm))
    else:
        for perm in itertools.permutations(range(n_rows), n_cols):
            total = sum(cost[i, j] for j, i in enumerate(perm))
            if total < best:
                best, best_pairs = total, sorted((i, j) for j, i in enumerate(perm))
    return best_pairs


Assigner = Callable[[np.ndarray], list[tuple[int, int]]]


def match_frame(
    preds: Mapping[int, np.ndarray],
    refs: Mapping[int, np.ndarray],
    assign: Assigner = hungarian_assignment,
) -> FrameMatch:
    """Class-gated matching of one frame's predictions against references."""
    out = FrameMatch()
    for cls in sorted(set(preds) | set(refs)):
        p = np.asarray(preds.get(cls, np.empty((0, 3)))).reshape(-1, 3)
        r = np.asarray(refs.get(cls, np.empty((0, 3)))).reshape(-1, 3)
        if len(p) and len(r):
            cost = angular_distance(p[:, None, :], r[None, :, :])
            for i, j in assign(cost):
                out.pairs.append((cls, float(cost[i, j])))
            k = min(len(p), len(r))
        else:
            k = 0
        out.unmatched_pred += len(p) - k
        out.unmatched_ref += len(r) - k
    return out


def compute_le_lr(matches: Iterable[FrameMatch], n_ref: int) -> tuple[float, float, bool]:
    """Mean matched-pair distance and matched-pair recall (percent).

    Returns ``(le_cd, lr_cd, le_undefined)``; without any pairs ``le_cd`` is the
    180 degree sentinel and the flag is set.
    """
    dists = [d for m in matches for _, d in m.pairs]
    lr = 100.0 * len(dists) / n_ref if n_ref else 0.0
    if not dists:
        return LE_SENTINEL, lr, True
    return float(np.mean(dists)), lr, False


def compute_er_f(
    segments: Iterable[Sequence[FrameMatch]],
    threshold_deg: float = SPATIAL_THRESHOLD_DEG,
) -> dict:
    """Location-dependent error rate and F-score from per-segment frame matches."""
    tp = fp = fn = s_tot = d_tot = i_tot = n_ref = 0
    for seg in segments:
        seg_tp = seg_fp = seg_fn = 0
        for m in seg:
            close = sum(1 for _, d in m.pairs if d < threshold_deg)
            far = len(m.pairs) - close
            seg_tp += close
            seg_fp += far + m.unmatched_pred
            seg_fn += far + m.unmatched_ref
            n_ref += len(m.pairs) + m.unmatched_ref
        s = min(seg_fp, seg_fn)
        s_tot += s
        d_tot += seg_fn - s
        i_tot += seg_fp - s
        tp, fp, fn = tp + seg_tp, fp + seg_fp, fn + seg_fn
    degenerate = n_ref == 0
    er = (s_tot + d_tot + i_tot) / (n_ref if n_ref else 1)
    denom = 2 * tp + fp + fn
    f = 100.0 * 2 * tp / denom if denom else 100.0
    return dict(
        er_20=float(er), f_20=float(f), tp=tp, fp=fp, fn=fn,
        substitutions=s_tot, deletions=d_tot, insertions=i_tot,
        n_ref=n_ref, er_degenerate=degenerate,
    )


def evaluate_frames(
    pred: FrameSets,
    ref: FrameSets,
    num_frames: int | None = None,
    frames_per_segment: int = FRAMES_PER_SEGMENT,
    threshold_deg: float = SPATIAL_THRESHOLD_DEG,
    assign: Assigner = hungarian_assignment,
) -> SeldReport:
    """Score rasterised frame sets. ``frames_per_segment=1`` gives frame-level ER/F."""
    if num_frames is None:
        num_frames = max([*pred.keys(), *ref.keys(), -1]) + 1
    empty: dict[int, np.ndarray] = {}
    matches = [match_frame(pred.get(t, empty), ref.get(t, empty), assign) for t in range(num_frames)]
    segments = [
        matches[i : i + frames_per_segment] for i in range(0, num_frames, frames_per_segment)
    ]
    counts = compute_er_f(segments, threshold_deg)
    le, lr, undefined = compute_le_lr(matches, counts["n_ref"])
    n_pairs = sum(len(m.pairs) for m in matches)
    return SeldReport(le_cd=le, lr_cd=lr, matched_pairs=n_pairs, le_undefined=undefined, **counts)


def rows_to_frames(rows: Iterable[tuple[int, int, float, float]]) -> dict[int, dict[int, np.ndarray]]:
    """Group ``(frame, class, azimuth, elevation)`` rows into per-frame DOA sets."""
    grouped: dict[int, dict[int, list]] = defaultdict(lambda: defaultdict(list))
    for frame, cls, az, el in rows:
        grouped[int(frame)][int(cls)].append(sph_to_cart(az, el))
    return {
        f: {c: np.asarray(v).reshape(-1, 3) for c, v in classes.items()}
        for f, classes in grouped.items()
    }


def evaluate_rows(pred_rows, ref_rows, **kwargs) -> SeldReport:
    return evaluate_frames(rows_to_frames(pred_rows), rows_to_frames(ref_rows), **kwargs)


def evaluate(pred_csv: str | Path, ref_csv: str | Path, **kwargs) -> SeldReport:
    """Score a prediction label CSV against a reference label CSV."""
    return evaluate_rows(read_label_csv(pred_csv), read_label_csv(ref_csv), **kwargs)
