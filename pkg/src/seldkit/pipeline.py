"""Training loop (Adam, step decay, on-the-fly scenes) and sliding-window inference."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from seldkit import accdoa as acc
from seldkit.augment import AugmentConfig, emda, random_rotation, spec_augment
from seldkit.features import HOP_LENGTH, extract_features, num_frames
from seldkit.geometry import SAMPLE_RATE, FoaClip, cart_to_sph, rotate_foa, rotate_vectors, rotation_catalog
from seldkit.model import (
    ModelConfig,
    Parameters,
    backward,
    forward,
    init_parameters,
    trunk_parameter_names,
)
from seldkit.metrics import SeldReport, evaluate_rows
from seldkit.scene import LABEL_HOP_S, SceneInstance, SceneSpec, render_scene, track_to_rows

log = logging.getLogger(__name__)

LOSS_VARIANTS = {"accdoa": "accdoa", "seldnet": "two_branch", "two-stage": "two_branch"}
INPUT_HOP_S = HOP_LENGTH / SAMPLE_RATE


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    lr: float = 1e-3
    lr_decay: float = 0.9
    decay_interval: int = 2000
    weight_decay: float = 1e-6
    max_iters: int = 1000
    loss: str = "accdoa"
    loss_weight: float = 10.0
    seed: int = 0
    train_scenes: int | None = 500
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    augment: AugmentConfig = AugmentConfig()

    def validate(self) -> "TrainConfig":
        if self.loss not in LOSS_VARIANTS:
            raise ValueError(f"loss must be one of {sorted(LOSS_VARIANTS)}, got {self.loss!r}")
        if self.batch_size < 1 or self.max_iters < 0 or self.decay_interval < 1:
            raise ValueError("batch_size, decay_interval must be positive and max_iters >= 0")
        if self.lr < 0 or self.weight_decay < 0 or self.loss_weight <= 0:
            raise ValueError("lr and weight_decay must be >= 0 and loss_weight > 0")
        if not 0.0 < self.lr_decay < 1.0:
            raise ValueError("lr_decay must lie in (0, 1)")
        if self.train_scenes is not None and self.train_scenes < 1:
            raise ValueError("train_scenes must be positive or null")
        self.augment.validate()
        return self

    def lr_at(self, iteration: int) -> float:
        return self.lr * self.lr_decay ** (iteration // self.decay_interval)


@dataclass(frozen=True)
class InferConfig:
    segment_frames: int = 128
    shift_frames: int = 20
    threshold: float = acc.DEFAULT_THRESHOLD
    tta_rotations: tuple[int, ...] = (0,)
    batch_size: int = 32

    def validate(self) -> "InferConfig":
        if not 0 < self.shift_frames <= self.segment_frames:
            raise ValueError("shift must be positive and no larger than the segment")
        if not self.tta_rotations:
            raise ValueError("tta_rotations must not be empty")
        return self


# --- optimizer ------------------------------------------------------------


class Adam:
    """Adam with decoupled weight decay; ``frozen`` entries are never touched."""

    def __init__(self, size: int, cfg: TrainConfig, dtype=np.float32):
        self.cfg = cfg
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.t = 0

    def step(self, params: Parameters, grads: Parameters, lr: float, frozen: NDArray | None = None):
        cfg = self.cfg
        g = grads.vector
        self.t += 1
        self.m = cfg.beta1 * self.m + (1.0 - cfg.beta1) * g
        self.v = cfg.beta2 * self.v + (1.0 - cfg.beta2) * g * g
        m_hat = self.m / (1.0 - cfg.beta1**self.t)
        v_hat = self.v / (1.0 - cfg.beta2**self.t)
        update = lr * (m_hat / (np.sqrt(v_hat) + cfg.adam_eps) + cfg.weight_decay * params.vector)
        if frozen is not None:
            update[frozen] = 0.0
        params.vector -= update.astype(params.vector.dtype, copy=False)
        params.bump()


# --- data -----------------------------------------------------------------


def resample_labels(
    track: acc.EventLabelTrack, num_out: int, out_hop_s: float, in_hop_s: float = LABEL_HOP_S, offset_s: float = 0.0
) -> acc.EventLabelTrack:
    """Nearest-frame-centre resampling of a label track onto another frame grid."""
    centers = offset_s + (np.arange(num_out) + 0.5) * out_hop_s
    idx = np.minimum(np.floor(centers / in_hop_s + 1e-9).astype(int), track.num_frames - 1)
    return acc.EventLabelTrack(track.activity[:, idx], track.doa[:, :, idx])


def resample_grid(grid: NDArray, num_out: int, out_hop_s: float, in_hop_s: float) -> NDArray:
    centers = (np.arange(num_out) + 0.5) * out_hop_s
    idx = np.minimum(np.floor(centers / in_hop_s + 1e-9).astype(int), grid.shape[-1] - 1)
    return grid[..., idx]


class SceneStream:
    """Deterministic stream of augmented training examples.

    Scene ``i`` of the pool is rendered from ``spec`` with seed ``spec.seed + i``;
    with ``pool_size=None`` every draw is a fresh scene.
    """

    def __init__(self, spec: SceneSpec, cfg: TrainConfig, model_cfg: ModelConfig):
        self.spec = spec
        self.cfg = cfg
        self.model_cfg = model_cfg
        self.rng = np.random.default_rng([cfg.seed, 1])
        self._fresh = 0
        self._cache: dict[int, SceneInstance] = {}

    def scene(self, index: int) -> SceneInstance:
        cached = self._cache.get(index)
        if cached is not None:
            return cached
        inst = render_scene(replace(self.spec, seed=self.spec.seed + index))
        inst.clip = FoaClip(inst.clip.samples.astype(np.float32))
        inst.signal = inst.noise = None
        if self.cfg.train_scenes is not None:
            self._cache[index] = inst
        return inst

    def _draw_index(self) -> int:
        if self.cfg.train_scenes is None:
            self._fresh += 1
            return self._fresh - 1
        return int(self.rng.integers(self.cfg.train_scenes))

    def example(self) -> tuple[NDArray, acc.EventLabelTrack]:
        aug = self.cfg.augment
        inst = self.scene(self._draw_index())
        if aug.emda_enabled and self.rng.uniform() < aug.emda_probability:
            other = self.scene(self._draw_index())
            inst = emda(
                inst, other, self.rng,
                max_gain=aug.emda_max_gain, max_delay_frames=aug.emda_max_delay_frames,
                eq_gain_db=aug.emda_eq_gain_db, retries=aug.emda_retries,
            )
        if aug.rotation_enabled:
            inst = random_rotation(inst, self.rng)
        feats = extract_features(inst.clip)
        t_in = self.model_cfg.input_frames
        if feats.num_frames < t_in:
            raise TrainingError(
                f"scenes give {feats.num_frames} input frames, model needs {t_in}"
            )
        # random crop aligned to whole output frames
        pool = self.model_cfg.temporal_pool
        n_starts = (feats.num_frames - t_in) // pool + 1
        start = pool * int(self.rng.integers(n_starts))
        feats.data = feats.data[:, :, start : start + t_in]
        if aug.specaug_enabled:
            feats = spec_augment(feats, aug.specaug, self.rng)
        labels = resample_labels(
            inst.labels, self.model_cfg.output_frames, INPUT_HOP_S * pool, offset_s=start * INPUT_HOP_S
        )
        return feats.data, labels

    def batch(self, size: int) -> tuple[NDArray, acc.EventLabelTrack]:
        xs, acts, doas = [], [], []
        for _ in range(size):
            x, lab = self.example()
            xs.append(x)
            acts.append(lab.activity)
            doas.append(lab.doa)
        return np.stack(xs), acc.EventLabelTrack(np.stack(acts), np.stack(doas))


# --- training -------------------------------------------------------------


def compute_loss(output: Any, labels: acc.EventLabelTrack, cfg: TrainConfig, stage: int = 1):
    if cfg.loss == "accdoa":
        return acc.accdoa_loss(output, acc.encode(labels))
    if cfg.loss == "seldnet":
        return acc.seldnet_loss(output, labels, cfg.loss_weight)
    return acc.two_stage_loss(output, labels, stage)


@dataclass
class TrainResult:
    params: Parameters
    history: list[tuple[int, float, float]] = field(default_factory=list)


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    scene_spec: SceneSpec,
    init: Parameters | None = None,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train from scratch (or from ``init``) and record ``(iteration, loss, lr)``.

    The ``two-stage`` loss spends the first half of the iterations on detection
    only, then freezes the trunk and detection branch and trains the DOA branch
    with masked MSE.
    """
    cfg = train_config.validate()
    model_config = model_config.with_head(LOSS_VARIANTS[cfg.loss])
    params = init.copy() if init is not None else init_parameters(model_config, seed=cfg.seed)
    stream = SceneStream(scene_spec, cfg, model_config)
    opt = Adam(len(params), cfg, dtype=params.vector.dtype)
    frozen = None
    if cfg.loss == "two-stage":
        frozen = np.zeros(len(params), dtype=bool)
        for name in trunk_parameter_names(model_config) + ["sed1.weight", "sed1.bias", "sed2.weight", "sed2.bias"]:
            off, shape = params.layout[name]
            frozen[off : off + int(np.prod(shape))] = True
    result = TrainResult(params)
    stage_switch = cfg.max_iters // 2
    for it in range(cfg.max_iters):
        x, labels = stream.batch(cfg.batch_size)
        out, cache = forward(params, x)
        stage = 1 if it < stage_switch else 2
        loss, grad_out = compute_loss(out, labels, cfg, stage)
        if not math.isfinite(loss):
            raise TrainingError(
                f"non-finite loss at iteration {it}: loss={loss}, "
                f"|params|={float(np.linalg.norm(params.vector)):.4g}"
            )
        grads = backward(params, cache, grad_out)
        lr = cfg.lr_at(it)
        opt.step(params, grads, lr, frozen if (frozen is not None and stage == 2) else None)
        result.history.append((it, loss, lr))
        if progress is not None:
            progress(it, loss)
        elif it % 50 == 0:
            log.info("iter %d loss %.5f lr %.2e", it, loss, lr)
    return result


# --- inference ------------------------------------------------------------

Model = Callable[[NDArray], NDArray]


def _two_branch_to_grid(out: acc.TwoBranchOutput) -> NDArray:
    norm = np.linalg.norm(out.doa, axis=-3, keepdims=True)
    unit = np.divide(out.doa, norm, out=np.zeros_like(out.doa), where=norm > 0)
    return out.sed[..., None, :, :] * unit


def as_model(model: Parameters | Model) -> Model:
    """Wrap parameters as ``batch features -> ACCDOA grid``.

    Two-branch outputs are folded into a grid whose vector length is the
    detection probability and whose direction is the DOA branch output, so a
    threshold of 0.5 reproduces the usual ``sed > 0.5`` decision.
    """
    if not isinstance(model, Parameters):
        return model

    def run(batch: NDArray) -> NDArray:
        out, _ = forward(model, batch)
        if isinstance(out, acc.TwoBranchOutput):
            return _two_branch_to_grid(out)
        return out

    return run


def window_starts(total: int, segment: int, shift: int) -> list[int]:
    starts = list(range(0, total - segment + 1, shift))
    if starts[-1] + segment < total:
        starts.append(total - segment)
    return starts


def infer_clip(model: Parameters | Model, clip: FoaClip, cfg: InferConfig = InferConfig()) -> NDArray:
    """Overlapping-window inference with uniform averaging of raw output vectors.

    Window outputs are spread back onto the 10 ms input-frame grid, averaged over
    all covering windows, and then pooled to output frames of
    ``segment_frames / T_out`` input frames each. Clips shorter than one segment
    are zero-padded and the result trimmed.
    """
    cfg.validate()
    run = as_model(model)
    feats = extract_features(clip).data
    total = feats.shape[-1]
    seg = cfg.segment_frames
    padded = max(total, seg)
    if padded > total:
        feats = np.pad(feats, ((0, 0), (0, 0), (0, padded - total)))
    starts = window_starts(padded, seg, cfg.shift_frames)
    acc_sum = None
    count = np.zeros(padded)
    pool = 1
    for b0 in range(0, len(starts), cfg.batch_size):
        chunk = starts[b0 : b0 + cfg.batch_size]
        out = np.asarray(run(np.stack([feats[:, :, s : s + seg] for s in chunk])), dtype=np.float64)
        pool = seg // out.shape[-1]
        if acc_sum is None:
            acc_sum = np.zeros(out.shape[1:3] + (padded,))
        for s, o in zip(chunk, out):
            acc_sum[..., s : s + seg] += np.repeat(o, pool, axis=-1)
            count[s : s + seg] += 1
    avg = acc_sum / count
    t_out = total // pool if total >= seg else max(total // pool, 1)
    return avg[..., : t_out * pool].reshape(avg.shape[:2] + (t_out, pool)).mean(axis=-1)


def infer_with_tta(
    model: Parameters | Model, clip: FoaClip, cfg: InferConfig = InferConfig()
) -> NDArray:
    """Average of inverse-rotated outputs over the configured catalog rotations."""
    cfg.validate()
    catalog = rotation_catalog()
    total = None
    for idx in cfg.tta_rotations:
        entry = catalog[idx]
        grid = infer_clip(model, rotate_foa(clip, entry.rotation), cfg)
        back = rotate_vectors(entry.inverse, grid, axis=0)
        total = back if total is None else total + back
    return total / len(cfg.tta_rotations)


# --- event extraction -----------------------------------------------------


@dataclass
class DetectedEvent:
    class_id: int
    onset: int
    offset: int  # inclusive
    doas: NDArray  # (offset - onset + 1, 3)


def grid_to_events(grid: NDArray, threshold: float = acc.DEFAULT_THRESHOLD) -> list[DetectedEvent]:
    """Decode frames and merge runs of consecutive active frames per class."""
    labels = acc.decode(grid, threshold)
    events = []
    for c in range(labels.num_classes):
        act = labels.activity[c].astype(bool)
        t = 0
        while t < act.size:
            if not act[t]:
                t += 1
                continue
            start = t
            while t < act.size and act[t]:
                t += 1
            events.append(DetectedEvent(c, start, t - 1, labels.doa[:, c, start:t].T.copy()))
    events.sort(key=lambda e: (e.onset, e.class_id))
    return events


def events_to_rows(events: Sequence[DetectedEvent]) -> list[tuple[int, int, float, float]]:
    rows = []
    for ev in events:
        az, el = cart_to_sph(ev.doas)
        for k in range(ev.offset - ev.onset + 1):
            rows.append((ev.onset + k, ev.class_id, float(az[k]), float(el[k])))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def grid_to_label_rows(
    grid: NDArray, clip_duration_s: float, grid_hop_s: float, threshold: float = acc.DEFAULT_THRESHOLD
) -> list[tuple[int, int, float, float]]:
    """Resample an output grid to 100 ms frames and emit label-CSV rows."""
    n_label = math.ceil(round(clip_duration_s / LABEL_HOP_S, 9))
    label_grid = resample_grid(grid, n_label, LABEL_HOP_S, grid_hop_s)
    return events_to_rows(grid_to_events(label_grid, threshold))


def train_config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    return d


def evaluate_model(
    model: Parameters | Model,
    scenes: Sequence[SceneInstance],
    cfg: InferConfig = InferConfig(),
    tta: bool = False,
) -> tuple[SeldReport, list[tuple[int, int, float, float]]]:
    """Score a model on rendered scenes; returns the pooled report and the prediction rows."""
    pred_rows, ref_rows = [], []
    offset = 0
    for inst in scenes:
        grid = infer_with_tta(model, inst.clip, cfg) if tta else infer_clip(model, inst.clip, cfg)
        hop = INPUT_HOP_S * _grid_pool(inst.clip, grid)
        rows = grid_to_label_rows(grid, inst.clip.duration_s, hop, cfg.threshold)
        n_frames = inst.labels.num_frames
        # concatenate scenes on one timeline, each starting on a 1 s segment boundary
        pred_rows += [(f + offset, c, az, el) for f, c, az, el in rows]
        ref_rows += [(f + offset, c, az, el) for f, c, az, el in track_to_rows(inst.labels)]
        offset += 10 * math.ceil(n_frames / 10)
    return evaluate_rows(pred_rows, ref_rows, num_frames=offset), pred_rows


def _grid_pool(clip: FoaClip, grid: NDArray) -> int:
    return max(num_frames(clip.num_samples) // grid.shape[-1], 1)
