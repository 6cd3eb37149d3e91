"""Command-line driver: ``seldkit {synth,train,infer,eval,compare}``.

Experiments are described by one JSON file whose sections mirror the library
config types (``scene``, ``test_scene``, ``model``, ``train``, ``infer``); any
section or field may be omitted and command-line flags override file values.
Results go to stdout, logs to stderr, and every failure exits nonzero with a
single ``seldkit: error: ...`` line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
import time
import types
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

from seldkit import __version__
from seldkit.augment import AugmentConfig
from seldkit.geometry import read_wav, write_wav
from seldkit.metrics import SeldReport, evaluate
from seldkit.model import ConvBlock, ModelConfig, count_parameters, load_checkpoint, save_checkpoint
from seldkit.model import trunk_parameter_count
from seldkit.pipeline import (
    LOSS_VARIANTS,
    INPUT_HOP_S,
    InferConfig,
    TrainConfig,
    TrainResult,
    evaluate_model,
    grid_to_label_rows,
    infer_clip,
    infer_with_tta,
    train,
)
from seldkit.scene import SceneSpec, render_scene, track_to_rows, write_label_csv

log = logging.getLogger("seldkit")

SEED_ENV = "ACCDOA_SEED"
# scene seeds are derived from the experiment seed so train and test never collide
TRAIN_SEED_STRIDE = 10_000
TEST_SEED_OFFSET = 5_000


class CliError(Exception):
    """A user-facing failure; the message becomes the single error line."""


# --- experiment configuration ---------------------------------------------


DESK_AUGMENT = AugmentConfig(emda_enabled=False, rotation_enabled=True, specaug_enabled=False)


def desk_scene() -> SceneSpec:
    """Short 3-class training scenes, exactly one model input window long."""
    return SceneSpec(
        duration_s=1.28, class_count=3, event_rate_hz=1.5, event_length_s=(0.5, 2.0)
    )


def desk_test_scene() -> SceneSpec:
    return SceneSpec(duration_s=10.0, class_count=3, event_rate_hz=0.8, event_length_s=(0.5, 3.0))


def desk_model() -> ModelConfig:
    return ModelConfig(
        num_classes=3, conv_blocks=(ConvBlock(8), ConvBlock(16), ConvBlock(32)), hidden_size=32
    )


def desk_train() -> TrainConfig:
    """Budget sized so a two-variant comparison finishes in about eight minutes on one core.

    Only rotation augmentation is on. It teaches the rotation equivariance that test-time
    rotation averaging relies on, while EMDA and SpecAugment slow convergence too much at this
    iteration count.
    """
    return TrainConfig(
        batch_size=8, lr=3e-3, decay_interval=600, lr_decay=0.9, max_iters=1200, augment=DESK_AUGMENT
    )


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    scene: SceneSpec = field(default_factory=desk_scene)
    test_scene: SceneSpec = field(default_factory=desk_test_scene)
    test_scenes: int = 6
    model: ModelConfig = field(default_factory=desk_model)
    train: TrainConfig = field(default_factory=desk_train)
    infer: InferConfig = field(default_factory=InferConfig)

    def resolved(self) -> "ExperimentConfig":
        """Propagate the experiment seed into the scene and training seeds."""
        base = self.seed * TRAIN_SEED_STRIDE
        return replace(
            self,
            scene=replace(self.scene, seed=base),
            test_scene=replace(self.test_scene, seed=base + TEST_SEED_OFFSET),
            model=replace(self.model, num_classes=self.scene.class_count),
            train=replace(self.train, seed=self.seed),
        )

    def to_json(self) -> str:
        return json.dumps(_to_plain(self), indent=2, sort_keys=True) + "\n"


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(v) for v in obj]
    return obj


def _convert(value: Any, tp: Any, where: str) -> Any:
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        options = typing.get_args(tp)
        if value is None and type(None) in options:
            return None
        inner = [o for o in options if o is not type(None)]
        return _convert(value, inner[0], where)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise CliError(f"config field {where!r}: expected an object")
        return _build(tp, value, where)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise CliError(f"config field {where!r}: expected a list")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_convert(v, args[0], f"{where}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise CliError(f"config field {where!r}: expected {len(args)} values")
        return tuple(_convert(v, a, f"{where}[{i}]") for i, (a, v) in enumerate(zip(args, value)))
    if tp is bool:
        if not isinstance(value, bool):
            raise CliError(f"config field {where!r}: expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise CliError(f"config field {where!r}: expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise CliError(f"config field {where!r}: expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise CliError(f"config field {where!r}: expected a string")
        return value
    return value


def _build(cls: type, data: dict, where: str = "") -> Any:
    """Instantiate dataclass ``cls`` from JSON ``data``, naming any offending field."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    prefix = f"{where}." if where else ""
    unknown = sorted(set(data) - names)
    if unknown:
        raise CliError(f"config field {prefix + unknown[0]!r}: unknown field")
    kwargs = {k: _convert(v, hints[k], prefix + k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise CliError(f"config section {where or 'root'!r}: {exc}") from None


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_experiment(path: str | None, overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, then the JSON file, then flag overrides; validated throughout."""
    data = _to_plain(ExperimentConfig())
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise CliError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            file_data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(file_data, dict):
            raise CliError(f"config {path}: top level must be an object")
        data = _merge(data, file_data)
    data = _merge(data, overrides or {})
    cfg = _build(ExperimentConfig, data)
    try:
        cfg.train.validate()
        cfg.infer.validate()
    except ValueError as exc:
        raise CliError(f"config: {exc}") from None
    if cfg.test_scenes < 1:
        raise CliError("config field 'test_scenes': must be positive")
    return cfg.resolved()


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise CliError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


# --- run manifests --------------------------------------------------------


class RunManifest:
    """Provenance record written before any work starts and completed at the end."""

    def __init__(self, out_dir: Path, command: str, argv: Sequence[str], config_json: str, seed: int):
        self.path = out_dir / "manifest.json"
        self.data: dict[str, Any] = {
            "command": command,
            "argv": list(argv),
            "config_hash": hashlib.sha256(config_json.encode()).hexdigest(),
            "seed": seed,
            "version": __version__,
            "started_at": _now(),
            "finished_at": None,
            "outputs": [],
        }
        self._write()

    def finish(self, outputs: Sequence[Path]) -> None:
        self.data["outputs"] = [str(p) for p in outputs]
        self.data["finished_at"] = _now()
        self._write()

    def _write(self) -> None:
        self.path.write_text(json.dumps(self.data, indent=2) + "\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def _prepare_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise CliError(f"output directory {path} is not writable: {exc.strerror}") from None
    return out


def _write_config(out: Path, cfg: ExperimentConfig) -> str:
    text = cfg.to_json()
    (out / "config.json").write_text(text)
    return text


def write_loss_history(path: Path, result: TrainResult) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("iteration", "loss", "lr"))
        for it, loss, lr in result.history:
            writer.writerow((it, repr(float(loss)), repr(float(lr))))


def _progress(every: int = 50):
    def report(it: int, loss: float) -> None:
        if it % every == 0:
            log.info("iter %d loss %.5f", it, loss)

    return report


# --- commands -------------------------------------------------------------


def _seed(args: argparse.Namespace, file_seed: int | None = None) -> int:
    if args.seed is not None:
        return args.seed
    if file_seed is not None:
        return file_seed
    return default_seed()


def _file_seed(path: str | None) -> int | None:
    if path is None:
        return None
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError):
        return None  # load_experiment reports the problem precisely
    return data.get("seed") if isinstance(data, dict) else None


def cmd_synth(args: argparse.Namespace) -> int:
    scene: dict[str, Any] = {}
    if args.duration is not None:
        scene["duration_s"] = args.duration
    if args.classes is not None:
        scene["class_count"] = args.classes
    if args.max_overlap is not None:
        scene["max_overlap"] = args.max_overlap
    if args.snr is not None:
        scene["snr_db_range"] = list(args.snr)
    seed = _seed(args, _file_seed(args.config))
    cfg = load_experiment(args.config, {"seed": seed, "scene": scene})
    if args.scenes < 1:
        raise CliError("--scenes must be positive")
    out = _prepare_dir(args.out)
    manifest = RunManifest(out, "synth", sys.argv[1:], _write_config(out, cfg), seed)
    outputs = [out / "config.json"]
    for i in range(args.scenes):
        inst = render_scene(replace(cfg.scene, seed=cfg.scene.seed + i))
        wav, lab = out / f"scene_{i:03d}.wav", out / f"scene_{i:03d}.csv"
        write_wav(wav, inst.clip)
        write_label_csv(lab, track_to_rows(inst.labels))
        outputs += [wav, lab]
        print(f"{wav}\t{lab}\tsnr_db={inst.snr_db:.2f}\tevents={len(inst.events)}")
    manifest.finish(outputs)
    return 0


def _train_overrides(args: argparse.Namespace) -> dict:
    train_over: dict[str, Any] = {}
    if getattr(args, "iters", None) is not None:
        train_over["max_iters"] = args.iters
    if getattr(args, "loss", None) is not None:
        train_over["loss"] = args.loss
    if getattr(args, "loss_weight", None) is not None:
        train_over["loss_weight"] = args.loss_weight
    return {"train": train_over}


def cmd_train(args: argparse.Namespace) -> int:
    seed = _seed(args, _file_seed(args.config))
    overrides = _train_overrides(args)
    overrides["seed"] = seed
    cfg = load_experiment(args.config, overrides)
    out = _prepare_dir(args.out)
    manifest = RunManifest(out, "train", sys.argv[1:], _write_config(out, cfg), seed)
    result = train(cfg.model, cfg.train, cfg.scene, progress=_progress())
    save_checkpoint(out / "checkpoint.bin", result.params)
    write_loss_history(out / "loss_history.csv", result)
    final = result.history[-1][1] if result.history else float("nan")
    print(f"checkpoint={out / 'checkpoint.bin'} iterations={len(result.history)} final_loss={final:.6g}")
    manifest.finish([out / "config.json", out / "checkpoint.bin", out / "loss_history.csv"])
    return 0


def cmd_infer(args: argparse.Namespace) -> int:
    try:
        params = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise CliError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    try:
        clip = read_wav(args.wav)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read audio {args.wav}: {exc}") from None
    cfg = InferConfig(
        shift_frames=args.shift,
        threshold=args.threshold,
        tta_rotations=tuple(range(16)) if args.tta else (0,),
        segment_frames=params.config.input_frames,
    ).validate()
    grid = infer_with_tta(params, clip, cfg) if args.tta else infer_clip(params, clip, cfg)
    hop = INPUT_HOP_S * params.config.temporal_pool
    rows = grid_to_label_rows(grid, clip.duration_s, hop, cfg.threshold)
    if args.out:
        write_label_csv(args.out, rows)
        log.info("wrote %d rows to %s", len(rows), args.out)
    else:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("frame_100ms", "class_idx", "azimuth_deg", "elevation_deg"))
        for frame, cls, az, el in rows:
            writer.writerow((frame, cls, f"{az:.6f}", f"{el:.6f}"))
        sys.stdout.write(buf.getvalue())
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    for path in (args.pred, args.ref):
        if not Path(path).is_file():
            raise CliError(f"no such file: {path}")
    report = evaluate(args.pred, args.ref)
    if args.format == "csv":
        print(SeldReport.csv_header())
        print(report.csv_row())
    else:
        print(report.summary_line())
    if report.le_undefined:
        log.warning("no matched pairs; LE_CD reported as the %s degree sentinel", report.le_cd)
    return 0


REPORT_HEADER = ("variant", "head", "params", "head_params", "trunk_hash", "le_cd", "lr_cd", "er_20", "f_20")


def run_compare(
    cfg: ExperimentConfig, variants: Sequence[str], out: Path | None = None, tta: bool = False
) -> list[dict[str, Any]]:
    """Train each loss variant on the same seeded stream and score it on held-out scenes."""
    test = [
        render_scene(replace(cfg.test_scene, seed=cfg.test_scene.seed + j)) for j in range(cfg.test_scenes)
    ]
    rows = []
    trunk_hashes = set()
    for variant in variants:
        model_cfg = cfg.model.with_head(LOSS_VARIANTS[variant])
        trunk_hashes.add(model_cfg.trunk_hash())
        log.info("training %s (%d parameters)", variant, count_parameters(model_cfg))
        train_cfg = replace(cfg.train, loss=variant)
        result = train(model_cfg, train_cfg, cfg.scene, progress=_progress())
        report, pred_rows = evaluate_model(result.params, test, cfg.infer)
        row: dict[str, Any] = {
            "variant": variant,
            "head": model_cfg.head,
            "params": count_parameters(model_cfg),
            "head_params": count_parameters(model_cfg) - trunk_parameter_count(model_cfg),
            "trunk_hash": model_cfg.trunk_hash()[:12],
            "report": report,
            "result": result,
        }
        if tta:
            tta_cfg = replace(cfg.infer, tta_rotations=tuple(range(16)))
            row["tta_report"], _ = evaluate_model(result.params, test, tta_cfg, tta=True)
        if out is not None:
            vdir = out / variant
            vdir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(vdir / "checkpoint.bin", result.params)
            write_loss_history(vdir / "loss_history.csv", result)
            write_label_csv(vdir / "events.csv", pred_rows)
        rows.append(row)
    if len(trunk_hashes) != 1:
        raise CliError("variants do not share one trunk configuration")
    return rows


def format_report(rows: Sequence[dict[str, Any]]) -> str:
    header = list(REPORT_HEADER)
    if rows and "tta_report" in rows[0]:
        header.append("f_20_tta")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for r in rows:
        rep: SeldReport = r["report"]
        line = [r["variant"], r["head"], r["params"], r["head_params"], r["trunk_hash"]]
        line += [f"{rep.le_cd:.2f}", f"{rep.lr_cd:.2f}", f"{rep.er_20:.4f}", f"{rep.f_20:.2f}"]
        if "tta_report" in r:
            line.append(f"{r['tta_report'].f_20:.2f}")
        writer.writerow(line)
    return buf.getvalue()


def cmd_compare(args: argparse.Namespace) -> int:
    seed = _seed(args, _file_seed(args.config))
    overrides = _train_overrides(args)
    overrides["seed"] = seed
    cfg = load_experiment(args.config, overrides)
    for v in args.variants:
        if v not in LOSS_VARIANTS:
            raise CliError(f"unknown variant {v!r}; choose from {sorted(LOSS_VARIANTS)}")
    out = _prepare_dir(args.out)
    manifest = RunManifest(out, "compare", sys.argv[1:], _write_config(out, cfg), seed)
    rows = run_compare(cfg, args.variants, out, tta=args.tta)
    table = format_report(rows)
    (out / "report.csv").write_text(table)
    sys.stdout.write(table)
    outputs = [out / "config.json", out / "report.csv"]
    for v in args.variants:
        outputs += [out / v / "checkpoint.bin", out / v / "loss_history.csv", out / v / "events.csv"]
    manifest.finish(outputs)
    return 0


# --- argument parsing -----------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> typing.NoReturn:
        self.exit(2, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="seldkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"seldkit {__version__}")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"))
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="render synthetic FOA scenes (WAV + label CSV)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", help="experiment JSON; the 'scene' section is used")
    p.add_argument("--scenes", type=int, default=1)
    p.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")
    p.add_argument("--duration", type=float, default=None, help="scene length in seconds")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--max-overlap", type=int, default=None)
    p.add_argument("--snr", type=float, nargs=2, metavar=("LOW", "HIGH"), default=None)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model and write a run directory")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--config", help="experiment JSON")
    p.add_argument("--loss", choices=sorted(LOSS_VARIANTS), default=None)
    p.add_argument("--loss-weight", type=float, default=None, help="DOA weight of the SELDnet loss")
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="detect and localise events in a FOA WAV file")
    p.add_argument("checkpoint")
    p.add_argument("wav")
    p.add_argument("--out", help="label CSV path (default: stdout)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--shift", type=int, default=20, help="window shift in 10 ms frames")
    p.add_argument("--tta", action="store_true", help="average over all 16 catalog rotations")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score a prediction label CSV against a reference")
    p.add_argument("pred")
    p.add_argument("ref")
    p.add_argument("--format", choices=("text", "csv"), default="text")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train ACCDOA and two-branch variants on one stream")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="experiment JSON")
    p.add_argument("--variants", nargs="+", default=["accdoa", "seldnet"])
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--seed", type=int, default=None, help=f"defaults to ${SEED_ENV} or 0")
    p.add_argument("--tta", action="store_true", help="also score with 16-rotation TTA")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr, level=args.log_level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    try:
        return args.func(args)
    except CliError as exc:
        reason = str(exc)
    except (OSError, ValueError, RuntimeError) as exc:
        reason = f"{type(exc).__name__}: {exc}"
    sys.stderr.write(f"seldkit: error: {' '.join(reason.split())}\n")
    return 1


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
