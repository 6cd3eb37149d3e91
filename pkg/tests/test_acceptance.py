"""Acceptance suite: one PASS/FAIL line per criterion, printed to the terminal.

Run with ``pytest tests/test_acceptance.py -v`` (the lines appear in the live
output) or directly with ``python tests/test_acceptance.py``.
"""

import csv
import itertools
import sys
import tempfile
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from seldkit.accdoa import (
    TwoBranchOutput,
    accdoa_loss,
    decode,
    encode,
    head_param_count,
    seldnet_loss,
)
from seldkit.cli import load_experiment, main, run_compare
from seldkit.geometry import foa_encode, rotate_foa, rotate_vectors, rotation_catalog
from seldkit.metrics import brute_force_assignment, evaluate, evaluate_frames, hungarian_assignment
from seldkit.model import (
    ConvBlock,
    ModelConfig,
    Parameters,
    backward,
    count_parameters,
    forward,
    init_parameters,
    trunk_parameter_count,
)
from seldkit.pipeline import InferConfig, evaluate_model, infer_clip, infer_with_tta
from seldkit.scene import render_scene, track_to_rows, write_label_csv

try:
    from .oracles import central_difference, equivariant_oracle_model, grad_close, random_track, random_unit
except ImportError:  # executed as a script
    from oracles import central_difference, equivariant_oracle_model, grad_close, random_track, random_unit

# tolerances and budgets
CODEC_TRACKS, CODEC_MAX_S = 1000, 5.0
GRAD_REL, GRAD_FLOOR, GRAD_MIN_INSTANCES, GRAD_MAX_S = 1e-4, 1e-6, 100, 120.0
EQUIVARIANCE_TOL = 1e-9
METRIC_FRAMES = 200
DISPLACEMENT_LE_TOL = 0.01
LEARNING_F_RATIO, LEARNING_LE_RATIO, LEARNING_MAX_S = 0.95, 1.2, 600.0
TTA_F_DROP = 1.0

_LINES: list[str] = []


def report(capsys, number: int, name: str, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    _LINES.append(line)
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    assert ok, line


# --- 1. codec exactness ---------------------------------------------------


def test_codec_exactness(capsys):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    failures = 0
    for _ in range(CODEC_TRACKS):
        c, t = int(rng.integers(1, 15)), int(rng.integers(1, 65))
        labels = random_track(rng, c, t, p_active=rng.uniform(0, 1))
        failures += decode(encode(labels), 0.5) != labels
    elapsed = time.perf_counter() - t0
    report(
        capsys, 1, "codec exactness", failures == 0 and elapsed < CODEC_MAX_S,
        f"{CODEC_TRACKS - failures}/{CODEC_TRACKS} exact, {elapsed:.2f} s < {CODEC_MAX_S} s",
    )


# --- 2. gradient suite ----------------------------------------------------


def _tiny(head):
    return ModelConfig(
        num_classes=2,
        head=head,
        conv_blocks=(ConvBlock(3, pool_freq=2, pool_time=2), ConvBlock(2, pool_freq=2, pool_time=2)),
        hidden_size=4,
        input_bins=8,
        input_frames=8,
        amplitude_scale=0.5,
    )


def _model_instance(rng, head):
    cfg = _tiny(head)
    params = init_parameters(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    x = rng.uniform(-np.pi, np.pi, (2, 7, 8, 8))
    x[:, :4] = np.abs(x[:, :4])
    labels = random_track(rng, 2, cfg.output_frames)
    if head == "accdoa":
        target = encode(labels)

        def loss(out):
            return accdoa_loss(out, np.broadcast_to(target, out.shape))
    else:

        def loss(out):
            total, gs, gd = 0.0, [], []
            for b in range(out.sed.shape[0]):
                v, g = seldnet_loss(TwoBranchOutput(out.sed[b], out.doa[b]), labels, 10.0)
                total += v
                gs.append(g.sed)
                gd.append(g.doa)
            return total, TwoBranchOutput(np.stack(gs), np.stack(gd))

    out, cache = forward(params, x)
    grads = backward(params, cache, loss(out)[1])
    fd = central_difference(
        lambda v: loss(forward(Parameters(cfg, v.copy(), dtype=np.float64), x)[0])[0], params.vector.copy()
    )
    return grad_close(grads.vector, fd, GRAD_REL, GRAD_FLOOR)


def test_gradient_suite(capsys):
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    counts = {"accdoa_loss": [0, 0], "seldnet_loss": [0, 0], "model_accdoa": [0, 0], "model_two_branch": [0, 0]}
    for _ in range(100):
        c, t = (int(v) for v in rng.integers(1, 6, size=2))
        est = rng.standard_normal((3, c, t))
        ref = encode(random_track(rng, c, t))
        ok = grad_close(accdoa_loss(est, ref)[1], central_difference(lambda e: accdoa_loss(e, ref)[0], est),
                        GRAD_REL, GRAD_FLOOR)
        counts["accdoa_loss"][0] += ok
        counts["accdoa_loss"][1] += 1

        labels = random_track(rng, c, t)
        sed, doa = rng.uniform(0.05, 0.95, (c, t)), rng.standard_normal((3, c, t))
        _, g = seldnet_loss(TwoBranchOutput(sed, doa), labels, 10.0)
        fd_s = central_difference(lambda s: seldnet_loss(TwoBranchOutput(s, doa), labels, 10.0)[0], sed)
        fd_d = central_difference(lambda d: seldnet_loss(TwoBranchOutput(sed, d), labels, 10.0)[0], doa)
        ok = grad_close(g.sed, fd_s, GRAD_REL, GRAD_FLOOR) and grad_close(g.doa, fd_d, GRAD_REL, GRAD_FLOOR)
        counts["seldnet_loss"][0] += ok
        counts["seldnet_loss"][1] += 1
    for head in ("accdoa", "two_branch"):
        for _ in range(10):
            counts[f"model_{head}"][0] += _model_instance(rng, head)
            counts[f"model_{head}"][1] += 1
    elapsed = time.perf_counter() - t0
    passed = sum(v[0] for v in counts.values())
    total = sum(v[1] for v in counts.values())
    detail = ", ".join(f"{k} {v[0]}/{v[1]}" for k, v in counts.items())
    report(
        capsys, 2, "gradient suite",
        passed == total and total >= GRAD_MIN_INSTANCES and elapsed < GRAD_MAX_S,
        f"{detail}; {elapsed:.1f} s < {GRAD_MAX_S:.0f} s",
    )


# --- 3. parameter-count ordering ------------------------------------------


def test_parameter_count_ordering(capsys):
    sweep = list(
        itertools.product(
            (1, 3, 14, 40),
            (16, 64, 128, 256, 512),
        )
    )
    assert len(sweep) == 20
    bad = []
    for i, (classes, hidden) in enumerate(sweep):
        blocks = tuple(ConvBlock(c) for c in ((8, 16), (16, 32, 64), (4, 8, 16, 32))[i % 3])
        acc_cfg = ModelConfig(num_classes=classes, hidden_size=hidden, conv_blocks=blocks)
        two_cfg = acc_cfg.with_head("two_branch")
        delta = count_parameters(two_cfg) - count_parameters(acc_cfg)
        expected = head_param_count(hidden, classes, "two_branch") - head_param_count(hidden, classes, "accdoa")
        if not (
            count_parameters(acc_cfg) < count_parameters(two_cfg)
            and delta == expected
            and trunk_parameter_count(acc_cfg) == trunk_parameter_count(two_cfg)
        ):
            bad.append((classes, hidden))
    report(capsys, 3, "parameter-count ordering", not bad, f"{20 - len(bad)}/20 configs, head delta exact")


# --- 4. FOA equivariance and metric rotation invariance --------------------


def _random_sets(rng, n_frames=10, classes=3):
    out = {}
    for f in range(n_frames):
        for c in range(classes):
            n = int(rng.integers(0, 3))
            if n:
                out.setdefault(f, {})[c] = random_unit(rng, (n,))
    return out


def test_foa_equivariance(capsys):
    rng = np.random.default_rng(404)
    s = rng.standard_normal(64)
    dirs = random_unit(rng, (100,))
    worst = 0.0
    for entry in rotation_catalog():
        for d in dirs:
            lhs = rotate_foa(foa_encode(s, d), entry.rotation).samples
            rhs = foa_encode(s, entry.transform_doa(d)).samples
            worst = max(worst, float(np.max(np.abs(lhs - rhs))))
    worst_metric = 0.0
    for _ in range(50):
        pred, ref = _random_sets(rng), _random_sets(rng)
        q, r = np.linalg.qr(rng.standard_normal((3, 3)))
        rot = q * np.sign(np.diag(r))

        def turn(sets):
            return {f: {c: rotate_vectors(rot, v) for c, v in d.items()} for f, d in sets.items()}

        a = np.array(evaluate_frames(pred, ref).metrics())
        b = np.array(evaluate_frames(turn(pred), turn(ref)).metrics())
        worst_metric = max(worst_metric, float(np.max(np.abs(a - b))))
    ok = worst <= EQUIVARIANCE_TOL and worst_metric <= EQUIVARIANCE_TOL
    report(
        capsys, 4, "FOA equivariance", ok,
        f"16 transforms x 100 directions max err {worst:.1e}; metric invariance max err {worst_metric:.1e}"
        f" <= {EQUIVARIANCE_TOL:.0e}",
    )


# --- 5. metrics oracle ------------------------------------------------------


def test_metrics_oracle(capsys, tmp_path):
    rng = np.random.default_rng(505)
    mismatches = 0
    for _ in range(METRIC_FRAMES):
        pred, ref = {}, {}
        for c in range(3):
            for sets in (pred, ref):
                n = int(rng.integers(0, 5))
                if n:
                    sets.setdefault(0, {})[c] = random_unit(rng, (n,))
        a = evaluate_frames(pred, ref, num_frames=1, assign=hungarian_assignment).metrics()
        b = evaluate_frames(pred, ref, num_frames=1, assign=brute_force_assignment).metrics()
        mismatches += a != b

    work = Path(tmp_path) if tmp_path is not None else Path(tempfile.mkdtemp())
    inst = render_scene(replace(load_experiment(None).test_scene, seed=77))
    write_label_csv(work / "ref.csv", track_to_rows(inst.labels))
    self_eval = evaluate(work / "ref.csv", work / "ref.csv").metrics()

    ref30 = {f: {0: np.array([[1.0, 0.0, 0.0]])} for f in range(10)}
    th = np.deg2rad(30.0)
    pred30 = {f: {0: np.array([[np.cos(th), np.sin(th), 0.0]])} for f in range(10)}
    rep30 = evaluate_frames(pred30, ref30)
    ok = (
        mismatches == 0
        and self_eval == (0.0, 100.0, 0.0, 100.0)
        and rep30.f_20 == 0.0
        and abs(rep30.le_cd - 30.0) <= DISPLACEMENT_LE_TOL
    )
    report(
        capsys, 5, "metrics oracle", ok,
        f"hungarian == brute force on {METRIC_FRAMES - mismatches}/{METRIC_FRAMES} frames; "
        f"self-eval {self_eval}; 30 deg shift F={rep30.f_20:.1f} LE={rep30.le_cd:.4f}",
    )


# --- 6/7. desk-scale learning check and trained-model TTA -------------------


@pytest.fixture(scope="module")
def desk_run():
    return _desk_run()


_DESK: dict = {}


def _desk_run():
    if not _DESK:
        cfg = load_experiment(None, {"seed": 0})
        t0 = time.perf_counter()
        rows = run_compare(cfg, ["accdoa", "seldnet"])
        _DESK.update(cfg=cfg, rows={r["variant"]: r for r in rows}, seconds=time.perf_counter() - t0)
    return _DESK


def test_desk_learning_check(desk_run, capsys):
    acc_rep = desk_run["rows"]["accdoa"]["report"]
    sel_rep = desk_run["rows"]["seldnet"]["report"]
    ok = (
        acc_rep.f_20 >= LEARNING_F_RATIO * sel_rep.f_20
        and acc_rep.le_cd <= LEARNING_LE_RATIO * sel_rep.le_cd
        and desk_run["seconds"] <= LEARNING_MAX_S
        and not acc_rep.le_undefined
    )
    report(
        capsys, 6, "desk-scale learning check", ok,
        f"ACCDOA F={acc_rep.f_20:.1f} LE={acc_rep.le_cd:.1f}; SELDnet F={sel_rep.f_20:.1f} "
        f"LE={sel_rep.le_cd:.1f}; need F >= {LEARNING_F_RATIO} x and LE <= {LEARNING_LE_RATIO} x; "
        f"{desk_run['seconds']:.0f} s <= {LEARNING_MAX_S:.0f} s",
    )


def test_tta_consistency(desk_run, capsys):
    clip = render_scene(replace(load_experiment(None).test_scene, seed=707)).clip
    model = equivariant_oracle_model(num_classes=1)
    all16 = InferConfig(tta_rotations=tuple(range(16)))
    oracle_err = float(np.max(np.abs(infer_with_tta(model, clip, all16) - infer_clip(model, clip))))

    cfg = desk_run["cfg"]
    params = desk_run["rows"]["accdoa"]["result"].params
    test = [
        render_scene(replace(cfg.test_scene, seed=cfg.test_scene.seed + j)) for j in range(cfg.test_scenes)
    ]
    plain = desk_run["rows"]["accdoa"]["report"]
    tta, _ = evaluate_model(params, test, replace(cfg.infer, tta_rotations=tuple(range(16))), tta=True)
    ok = oracle_err <= EQUIVARIANCE_TOL and tta.f_20 >= plain.f_20 - TTA_F_DROP
    report(
        capsys, 7, "TTA consistency", ok,
        f"oracle max err {oracle_err:.1e} <= {EQUIVARIANCE_TOL:.0e}; trained F {plain.f_20:.1f} -> "
        f"{tta.f_20:.1f} with 16 rotations (max drop {TTA_F_DROP})",
    )


# --- 8. determinism ---------------------------------------------------------

SMALL_COMPARE = """{
  "scene": {"duration_s": 1.28, "class_count": 3},
  "test_scene": {"duration_s": 3.0, "class_count": 3},
  "test_scenes": 2,
  "train": {"max_iters": 6, "batch_size": 4, "train_scenes": 8}
}
"""


def test_compare_determinism(tmp_path_factory, capsys):
    base = tmp_path_factory.mktemp("determinism")
    cfg_path = base / "cfg.json"
    cfg_path.write_text(SMALL_COMPARE)
    for name in ("a", "b"):
        code = main(["--log-level", "WARNING", "compare", "--config", str(cfg_path), "--out", str(base / name),
                     "--seed", "11"])
        assert code == 0
    files = ["report.csv"] + [f"{v}/{f}" for v in ("accdoa", "seldnet") for f in ("checkpoint.bin", "loss_history.csv")]
    same = [f for f in files if (base / "a" / f).read_bytes() == (base / "b" / f).read_bytes()]
    with open(base / "a" / "report.csv") as fh:
        assert [r["variant"] for r in csv.DictReader(fh)] == ["accdoa", "seldnet"]
    report(capsys, 8, "determinism", len(same) == len(files), f"{len(same)}/{len(files)} artifacts byte-identical")


if __name__ == "__main__":
    class _Factory:
        def mktemp(self, name):
            return Path(tempfile.mkdtemp(prefix=name))

    checks = [
        lambda: test_codec_exactness(None),
        lambda: test_gradient_suite(None),
        lambda: test_parameter_count_ordering(None),
        lambda: test_foa_equivariance(None),
        lambda: test_metrics_oracle(None, None),
        lambda: test_desk_learning_check(_desk_run(), None),
        lambda: test_tta_consistency(_desk_run(), None),
        lambda: test_compare_determinism(_Factory(), None),
    ]
    failed = 0
    for check in checks:
        try:
            check()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
