import numpy as np
import pytest

from seldkit.accdoa import TwoBranchOutput, accdoa_loss, head_param_count, seldnet_loss
from seldkit.model import (
    ConfigError,
    ConvBlock,
    ModelConfig,
    Parameters,
    StaleCacheError,
    backward,
    count_parameters,
    forward,
    init_parameters,
    load_checkpoint,
    parameter_shapes,
    save_checkpoint,
    trunk_parameter_count,
)

from .oracles import central_difference, grad_close, random_track


def tiny(head="accdoa", classes=2, pool="max"):
    return ModelConfig(
        num_classes=classes,
        head=head,
        conv_blocks=(
            ConvBlock(3, pool_freq=2, pool_time=2, pool=pool),
            ConvBlock(2, pool_freq=2, pool_time=2, pool=pool),
        ),
        hidden_size=4,
        input_bins=8,
        input_frames=8,
        amplitude_scale=0.5,
    )


def random_input(rng, cfg, batch=None):
    shape = (cfg.input_planes, cfg.input_bins, cfg.input_frames)
    if batch is not None:
        shape = (batch,) + shape
    x = rng.uniform(-np.pi, np.pi, shape)
    x[..., :4, :, :] = np.abs(x[..., :4, :, :])
    return x


def test_output_shapes_default_config():
    cfg = ModelConfig()
    params = Parameters(cfg)
    x = np.zeros((7, 257, 128))
    out, _ = forward(params, x)
    assert out.shape == (3, 14, 16)
    out2, _ = forward(init_parameters(cfg.with_head("two_branch")), x[None])
    assert out2.sed.shape == (1, 14, 16) and out2.doa.shape == (1, 3, 14, 16)


def test_zero_parameters_give_zero_grid():
    cfg = tiny()
    out, _ = forward(Parameters(cfg), random_input(np.random.default_rng(0), cfg))
    assert not np.any(out)


def test_batch_doubling_is_consistent():
    cfg = tiny()
    params = init_parameters(cfg, seed=1, dtype=np.float64)
    x = random_input(np.random.default_rng(1), cfg)
    single, _ = forward(params, x)
    double, _ = forward(params, np.stack([x, x]))
    np.testing.assert_allclose(double[0], single, atol=1e-12)
    np.testing.assert_allclose(double[1], single, atol=1e-12)


def test_input_shape_mismatch():
    cfg = tiny()
    with pytest.raises(ConfigError):
        forward(Parameters(cfg), np.zeros((7, 9, 8)))


def _flat_grad_check(cfg, loss_fn, rng):
    params = init_parameters(cfg, seed=int(rng.integers(1 << 30)), dtype=np.float64)
    x = random_input(rng, cfg, batch=2)
    out, cache = forward(params, x)
    _, dout = loss_fn(out)
    grads = backward(params, cache, dout)

    def f(vec):
        return loss_fn(forward(Parameters(cfg, vec.copy(), dtype=np.float64), x)[0])[0]

    fd = central_difference(f, params.vector.copy())
    return grad_close(grads.vector, fd)


@pytest.mark.parametrize("pool", ["max", "avg"])
def test_accdoa_model_finite_differences(pool):
    cfg = tiny(pool=pool)
    rng = np.random.default_rng(2)
    target = rng.uniform(-1, 1, (2, 3, 2, cfg.output_frames))
    for _ in range(3):
        assert _flat_grad_check(cfg, lambda o: accdoa_loss(o, target), rng)


def test_two_branch_model_finite_differences():
    cfg = tiny("two_branch")
    rng = np.random.default_rng(3)
    labels = random_track(rng, 2, cfg.output_frames)

    def loss(out):
        value, g_sed, g_doa = 0.0, [], []
        for b in range(out.sed.shape[0]):
            v, g = seldnet_loss(TwoBranchOutput(out.sed[b], out.doa[b]), labels, 10.0)
            value += v
            g_sed.append(g.sed)
            g_doa.append(g.doa)
        return value, TwoBranchOutput(np.stack(g_sed), np.stack(g_doa))

    for _ in range(3):
        assert _flat_grad_check(cfg, loss, rng)


def test_zero_loss_gradient_gives_zero_grads():
    cfg = tiny()
    params = init_parameters(cfg, seed=4, dtype=np.float64)
    out, cache = forward(params, random_input(np.random.default_rng(4), cfg))
    assert not np.any(backward(params, cache, np.zeros_like(out)).vector)


def test_dead_relu_path_has_zero_conv_grads():
    cfg = tiny()
    params = init_parameters(cfg, seed=5, dtype=np.float64)
    params["conv0.bias"][...] = -1e6  # every first-layer unit is off
    out, cache = forward(params, random_input(np.random.default_rng(5), cfg))
    grads = backward(params, cache, np.ones_like(out))
    assert not np.any(grads["conv0.weight"]) and not np.any(grads["conv0.bias"])


def test_stale_cache_rejected():
    cfg = tiny()
    params = init_parameters(cfg, seed=6)
    out, cache = forward(params, random_input(np.random.default_rng(6), cfg))
    params.vector[0] += 1.0
    params.bump()
    with pytest.raises(StaleCacheError):
        backward(params, cache, out)


def test_parameter_counts():
    for classes in (1, 3, 14):
        a = tiny("accdoa", classes)
        t = tiny("two_branch", classes)
        assert trunk_parameter_count(a) == trunk_parameter_count(t)
        k = a.hidden_size
        assert count_parameters(a) - trunk_parameter_count(a) == head_param_count(k, classes, "accdoa")
        assert count_parameters(t) - count_parameters(a) == (
            head_param_count(k, classes, "two_branch") - head_param_count(k, classes, "accdoa")
        )
        assert count_parameters(a) == sum(int(np.prod(s)) for s in parameter_shapes(a).values())


def test_init_is_seeded():
    cfg = tiny()
    assert np.array_equal(init_parameters(cfg, 3).vector, init_parameters(cfg, 3).vector)
    assert not np.array_equal(init_parameters(cfg, 3).vector, init_parameters(cfg, 4).vector)


def test_checkpoint_round_trip(tmp_path):
    cfg = tiny("two_branch")
    params = init_parameters(cfg, seed=7)
    save_checkpoint(tmp_path / "m.bin", params)
    back = load_checkpoint(tmp_path / "m.bin")
    assert back.config == cfg
    assert np.array_equal(back.vector, params.vector)
    raw = (tmp_path / "m.bin").read_bytes()
    assert raw[:8] == b"SELDCKPT"


def test_checkpoint_rejects_garbage(tmp_path):
    (tmp_path / "bad.bin").write_bytes(b"not a model")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "bad.bin")


def test_unknown_pool_kind_rejected():
    with pytest.raises(ConfigError):
        tiny(pool="median").validate()


def test_config_json_round_trip_and_unknown_field():
    cfg = tiny()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    assert cfg.trunk_hash() == cfg.with_head("two_branch").trunk_hash()
    assert cfg.config_hash() != cfg.with_head("two_branch").config_hash()
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"bogus": 1})
