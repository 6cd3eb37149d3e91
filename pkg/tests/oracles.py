"""Independent reference computations shared by the test modules."""

import itertools

import numpy as np

from seldkit.accdoa import EventLabelTrack


def central_difference(f, x, h=1e-6):
    """Numerical gradient of scalar ``f`` at array ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def grad_close(analytic, numeric, rel=1e-4, floor=1e-6):
    """|a - n| <= max(rel * |n|, floor) elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return bool(np.all(np.abs(analytic - numeric) <= np.maximum(rel * np.abs(numeric), floor)))


def random_unit(rng, shape=()):
    v = rng.standard_normal(tuple(shape) + (3,))
    return v / np.linalg.norm(v, axis=-1, keepdims=True)


def random_track(rng, c, t, p_active=0.4):
    act = (rng.uniform(size=(c, t)) < p_active).astype(np.int8)
    doa = np.moveaxis(random_unit(rng, (c, t)), -1, 0) * act[None]
    return EventLabelTrack(act, doa)


def brute_force_min_cost(cost):
    """Minimum total cost over all maximum-cardinality matchings."""
    n, m = cost.shape
    if n > m:
        return brute_force_min_cost(cost.T)
    return min(sum(cost[i, j] for i, j in enumerate(p)) for p in itertools.permutations(range(m), n))


def equivariant_oracle_model(num_classes=1, pool=8, eps=1e-12):
    """A model that commutes exactly with every signed-axis permutation of the scene.

    Per input frame it forms ``Re(S_ch conj(S_W))`` summed over bins for the X, Y
    and Z channels, normalises by the W energy, and mean-pools ``pool`` frames.
    The result is written into class 0 of an ACCDOA grid.
    """

    def run(batch):
        batch = np.asarray(batch, dtype=np.float64)
        w = batch[:, 0]
        comps = [np.sum(batch[:, a] * w * np.cos(batch[:, p]), axis=1) for a, p in ((3, 6), (1, 4), (2, 5))]
        v = np.stack(comps, axis=1) / (np.sum(w * w, axis=1)[:, None] + eps)  # (B, 3, T')
        b, _, t = v.shape
        v = v[..., : t // pool * pool].reshape(b, 3, t // pool, pool).mean(axis=-1)
        grid = np.zeros((b, 3, num_classes, t // pool))
        grid[:, :, 0] = v
        return grid

    return run
