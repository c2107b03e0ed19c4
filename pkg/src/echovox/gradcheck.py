"""Finite-difference gradient verification.

Runs operators in float64 and compares analytic gradients against
central differences.  This is the independent oracle for the autodiff
engine; it never calls the backward pass it is checking to compute the
numeric side.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .rng import RngStream
from .tensor import Tensor


def grad_check(fn, inputs: list[Tensor], h: float = 1e-5, proj_rng: RngStream | None = None) -> float:
    """Max relative error between analytic and numeric gradients.

    fn maps the input tensors to an output tensor.  Non-scalar outputs
    are reduced to a scalar through mse against a fixed random target so
    every output coordinate contributes.  Relative error per coordinate
    is |analytic - numeric| / max(1, |analytic|, |numeric|).

    inputs must be float64 tensors; every one with requires_grad set is
    checked coordinate by coordinate.
    """
    for x in inputs:
        if x.dtype != np.float64:
            raise TypeError("grad_check requires float64 tensors")
    if proj_rng is None:
        proj_rng = RngStream(0x5EED, "gradcheck-proj")

    probe = fn(*inputs)
    target = None
    if probe.size != 1:
        target = Tensor(proj_rng.normal(size=probe.dims), dtype=np.float64)

    def loss_of(out: Tensor) -> Tensor:
        return out if target is None else T.mse(out, target)

    # analytic side
    for x in inputs:
        x.zero_grad()
    loss_of(fn(*inputs)).backward()
    analytic = [x.grad.copy() if x.grad is not None else np.zeros_like(x.data)
                for x in inputs if x.requires_grad]

    # numeric side: central differences on the scalar loss
    def eval_loss() -> float:
        with T.no_grad():
            return float(loss_of(fn(*inputs)).data)

    worst = 0.0
    k = 0
    for x in inputs:
        if not x.requires_grad:
            continue
        ana = analytic[k]
        k += 1
        flat = x.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = eval_loss()
            flat[i] = orig - h
            fm = eval_loss()
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            a = ana.reshape(-1)[i]
            err = abs(a - num) / max(1.0, abs(a), abs(num))
            if err > worst:
                worst = err
    return worst


def _point(rng: RngStream, shape, kink_margin: float = 0.0) -> np.ndarray:
    """Random float64 test point; optionally resampled away from |x| < margin."""
    x = rng.normal(size=shape)
    if kink_margin > 0.0:
        bad = np.abs(x) < kink_margin
        while bad.any():
            x[bad] = rng.normal(size=int(bad.sum()))
            bad = np.abs(x) < kink_margin
    return x


def _pool_safe(rng: RngStream, shape, gap: float = 1e-3) -> np.ndarray:
    """Random point whose pooling pairs are separated by at least gap.

    Finite differences step across the argmax switch when a pair is
    nearly tied, so tied pairs are resampled (same idea as the leaky
    rectifier kink margin).
    """
    x = rng.normal(size=shape)
    pairs = x.reshape(*shape[:-1], shape[-1] // 2, 2)
    bad = np.abs(pairs[..., 0] - pairs[..., 1]) < gap
    # shifting the second element by 2*gap always clears the tie
    pairs[..., 1] = np.where(bad, pairs[..., 1] + 2 * gap, pairs[..., 1])
    return x


def operator_suite(seed: int = 0, points: int = 10) -> dict[str, float]:
    """Gradient-check every differentiable operator at `points` random points.

    Returns the max relative error per operator name.
    """
    f64 = np.float64
    errors: dict[str, float] = {}

    def record(name: str, err: float):
        errors[name] = max(errors.get(name, 0.0), err)

    for trial in range(points):
        rng = RngStream(seed, f"gradcheck/{trial}")

        x = Tensor(_point(rng, (2, 6, 6)), requires_grad=True, dtype=f64)
        w = Tensor(rng.normal(size=(3, 2, 3, 3)), requires_grad=True, dtype=f64)
        b = Tensor(rng.normal(size=3), requires_grad=True, dtype=f64)
        record("conv2d", grad_check(lambda x, w, b: T.conv2d(x, w, b, stride=2, pad=1), [x, w, b]))

        x = Tensor(_point(rng, (3, 8)), requires_grad=True, dtype=f64)
        w = Tensor(rng.normal(size=(4, 3, 5)), requires_grad=True, dtype=f64)
        b = Tensor(rng.normal(size=4), requires_grad=True, dtype=f64)
        record("conv1d", grad_check(T.conv1d, [x, w, b]))

        x = Tensor(_point(rng, (3, 5)), requires_grad=True, dtype=f64)
        w = Tensor(rng.normal(size=(2, 3, 2)), requires_grad=True, dtype=f64)
        record("deconv1d", grad_check(T.deconv1d, [x, w]))

        x = Tensor(_point(rng, 7), requires_grad=True, dtype=f64)
        w = Tensor(rng.normal(size=(4, 7)), requires_grad=True, dtype=f64)
        b = Tensor(rng.normal(size=4), requires_grad=True, dtype=f64)
        record("dense", grad_check(T.dense, [x, w, b]))

        # keep leaky inputs away from the kink at 0
        x = Tensor(_point(rng, (4, 5), kink_margin=1e-3), requires_grad=True, dtype=f64)
        record("leaky_relu", grad_check(lambda x: T.leaky_relu(x, 0.2), [x]))

        x = Tensor(_point(rng, (6, 6)), requires_grad=True, dtype=f64)
        drop_seed = int(rng.integers(0, 2 ** 31))
        record("dropout", grad_check(
            lambda x: T.dropout(x, 0.3, RngStream(drop_seed, "dropout"), training=True), [x]))

        x = Tensor(_point(rng, (4, 3, 5)), requires_grad=True, dtype=f64)
        gm = Tensor(rng.normal(size=3), requires_grad=True, dtype=f64)
        bt = Tensor(rng.normal(size=3), requires_grad=True, dtype=f64)

        def bn_train(x, gm, bt):
            stats = T.RunningStats.zeros(3, dtype=f64)
            return T.batchnorm(x, gm, bt, stats, training=True)

        record("batchnorm", grad_check(bn_train, [x, gm, bt]))

        x = Tensor(_pool_safe(rng, (3, 8)), requires_grad=True, dtype=f64)
        record("maxpool1d", grad_check(T.maxpool1d, [x]))

        a = Tensor(_point(rng, (2, 6)), requires_grad=True, dtype=f64)
        c = Tensor(_point(rng, (3, 6)), requires_grad=True, dtype=f64)
        record("concat", grad_check(T.concat, [a, c]))

        p = Tensor(_point(rng, (4, 4)), requires_grad=True, dtype=f64)
        tgt = Tensor(rng.normal(size=(4, 4)), dtype=f64)
        record("mse", grad_check(lambda p: T.mse(p, tgt), [p]))

    return errors
