"""Central finite-difference checks of every differentiable op.

Each case builds a scalar ``sum(op(inputs) * weights)`` with random weights
and compares the engine's gradient against ``(f(x + h) - f(x - h)) / 2h`` on
up to ``max_coords`` sampled coordinates per input, in float64.
Relative error is ``|a - n|_2 / max(|a|_2, |n|_2)`` over those coordinates.

A few inputs have a gradient that is zero by construction, e.g. the
generator's dense bias, which training-mode batch norm cancels. Both routes
then return roundoff only and a ratio is meaningless, so such inputs are
checked instead for ``max(|a|_2, |n|_2) < ZERO_TOLERANCE``.

A coordinate whose ``+h`` and ``-h`` evaluations put some LeakyReLU input on
different sides of zero straddles a kink; the difference quotient is not a
derivative there, so that coordinate is replaced by another one and counted
in ``skipped``.
"""

from __future__ import annotations

from dataclasses import dataclass
import contextlib
from typing import Callable, List, Sequence

import numpy as np

from . import ops
from .tensor import Tensor, precision

STEP = 1e-5
TOLERANCE = 1e-4
ZERO_TOLERANCE = 1e-6


@dataclass
class CheckResult:
    case: str
    seed: int
    input_name: str
    rel_error: float
    expect_zero: bool = False
    magnitude: float = 0.0
    skipped: int = 0

    @property
    def ok(self) -> bool:
        if self.expect_zero:
            return self.magnitude < ZERO_TOLERANCE
        return self.rel_error < TOLERANCE


def relative_error(a: np.ndarray, n: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(n))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(a - n) / scale)


@contextlib.contextmanager
def _sign_trace(trace: list):
    """Record the sign pattern of every LeakyReLU input while active."""
    original = ops.leaky_relu

    def traced(x, slope):
        trace.append(np.asarray(x.data >= 0))
        return original(x, slope)

    ops.leaky_relu = traced
    try:
        yield
    finally:
        ops.leaky_relu = original


def check_function(fn: Callable[[Sequence[Tensor]], Tensor], arrays: Sequence[np.ndarray],
                   names: Sequence[str], rng: np.random.Generator, h: float = STEP,
                   max_coords: int = 40):
    """Compare autodiff and finite differences for ``fn`` at ``arrays``.

    ``fn`` receives tensors and returns a scalar tensor. Returns one
    ``(name, rel_error, magnitude, skipped)`` tuple per input, ``magnitude``
    being the larger of the two gradient norms.
    """
    with precision(np.float64):
        leaves = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
        out = fn(leaves)
        grads = ops.gradients(out, leaves)
        results = []
        for k, (leaf, name) in enumerate(zip(leaves, names)):
            flat = leaf.data.reshape(-1)
            candidates = rng.permutation(flat.size)
            used, numeric, skipped = [], [], 0
            for c in candidates:
                if len(used) == max_coords:
                    break
                orig = flat[c]
                flat[c] = orig + h
                f_plus, signs_plus = _value(fn, leaves)
                flat[c] = orig - h
                f_minus, signs_minus = _value(fn, leaves)
                flat[c] = orig
                if any((a != b).any() for a, b in zip(signs_plus, signs_minus)):
                    skipped += 1
                    continue
                used.append(c)
                numeric.append((f_plus - f_minus) / (2 * h))
            analytic = grads[k].reshape(-1)[np.array(used, dtype=np.int64)]
            numeric = np.array(numeric)
            mag = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
            results.append((name, relative_error(analytic, numeric), float(mag), skipped))
        return results


def _value(fn, leaves):
    probe = [Tensor(leaf.data, requires_grad=False) for leaf in leaves]
    trace: list = []
    with _sign_trace(trace):
        value = float(fn(probe).data)
    return value, trace


def _away_from_zero(rng, shape, margin=0.1):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _weighted(out: Tensor, weights: np.ndarray) -> Tensor:
    return ops.sum(out * Tensor(weights, dtype=np.float64))


def _cases(rng: np.random.Generator):
    from ..acgan.losses import loss_class, loss_source
    from ..acgan.nets import Discriminator, Generator

    def elementwise(op, shape=(3, 5)):
        w = rng.normal(size=shape)
        return (lambda t: _weighted(op(t[0]), w)), [_away_from_zero(rng, shape)], ["x"]

    yield ("leaky_relu",) + elementwise(lambda x: ops.leaky_relu(x, 0.2))
    yield ("sigmoid",) + elementwise(ops.sigmoid)
    yield ("tanh",) + elementwise(ops.tanh)
    yield ("softmax",) + elementwise(lambda x: ops.softmax(x, axis=1))
    yield ("log_softmax",) + elementwise(lambda x: ops.log_softmax(x, axis=1))

    w = rng.normal(size=(4, 3))
    yield ("dense", lambda t: _weighted(ops.dense(t[0], t[1], t[2]), w),
           [rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=3)],
           ["input", "weight", "bias"])

    w = rng.normal(size=(2, 3, 3, 3))
    yield ("conv2d", lambda t: _weighted(ops.conv2d(t[0], t[1], stride=2, padding=1), w),
           [rng.normal(size=(2, 2, 6, 5)), rng.normal(size=(3, 2, 3, 3))], ["input", "kernel"])

    w = rng.normal(size=(2, 2, 8, 8))
    yield ("conv2d_transpose",
           lambda t: _weighted(ops.conv2d_transpose(t[0], t[1], stride=2, padding=1), w),
           [rng.normal(size=(2, 3, 4, 4)), rng.normal(size=(3, 2, 4, 4))], ["input", "kernel"])

    for training in (True, False):
        stats = ops.BatchNormStats(3, dtype=np.float64)
        stats.mean = rng.normal(size=3)
        stats.var = rng.uniform(0.5, 2.0, size=3)
        w = rng.normal(size=(4, 3, 2, 2))
        yield (f"batch_norm[{'train' if training else 'inference'}]",
               lambda t, st=stats, tr=training: _weighted(
                   ops.batch_norm(t[0], t[1], t[2], st, training=tr, update_stats=False), w),
               [rng.normal(size=(4, 3, 2, 2)), rng.uniform(0.5, 1.5, 3), rng.normal(size=3)],
               ["input", "gamma", "beta"])

    # full discriminator objective at reduced width
    with precision(np.float64):
        disc = Discriminator(rng, width=2, dtype=np.float64)
    names = list(disc.params)
    for p in disc.params.values():
        p.data = rng.normal(0.0, 0.5, size=p.shape)
    real = rng.uniform(-1, 1, size=(3, 1, 28, 28))
    fake = rng.uniform(-1, 1, size=(3, 1, 28, 28))
    y_real = rng.integers(0, 10, size=3)
    y_fake = rng.integers(0, 10, size=3)

    def d_objective(t):
        for name, leaf in zip(names, t):
            disc.params[name] = leaf
        pr, lr = disc(Tensor(real, dtype=np.float64), training=True, update_stats=False)
        pf, lf = disc(Tensor(fake, dtype=np.float64), training=True, update_stats=False)
        return -(loss_source(pr, pf) + loss_class(lr, y_real, lf, y_fake))

    yield ("discriminator", d_objective, [disc.params[n].data.copy() for n in names], names)

    with precision(np.float64):
        gen = Generator(rng, noise_dim=4, width=1, dtype=np.float64)
    gnames = list(gen.params)
    for p in gen.params.values():
        p.data = rng.normal(0.0, 0.3, size=p.shape)
    z = rng.uniform(-1, 1, size=(3, 4))
    labels = rng.integers(0, 10, size=3)
    wimg = rng.normal(size=(3, 1, 28, 28))

    def g_objective(t):
        for name, leaf in zip(gnames, t):
            gen.params[name] = leaf
        return _weighted(gen(labels, Tensor(z, dtype=np.float64), training=True, update_stats=False), wimg)

    yield ("generator", g_objective, [gen.params[n].data.copy() for n in gnames], gnames, {"fc.bias"})


def run_suite(seeds: Sequence[int] = range(20), max_coords: int = 40) -> List[CheckResult]:
    results = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for case, fn, arrays, names, *zero in _cases(rng):
            zero = zero[0] if zero else set()
            for name, err, mag, skip in check_function(fn, arrays, names, rng, max_coords=max_coords):
                results.append(CheckResult(case, seed, name, err, name in zero, mag, skip))
    return results
