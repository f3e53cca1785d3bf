"""Generator and discriminator networks.

Discriminator: four conv (3x3, stride 2, pad 1) + batch norm + leaky ReLU
blocks, 28 -> 14 -> 7 -> 4 -> 2, then two dense heads on the flattened
features: a sigmoid source head and a 10-way class head.

Generator: one-hot label concatenated to the noise, a dense layer of
``16 * 8 * width`` features (8192 at the default width 64) reshaped to
``8w x 4 x 4``, then four fractional-strided conv blocks::

    8w x 4x4  --k3 s2 p1-->  4w x 7x7
    4w x 7x7  --k4 s2 p1-->  2w x 14x14
    2w x 14x14 --k4 s2 p1--> w x 28x28
    w x 28x28 --k3 s1 p1-->  1 x 28x28 -> tanh

The first three blocks carry batch norm and leaky ReLU; the last feeds tanh
directly.
"""

from __future__ import annotations

from typing import Dict, Iterator, Tuple

import numpy as np

from ..engine import ops
from ..engine.ops import BatchNormStats, DimensionError
from ..engine.tensor import Tensor, default_dtype

NUM_CLASSES = 10
IMAGE_SIZE = 28
LEAKY_SLOPE = 0.2
INIT_STD = 0.02

# (kernel, stride, padding) per generator block; checked by the shape tests
GEN_BLOCKS = ((3, 2, 1), (4, 2, 1), (4, 2, 1), (3, 1, 1))


def _normal(rng, shape, dtype):
    return Tensor(rng.normal(0.0, INIT_STD, size=shape).astype(dtype), requires_grad=True)


def _ones(n, dtype):
    return Tensor(np.ones(n, dtype=dtype), requires_grad=True)


def _zeros(n, dtype):
    return Tensor(np.zeros(n, dtype=dtype), requires_grad=True)


class Module:
    """Named parameters plus batch-norm running statistics."""

    def __init__(self):
        self.params: Dict[str, Tensor] = {}
        self.stats: Dict[str, BatchNormStats] = {}

    def parameters(self) -> list:
        return list(self.params.values())

    def named_parameters(self) -> Iterator[Tuple[str, Tensor]]:
        return iter(self.params.items())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_dict(self) -> dict:
        out = {name: p.data for name, p in self.params.items()}
        for name, st in self.stats.items():
            out[f"{name}.running_mean"] = st.mean
            out[f"{name}.running_var"] = st.var
        return out

    def load_state_dict(self, arrays: dict) -> None:
        expected = set(self.state_dict())
        if set(arrays) != expected:
            missing = sorted(expected - set(arrays))
            extra = sorted(set(arrays) - expected)
            raise KeyError(f"checkpoint mismatch: missing {missing}, unexpected {extra}")
        for name, p in self.params.items():
            if arrays[name].shape != p.shape:
                raise DimensionError(f"{name}: checkpoint shape {arrays[name].shape} != {p.shape}")
            p.data = np.array(arrays[name], dtype=p.dtype)
        for name, st in self.stats.items():
            st.mean = np.array(arrays[f"{name}.running_mean"], dtype=st.mean.dtype)
            st.var = np.array(arrays[f"{name}.running_var"], dtype=st.var.dtype)

    def _bn(self, name, x, training, update_stats):
        return ops.batch_norm(x, self.params[f"{name}.gamma"], self.params[f"{name}.beta"],
                              self.stats[name], training=training, update_stats=update_stats)

    def _add_bn(self, name, channels, dtype):
        self.params[f"{name}.gamma"] = _ones(channels, dtype)
        self.params[f"{name}.beta"] = _zeros(channels, dtype)
        self.stats[name] = BatchNormStats(channels, dtype=dtype)


class Discriminator(Module):
    def __init__(self, rng: np.random.Generator, width: int = 16, dtype=None):
        super().__init__()
        dtype = dtype or default_dtype()
        self.width = width
        channels = [1, width, 2 * width, 4 * width, 8 * width]
        for i in range(4):
            self.params[f"conv{i}.kernel"] = _normal(rng, (channels[i + 1], channels[i], 3, 3), dtype)
            self._add_bn(f"bn{i}", channels[i + 1], dtype)
        side = IMAGE_SIZE
        for _ in range(4):
            side = (side + 2 - 3) // 2 + 1
        self.features = channels[-1] * side * side
        self.params["source.weight"] = _normal(rng, (self.features, 1), dtype)
        self.params["source.bias"] = _zeros(1, dtype)
        bound = 0.05
        self.params["class.weight"] = Tensor(
            rng.uniform(-bound, bound, size=(self.features, NUM_CLASSES)).astype(dtype),
            requires_grad=True)
        self.params["class.bias"] = _zeros(NUM_CLASSES, dtype)

    def __call__(self, images: Tensor, training: bool = False, update_stats: bool = True):
        """Return ``(source_prob[N], class_logits[N, 10])``."""
        if images.ndim != 4 or images.shape[1:] != (1, IMAGE_SIZE, IMAGE_SIZE):
            raise DimensionError(f"discriminator expects N x 1 x 28 x 28 images, got {images.shape}")
        h = images
        for i in range(4):
            h = ops.conv2d(h, self.params[f"conv{i}.kernel"], stride=2, padding=1)
            h = self._bn(f"bn{i}", h, training, update_stats)
            h = ops.leaky_relu(h, LEAKY_SLOPE)
        flat = ops.reshape(h, (h.shape[0], self.features))
        src = ops.dense(flat, self.params["source.weight"], self.params["source.bias"])
        prob = ops.sigmoid(ops.reshape(src, (h.shape[0],)))
        logits = ops.dense(flat, self.params["class.weight"], self.params["class.bias"])
        return prob, logits


class Generator(Module):
    def __init__(self, rng: np.random.Generator, noise_dim: int = 100, width: int = 64, dtype=None):
        super().__init__()
        dtype = dtype or default_dtype()
        self.noise_dim = noise_dim
        self.width = width
        self.channels = [8 * width, 4 * width, 2 * width, width, 1]
        self.dense_features = self.channels[0] * 4 * 4
        self.params["fc.weight"] = _normal(rng, (noise_dim + NUM_CLASSES, self.dense_features), dtype)
        self.params["fc.bias"] = _zeros(self.dense_features, dtype)
        self._add_bn("bn_fc", self.dense_features, dtype)
        for i in range(4):
            k = GEN_BLOCKS[i][0]
            self.params[f"deconv{i}.kernel"] = _normal(
                rng, (self.channels[i], self.channels[i + 1], k, k), dtype)
            if i < 3:
                self._add_bn(f"bn{i}", self.channels[i + 1], dtype)
        self.params["deconv3.bias"] = _zeros(1, dtype)

    def __call__(self, labels, z: Tensor, training: bool = False, update_stats: bool = True) -> Tensor:
        labels = check_labels(labels)
        if z.ndim != 2 or z.shape != (len(labels), self.noise_dim):
            raise DimensionError(
                f"noise must be {len(labels)} x {self.noise_dim} to match the labels, got {z.shape}")
        onehot = np.zeros((len(labels), NUM_CLASSES), dtype=z.dtype)
        onehot[np.arange(len(labels)), labels] = 1
        h = ops.concat([z, Tensor(onehot, dtype=z.dtype)], axis=1)
        h = ops.dense(h, self.params["fc.weight"], self.params["fc.bias"])
        h = ops.leaky_relu(self._bn("bn_fc", h, training, update_stats), LEAKY_SLOPE)
        h = ops.reshape(h, (len(labels), self.channels[0], 4, 4))
        for i, (_, stride, pad) in enumerate(GEN_BLOCKS):
            h = ops.conv2d_transpose(h, self.params[f"deconv{i}.kernel"], stride=stride, padding=pad)
            if i < 3:
                h = ops.leaky_relu(self._bn(f"bn{i}", h, training, update_stats), LEAKY_SLOPE)
        h = h + ops.reshape(self.params["deconv3.bias"], (1, 1, 1, 1))
        return ops.tanh(h)


def check_labels(labels) -> np.ndarray:
    arr = np.asarray(labels)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if arr.size and (not np.issubdtype(arr.dtype, np.integer) or arr.min() < 0
                     or arr.max() >= NUM_CLASSES):
        raise ValueError(f"class labels must be integers in 0..{NUM_CLASSES - 1}")
    return arr.astype(np.int64)
