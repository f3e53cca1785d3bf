"""ACGAN training: one discriminator ascent step, then two generator steps."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from ..engine import checkpoint, ops
from ..engine.optim import AdamState, adam_step
from ..engine.tensor import Tensor, default_dtype, no_grad
from .losses import _safe_log, class_log_likelihood, loss_class, loss_source
from .nets import NUM_CLASSES, Discriminator, Generator, Module, check_labels

log = logging.getLogger(__name__)

# 8 x 8 probe grid: row r holds eight copies of digit r
PROBE_LABELS = np.repeat(np.arange(8), 8)


@dataclass
class TrainingConfig:
    steps: int = 1000
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    noise_dim: int = 100
    seed: int = 0
    g_steps: int = 2
    probe_every: int = 10
    gen_width: int = 64
    disc_width: int = 16
    checkpoint_every: int = 0

    def __post_init__(self):
        for name in ("batch_size", "noise_dim", "g_steps", "probe_every", "gen_width", "disc_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.steps < 0 or self.checkpoint_every < 0:
            raise ValueError("steps and checkpoint_every must be non-negative")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2 for batch norm")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("betas must lie in (0, 1)")
        if self.lr < 0:
            raise ValueError("lr must be non-negative")


@dataclass
class MetricsRow:
    step: int
    d_loss: float
    g_loss: float
    probe_accuracy: Optional[float] = None


@dataclass
class TrainingMetrics:
    rows: List[MetricsRow] = field(default_factory=list)

    def append(self, row: MetricsRow) -> None:
        if self.rows and row.step <= self.rows[-1].step:
            raise ValueError(f"step {row.step} does not follow step {self.rows[-1].step}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    def probes(self) -> list:
        """``(step, accuracy)`` pairs for the steps where the probe ran."""
        return [(r.step, r.probe_accuracy) for r in self.rows if r.probe_accuracy is not None]

    def log_lines(self) -> list:
        return [f"step {r.step}, d_loss {r.d_loss:g}, g_loss {r.g_loss:g}" for r in self.rows]

    @classmethod
    def read_csv(cls, path) -> "TrainingMetrics":
        out = cls()
        with open(path, newline="") as f:
            for rec in csv.DictReader(f):
                acc = rec["probe_accuracy"]
                out.append(MetricsRow(int(rec["step"]), float(rec["d_loss"]), float(rec["g_loss"]),
                                      float(acc) if acc else None))
        return out

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["step", "d_loss", "g_loss", "probe_accuracy"])
            for r in self.rows:
                acc = "" if r.probe_accuracy is None else f"{r.probe_accuracy:.6f}"
                w.writerow([r.step, f"{r.d_loss:.6f}", f"{r.g_loss:.6f}", acc])


def sample_noise(count: int, dim: int, rng: np.random.Generator, dtype=None) -> Tensor:
    """Noise uniform on the open interval (-1, 1)."""
    if count < 1 or dim < 1:
        raise ValueError("count and dim must be positive")
    dtype = dtype or default_dtype()
    top = np.nextafter(dtype(1), dtype(0))
    u = rng.uniform(-1.0, 1.0, size=(count, dim)).astype(dtype)
    return Tensor(np.clip(u, -top, top))


def generate(gen: Generator, labels, z: Tensor) -> Tensor:
    """Inference-mode images for ``labels``; one noise row per label."""
    with no_grad():
        return gen(check_labels(labels), z, training=False)


def class_probabilities(disc: Discriminator, images) -> np.ndarray:
    images = images if isinstance(images, Tensor) else Tensor(images)
    with no_grad():
        _, logits = disc(images, training=False)
        return ops.softmax(logits, axis=1).data


def labels_from_probabilities(probs: np.ndarray):
    """Argmax labels (ties go to the smaller class) and their probabilities."""
    labels = np.argmax(probs, axis=1)
    return labels, probs[np.arange(len(labels)), labels]


def classify_labels(disc: Discriminator, images):
    """``(labels[N], confidences[N])`` read off the auxiliary classifier."""
    return labels_from_probabilities(class_probabilities(disc, images))


def discriminate(disc: Discriminator, images):
    images = images if isinstance(images, Tensor) else Tensor(images)
    with no_grad():
        prob, logits = disc(images, training=False)
        return prob.data, logits.data


class ACGAN:
    """Generator, discriminator and their optimizers."""

    def __init__(self, config: TrainingConfig, rng: Optional[np.random.Generator] = None):
        from ..config import derive_seed

        self.config = config
        rng = rng or np.random.default_rng(derive_seed(config.seed, "init"))
        self.gen = Generator(rng, noise_dim=config.noise_dim, width=config.gen_width)
        self.disc = Discriminator(rng, width=config.disc_width)
        self.opt_g = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.opt_d = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.step = 0


def train_step(model: ACGAN, real_images: np.ndarray, real_labels, rng: np.random.Generator) -> MetricsRow:
    gen, disc, cfg = model.gen, model.disc, model.config
    real_labels = check_labels(real_labels)
    real = Tensor(real_images)
    n = len(real_labels)

    # discriminator: ascend LS + LC with G held fixed
    z = sample_noise(n, cfg.noise_dim, rng)
    fake_labels = rng.integers(0, NUM_CLASSES, size=n)
    with no_grad():
        fake = gen(fake_labels, z, training=True)
    p_real, logits_real = disc(real, training=True)
    p_fake, logits_fake = disc(fake, training=True)
    d_obj = -(loss_source(p_real, p_fake) + loss_class(logits_real, real_labels, logits_fake, fake_labels))
    d_grads = ops.gradients(d_obj, disc.parameters())
    adam_step(disc.parameters(), d_grads, model.opt_d)

    with no_grad():
        p_real_now, logits_real_now = disc(real, training=True, update_stats=False)
        real_src = ops.mean(_safe_log(p_real_now)).item()
        real_cls = class_log_likelihood(logits_real_now, real_labels).item()

    # generator: D frozen, fresh noise each step, non-saturating source term
    g_loss = 0.0
    for _ in range(cfg.g_steps):
        z = sample_noise(n, cfg.noise_dim, rng)
        fake_labels = rng.integers(0, NUM_CLASSES, size=n)
        fake = gen(fake_labels, z, training=True)
        p_fake, logits_fake = disc(fake, training=True, update_stats=False)
        fake_cls = class_log_likelihood(logits_fake, fake_labels)
        g_obj = -(ops.mean(_safe_log(p_fake)) + fake_cls)
        g_grads = ops.gradients(g_obj, gen.parameters())
        disc.zero_grad()
        adam_step(gen.parameters(), g_grads, model.opt_g)
        ls = real_src + float(np.mean(np.log(np.clip(1.0 - p_fake.data, 1e-7, 1.0))))
        lc = real_cls + fake_cls.item()
        g_loss = -(lc - ls)

    model.step += 1
    return MetricsRow(step=model.step, d_loss=float(d_obj.data), g_loss=float(g_loss))


def probe_accuracy(model: ACGAN, z_probe: Tensor) -> float:
    images = generate(model.gen, PROBE_LABELS, z_probe)
    labels, _ = classify_labels(model.disc, images)
    return float(np.mean(labels == PROBE_LABELS))


def train(dataset, config: TrainingConfig, checkpoint_dir=None,
          on_step: Optional[Callable[[MetricsRow], None]] = None):
    """Run ``config.steps`` training steps over shuffled mini-batches.

    ``dataset`` needs ``images`` (N x 1 x 28 x 28 in [-1, 1]) and ``labels``.
    Returns ``(generator, discriminator, metrics)``.
    """
    from ..config import derive_seed

    images = np.asarray(dataset.images)
    labels = np.asarray(dataset.labels)
    if len(labels) == 0:
        raise ValueError("cannot train on an empty dataset")
    if images.ndim == 3:
        images = images[:, None]
    if len(images) != len(labels):
        raise ValueError(f"{len(images)} images but {len(labels)} labels")
    bs = min(config.batch_size, len(labels))
    if bs < 2:
        raise ValueError("dataset too small for a batch of two")

    model = ACGAN(config)
    noise_rng = np.random.default_rng(derive_seed(config.seed, "noise"))
    shuffle_rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    z_probe = sample_noise(len(PROBE_LABELS), config.noise_dim,
                           np.random.default_rng(derive_seed(config.seed, "probe")))
    metrics = TrainingMetrics()
    dtype = default_dtype()

    order = shuffle_rng.permutation(len(labels))
    cursor = 0
    for _ in range(config.steps):
        if cursor + bs > len(order):
            order = shuffle_rng.permutation(len(labels))
            cursor = 0
        idx = order[cursor:cursor + bs]
        cursor += bs
        row = train_step(model, images[idx].astype(dtype), labels[idx], noise_rng)
        if row.step % config.probe_every == 0:
            row.probe_accuracy = probe_accuracy(model, z_probe)
            log.info("step %d, d_loss %g, g_loss %g, probe %.3f",
                     row.step, row.d_loss, row.g_loss, row.probe_accuracy)
        metrics.append(row)
        if on_step is not None:
            on_step(row)
        if checkpoint_dir and config.checkpoint_every and row.step % config.checkpoint_every == 0:
            save_models(model, checkpoint_dir, suffix=f"-{row.step:05d}")
    if checkpoint_dir:
        save_models(model, checkpoint_dir)
    return model.gen, model.disc, metrics


def _meta(module: Module) -> dict:
    meta = {"meta.width": np.array([module.width], dtype=np.int64)}
    if isinstance(module, Generator):
        meta["meta.noise_dim"] = np.array([module.noise_dim], dtype=np.int64)
    return meta


def save_module(module: Module, path) -> None:
    arrays = dict(_meta(module))
    arrays.update(module.state_dict())
    checkpoint.save(path, arrays)


def save_models(model: ACGAN, directory, suffix: str = "") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_module(model.gen, directory / f"generator{suffix}.ckpt")
    save_module(model.disc, directory / f"discriminator{suffix}.ckpt")


def _split_meta(arrays: dict):
    meta = {k: int(v[0]) for k, v in arrays.items() if k.startswith("meta.")}
    state = {k: v for k, v in arrays.items() if not k.startswith("meta.")}
    return meta, state


def load_generator(path) -> Generator:
    meta, state = _split_meta(checkpoint.load(path))
    if "meta.noise_dim" not in meta:
        raise checkpoint.CheckpointError(f"{path} is not a generator checkpoint")
    dtype = state["fc.weight"].dtype.type
    gen = Generator(np.random.default_rng(0), noise_dim=meta["meta.noise_dim"],
                    width=meta["meta.width"], dtype=dtype)
    gen.load_state_dict(state)
    return gen


def load_discriminator(path) -> Discriminator:
    meta, state = _split_meta(checkpoint.load(path))
    if "meta.noise_dim" in meta or "conv0.kernel" not in state:
        raise checkpoint.CheckpointError(f"{path} is not a discriminator checkpoint")
    disc = Discriminator(np.random.default_rng(0), width=meta["meta.width"],
                         dtype=state["conv0.kernel"].dtype.type)
    disc.load_state_dict(state)
    return disc
