"""Benign-adversarial channel: reordering, duplication and tile noise.

Noise is tile-wise: a corrupted tile gets one brightness offset whose
magnitude is uniform on ``[noise_low, noise_high]`` pixel levels. The sign is
random but flipped when it would push the tile mean outside 0..255, so every
corruption actually moves the tile.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import codec, pipeline
from .codec import CodecError
from .config import derive_seed


@dataclass
class ChannelConfig:
    seed: int = 0
    shuffle: bool = True
    duplicate_prob: float = 0.0
    corruption_rate: float = 0.0
    corrupt_tiles: int = 0
    # one stamp level is 255/9 ~ 28.3 pixels; this band moves a flat tile by
    # exactly one class with the true class as runner-up
    noise_low: float = 16.0
    noise_high: float = 26.0

    def __post_init__(self):
        if not 0.0 <= self.duplicate_prob <= 1.0:
            raise ValueError("duplicate_prob must lie in [0, 1]")
        if not 0.0 <= self.corruption_rate < 1.0:
            raise ValueError("corruption_rate must lie in [0, 1)")
        if not 0 <= self.corrupt_tiles <= codec.SEQUENCE_LENGTH - codec.GROUP:
            raise ValueError("corrupt_tiles must be between 0 and the payload tile count")
        if not 0.0 <= self.noise_low <= self.noise_high <= 255.0:
            raise ValueError("need 0 <= noise_low <= noise_high <= 255")


def _corrupt(img: np.ndarray, tiles: Sequence[int], cfg: ChannelConfig, rng) -> np.ndarray:
    out = img.astype(np.float64)
    t = pipeline.TILE
    for k in tiles:
        r, c = divmod(int(k), pipeline.GRID)
        block = out[r * t:(r + 1) * t, c * t:(c + 1) * t]
        mag = rng.uniform(cfg.noise_low, cfg.noise_high)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        mean = block.mean()
        if not 0.0 <= mean + sign * mag <= 255.0:
            sign = -sign
        block += sign * mag
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def apply_channel_traced(images: Sequence[np.ndarray], cfg: ChannelConfig,
                         rng: Optional[np.random.Generator] = None):
    """Like :func:`apply_channel` but also returns the source index of every output."""
    if len(images) == 0:
        raise ValueError("the channel needs at least one image")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    out, src = [], []
    payload = np.arange(codec.GROUP, codec.SEQUENCE_LENGTH)
    for i, img in enumerate(images):
        hit = set()
        if cfg.corruption_rate > 0:
            hit.update(np.flatnonzero(rng.random(codec.SEQUENCE_LENGTH) < cfg.corruption_rate).tolist())
        if cfg.corrupt_tiles:
            hit.update(rng.choice(payload, size=cfg.corrupt_tiles, replace=False).tolist())
        out.append(_corrupt(img, sorted(hit), cfg, rng) if hit else img)
        src.append(i)
    if cfg.duplicate_prob > 0:
        for i in range(len(images)):
            if rng.random() < cfg.duplicate_prob:
                out.append(out[i].copy())
                src.append(i)
    if cfg.shuffle:
        order = rng.permutation(len(out))
        out = [out[k] for k in order]
        src = [src[k] for k in order]
    return out, src


def apply_channel(images: Sequence[np.ndarray], cfg: ChannelConfig,
                  rng: Optional[np.random.Generator] = None) -> List[np.ndarray]:
    return apply_channel_traced(images, cfg, rng)[0]


@dataclass
class TrialResult:
    trial: int
    recovered: bool
    labels_correct: int
    labels_total: int
    ecc_detected: int
    ecc_corrected: int
    error: Optional[str] = None


@dataclass
class ReliabilityStats:
    rows: List[TrialResult] = field(default_factory=list)

    @property
    def trials(self) -> int:
        return len(self.rows)

    @property
    def recovery_rate(self) -> float:
        return sum(r.recovered for r in self.rows) / max(self.trials, 1)

    @property
    def label_accuracy(self) -> float:
        total = sum(r.labels_total for r in self.rows)
        return sum(r.labels_correct for r in self.rows) / total if total else 1.0

    @property
    def ecc_detected(self) -> int:
        return sum(r.ecc_detected for r in self.rows)

    @property
    def ecc_corrected(self) -> int:
        return sum(r.ecc_corrected for r in self.rows)

    def summary(self) -> str:
        return (f"trials {self.trials}, recovery {self.recovery_rate:.4f}, "
                f"label accuracy {self.label_accuracy:.4f}, "
                f"ecc detected {self.ecc_detected}, ecc corrected {self.ecc_corrected}")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["trial", "recovered", "labels_correct", "ecc_detected", "ecc_corrected"])
            for r in self.rows:
                w.writerow([r.trial, int(r.recovered), r.labels_correct, r.ecc_detected, r.ecc_corrected])


def evaluate_reliability(text: str, dictionary: codec.CodeDictionary, cfg: ChannelConfig,
                         trials: int, gen=None, disc=None, ecc: bool = False,
                         renderer=None, classifier=None) -> ReliabilityStats:
    """hide -> channel -> extract, ``trials`` times with independent seeds.

    Failures are counted per trial; the sweep never aborts on them.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    if renderer is None:
        renderer = pipeline.generator_renderer(gen)
    if classifier is None:
        classifier = pipeline.discriminator_classifier(disc)
    tile_dtype = disc.params["conv0.kernel"].dtype.type if disc is not None else np.float64
    message = codec.split_message(text, dictionary, ecc=ecc)
    truth = [codec.encode_fragment(f, dictionary, ecc=ecc).labels for f in message.fragments]

    stats = ReliabilityStats()
    for t in range(trials):
        hide_rng = np.random.default_rng(derive_seed(cfg.seed, f"hide-{t}"))
        chan_rng = np.random.default_rng(derive_seed(cfg.seed, f"channel-{t}"))
        sent = pipeline.hide(text, dictionary, rng=hide_rng, ecc=ecc, renderer=renderer)
        received, sources = apply_channel_traced(sent, cfg, chan_rng)
        reports = [pipeline.read_fragment(classifier(pipeline.split_tiles(img, dtype=tile_dtype)),
                                          dictionary, ecc=ecc) for img in received]
        correct = total = detected = corrected = 0
        for rep, s in zip(reports, sources):
            correct += int(np.sum(rep.raw_labels == truth[s]))
            total += codec.SEQUENCE_LENGTH
            detected += rep.parity_failed
            corrected += rep.status == "corrected"
        try:
            recovered_text = pipeline.assemble(reports)
            ok, err = recovered_text == text, None
        except CodecError as exc:
            ok, err = False, str(exc)
        stats.rows.append(TrialResult(t, ok, correct, total, detected, corrected, err))
    return stats
