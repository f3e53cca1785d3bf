"""Hide text in generated 8x8 tile grids and read it back.

One composite image carries one fragment: tile ``(r, c)`` is generated from
label ``8 * r + c`` of the fragment's 64-label sequence. Extraction
classifies every tile, reorders fragments by their in-band marker and
decodes them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import codec
from .acgan.train import class_probabilities, generate, labels_from_probabilities, sample_noise
from .codec import CodeDictionary, CodecError, ParityError

TILE = 28
GRID = 8
SIDE = TILE * GRID  # 224


class DuplicateSequenceError(CodecError):
    def __init__(self, duplicates: Sequence[int]):
        super().__init__(f"sequence number(s) received more than once: {sorted(duplicates)}")
        self.duplicates = sorted(duplicates)


def compose_tiles(images) -> np.ndarray:
    """Place 64 tiles in [-1, 1] row-major onto one 224 x 224 uint8 image."""
    x = np.asarray(getattr(images, "data", images), dtype=np.float64)
    if x.ndim == 3:
        x = x[:, None]
    if x.shape != (GRID * GRID, 1, TILE, TILE):
        raise ValueError(f"need {GRID * GRID} tiles of 1 x {TILE} x {TILE}, got {x.shape}")
    grid = x.reshape(GRID, GRID, TILE, TILE).transpose(0, 2, 1, 3).reshape(SIDE, SIDE)
    return np.clip(np.rint((grid + 1.0) * 127.5), 0, 255).astype(np.uint8)


def split_tiles(image: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Inverse of :func:`compose_tiles`: ``[64, 1, 28, 28]`` values in [-1, 1]."""
    img = np.asarray(image)
    if img.shape != (SIDE, SIDE):
        raise ValueError(f"composite must be {SIDE} x {SIDE}, got {img.shape}")
    tiles = img.reshape(GRID, TILE, GRID, TILE).transpose(0, 2, 1, 3).reshape(GRID * GRID, 1, TILE, TILE)
    return (tiles.astype(np.float64) / 127.5 - 1.0).astype(dtype)


Renderer = Callable[[np.ndarray, np.random.Generator], np.ndarray]


def generator_renderer(gen) -> Renderer:
    """Labels ``[64]`` -> generated tiles ``[64, 1, 28, 28]``, fresh noise per tile."""
    dtype = gen.params["fc.weight"].dtype.type

    def render(labels, rng):
        z = sample_noise(len(labels), gen.noise_dim, rng, dtype=dtype)
        return generate(gen, labels, z).data

    return render


def hide(text: str, dictionary: CodeDictionary, gen=None, rng: Optional[np.random.Generator] = None,
         ecc: bool = False, renderer: Optional[Renderer] = None) -> List[np.ndarray]:
    """One composite per fragment of ``text``.

    Tiles come from the generator ``gen`` unless another ``renderer`` is
    given. Empty text yields no images.
    """
    if renderer is None:
        if gen is None:
            raise ValueError("hide needs a generator or a renderer")
        renderer = generator_renderer(gen)
    rng = rng if rng is not None else np.random.default_rng()
    if not text:
        return []
    message = codec.split_message(text, dictionary, ecc=ecc)
    out = []
    for frag in message.fragments:
        seq = codec.encode_fragment(frag, dictionary, ecc=ecc)
        out.append(compose_tiles(renderer(seq.labels, rng)))
    return out


# A deterministic stand-in for the GAN: every tile is a flat grey level that
# encodes its label, and the matching classifier reads the level back. Used to
# test the codec/pipeline/channel path independently of training quality.

STAMP_LEVELS = np.linspace(-1.0, 1.0, 10)


def stamp_renderer(labels, rng=None) -> np.ndarray:
    labels = np.asarray(labels)
    return np.broadcast_to(STAMP_LEVELS[labels][:, None, None, None],
                           (len(labels), 1, TILE, TILE)).astype(np.float64)


def stamp_classifier(tiles: np.ndarray, sharpness: float = 200.0) -> np.ndarray:
    """Softmax over negative squared distance of each tile mean to the levels."""
    means = np.asarray(tiles, dtype=np.float64).reshape(len(tiles), -1).mean(axis=1)
    score = -sharpness * (means[:, None] - STAMP_LEVELS[None, :]) ** 2
    score -= score.max(axis=1, keepdims=True)
    e = np.exp(score)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class ExtractionReport:
    """Per-composite result. ``labels`` include any ECC substitutions."""

    raw_labels: np.ndarray
    confidences: np.ndarray
    seq_no: int
    status: str = "ok"            # ok | corrected | parity-error | decode-error
    tokens: List[str] = field(default_factory=list)
    error: Optional[str] = None
    substituted: List[int] = field(default_factory=list)
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.labels is None:
            self.labels = self.raw_labels

    @property
    def parity_failed(self) -> bool:
        return self.status in ("corrected", "parity-error")

    @property
    def decoded(self) -> bool:
        return self.status in ("ok", "corrected")

    @property
    def text(self) -> str:
        return "".join(self.tokens)


def retry_candidates(confidences: np.ndarray, k: int) -> list:
    """The ``k`` least confident payload tiles, ties broken by tile index."""
    payload = np.arange(codec.GROUP, codec.SEQUENCE_LENGTH)
    order = sorted(payload, key=lambda i: (confidences[i], i))
    return [int(i) for i in order[:k]]


def read_fragment(probs: np.ndarray, dictionary: CodeDictionary, ecc: bool = False,
                  max_retry: int = 2) -> ExtractionReport:
    """Decode one composite's tile probabilities, with parity-guided retry."""
    labels, conf = labels_from_probabilities(probs)
    seq_no = int("".join(map(str, labels[:codec.GROUP])))
    report = ExtractionReport(raw_labels=labels, confidences=conf, seq_no=seq_no)
    try:
        report.tokens = codec.decode_sequence(labels, dictionary, ecc=ecc).tokens
        return report
    except ParityError as exc:
        first_error = exc
    except CodecError as exc:
        report.status, report.error = "decode-error", str(exc)
        return report

    # second-best class at the k least confident payload tiles, k = 1, 2, ...
    runner_up = np.argsort(-probs, axis=1, kind="stable")[:, 1]
    for k in range(1, max_retry + 1):
        tiles = retry_candidates(conf, k)
        trial = labels.copy()
        trial[tiles] = runner_up[tiles]
        try:
            frag = codec.decode_sequence(trial, dictionary, ecc=ecc)
        except CodecError:
            continue
        report.labels, report.tokens = trial, frag.tokens
        report.status, report.substituted = "corrected", tiles
        return report
    report.status, report.error = "parity-error", str(first_error)
    return report


Classifier = Callable[[np.ndarray], np.ndarray]


def discriminator_classifier(disc) -> Classifier:
    """Tile batch ``[64, 1, 28, 28]`` -> class probabilities ``[64, 10]``."""
    return lambda tiles: class_probabilities(disc, tiles)


def extract(images: Sequence[np.ndarray], dictionary: CodeDictionary, disc=None,
            ecc: bool = False, classifier: Optional[Classifier] = None):
    """Recover the text from received composites in any order.

    Returns ``(text, reports)`` with reports sorted by sequence number.
    Fragments that fail to decode contribute nothing to the text but keep
    their report. Repeated sequence numbers raise
    :class:`DuplicateSequenceError`.
    """
    if classifier is None:
        if disc is None:
            raise ValueError("extract needs a discriminator or a classifier")
        dtype = disc.params["conv0.kernel"].dtype.type
        classifier = discriminator_classifier(disc)
    else:
        dtype = np.float64
    reports = [read_fragment(classifier(split_tiles(img, dtype=dtype)), dictionary, ecc=ecc)
               for img in images]
    return assemble(reports), sorted(reports, key=lambda r: r.seq_no)


def assemble(reports: Sequence[ExtractionReport]) -> str:
    """Concatenate decoded fragments in sequence-number order."""
    seen, dup = set(), set()
    for r in reports:
        (dup if r.seq_no in seen else seen).add(r.seq_no)
    if dup:
        raise DuplicateSequenceError(dup)
    ordered = sorted(reports, key=lambda r: r.seq_no)
    return "".join(r.text for r in ordered if r.decoded)
