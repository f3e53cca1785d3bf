"""Source and class log-likelihoods of the ACGAN objective.

Both are log-likelihoods (to be maximized), so their values are <= 0.
Probabilities are clamped to ``[eps, 1 - eps]`` before every log.
"""

from __future__ import annotations

import numpy as np

from ..engine import ops
from ..engine.tensor import Tensor, no_grad
from .nets import check_labels

LOG_EPS = 1e-7


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64), dtype=np.float64)


def _safe_log(p: Tensor) -> Tensor:
    return ops.log(ops.clip(p, LOG_EPS, 1.0 - LOG_EPS))


def loss_source(p_real, p_fake) -> Tensor:
    """E[log P(real | x_real)] + E[log P(fake | x_fake)]."""
    p_real, p_fake = _as_tensor(p_real), _as_tensor(p_fake)
    return ops.mean(_safe_log(p_real)) + ops.mean(_safe_log(1.0 - p_fake))


def class_log_likelihood(logits, labels) -> Tensor:
    """E[log softmax(logits)[label]] over the batch."""
    logits = _as_tensor(logits)
    labels = check_labels(labels)
    if len(labels) != logits.shape[0]:
        raise ValueError(f"{len(labels)} labels for {logits.shape[0]} logit rows")
    return ops.mean(ops.pick(ops.log_softmax(logits, axis=1), labels))


def loss_class(logits_real, labels_real, logits_fake, labels_fake) -> Tensor:
    """E[log P(C = c | x_real)] + E[log P(C = c | x_fake)]."""
    return class_log_likelihood(logits_real, labels_real) + class_log_likelihood(logits_fake, labels_fake)


def gan_value(disc, gen, real_images, z, labels, training: bool = True) -> float:
    """Evaluate E[log D(x)] + E[log(1 - D(G(z)))] without touching any state.

    ``training`` selects batch statistics (the default) or running
    statistics inside batch norm.
    """
    with no_grad():
        fake = gen(labels, _as_tensor(z), training=training, update_stats=False)
        p_real, _ = disc(_as_tensor(real_images), training=training, update_stats=False)
        p_fake, _ = disc(fake, training=training, update_stats=False)
        return float(loss_source(p_real, p_fake).data)
