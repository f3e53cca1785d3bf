from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
MNIST_IMAGES = ROOT / "data" / "mnist" / "mnist10k-images-idx3-ubyte.gz"
MNIST_LABELS = ROOT / "data" / "mnist" / "mnist10k-labels-idx1-ubyte.gz"

TRAIN_STEPS = 300
TRAIN_SEEDS = (0, 1, 2)
CACHE_NAME = "ganstego-train-300-v1"


@dataclass
class TrainedRun:
    seed: int
    directory: Path
    gen: object
    disc: object
    metrics: object


def ensure_run(cache_dir: Path, seed: int) -> TrainedRun:
    """Train (or reuse a finished) 300-step run for ``seed``.

    Runs are deterministic, so a completed run in the cache is the same
    run; set GANSTEGO_RETRAIN=1 to force a fresh one.
    """
    from ganstego.acgan.train import (TrainingConfig, TrainingMetrics, load_discriminator,
                                      load_generator, train)
    from ganstego.io import load_mnist

    d = cache_dir / f"seed{seed}"
    done = d / "metrics.csv"
    if os.environ.get("GANSTEGO_RETRAIN") == "1" or not done.exists():
        d.mkdir(parents=True, exist_ok=True)
        data = load_mnist(MNIST_IMAGES, MNIST_LABELS)
        _, _, metrics = train(data, TrainingConfig(steps=TRAIN_STEPS, seed=seed), checkpoint_dir=d)
        metrics.write_csv(str(done) + ".part")
        os.replace(str(done) + ".part", done)
    return TrainedRun(seed, d, load_generator(d / "generator.ckpt"),
                      load_discriminator(d / "discriminator.ckpt"), TrainingMetrics.read_csv(done))


def _cache(request) -> Path:
    return Path(request.config.cache.mkdir(CACHE_NAME))


@pytest.fixture(scope="session")
def trained(request):
    return ensure_run(_cache(request), TRAIN_SEEDS[0])


@pytest.fixture(scope="session")
def trained_runs(request, trained):
    return [trained] + [ensure_run(_cache(request), s) for s in TRAIN_SEEDS[1:]]


@pytest.fixture(scope="session")
def mnist():
    from ganstego.io import load_mnist

    return load_mnist(MNIST_IMAGES, MNIST_LABELS)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one summary line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (passed, detail)
    print(f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} | {detail}")


def pytest_collection_modifyitems(items):
    for item in items:
        if {"trained", "trained_runs"} & set(getattr(item, "fixturenames", ())):
            item.add_marker(pytest.mark.slow)
