"""Shared fixtures: cached diffusion priors and small run profiles.

Priors are expensive to train, so they are trained once and cached on disk
keyed by their training configuration; repeated pytest runs reuse the file.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import pytest
import torch

from varibody.config import MeshConfig, RunConfig
from varibody.guidance import (
    CorpusConfig,
    PriorTrainConfig,
    generate_corpus,
    load_prior,
    save_prior,
    train_toy_prior,
)

CACHE = Path(__file__).resolve().parent / ".cache"


def _cached_prior(corpus_cfg: CorpusConfig, train_cfg: PriorTrainConfig, seed: int):
    CACHE.mkdir(exist_ok=True)
    key = hashlib.sha256(
        json.dumps(
            {
                "corpus": vars(corpus_cfg) if not hasattr(corpus_cfg, "__dataclass_fields__")
                else {f: getattr(corpus_cfg, f) for f in corpus_cfg.__dataclass_fields__},
                "train": {f: getattr(train_cfg, f) for f in train_cfg.__dataclass_fields__},
                "seed": seed,
            },
            sort_keys=True,
        ).encode()
    ).hexdigest()[:16]
    path = CACHE / f"prior_{key}.ckpt"
    if path.exists():
        try:
            return load_prior(path)
        except Exception:
            path.unlink()
    corpus = generate_corpus(corpus_cfg)
    prior, history = train_toy_prior(corpus, train_cfg, torch.Generator().manual_seed(seed))
    save_prior(prior, path, history)
    return prior


@pytest.fixture(scope="session")
def toy_prior():
    """The default-quality prior used by guidance-sensitive tests."""
    return _cached_prior(CorpusConfig(), PriorTrainConfig(), seed=7)


@pytest.fixture(scope="session")
def fast_prior():
    """A small, quickly trained prior for plumbing and determinism tests."""
    return _cached_prior(
        CorpusConfig(count=64),
        PriorTrainConfig(steps=60, batch_size=8, hidden=16, min_improvement=0.0),
        seed=7,
    )


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(CorpusConfig(count=64))


def small_run_config(**overrides) -> RunConfig:
    """A fast finetuning profile for plumbing tests."""
    base = dict(
        iterations=3,
        resolution=(32, 16),
        samples_per_ray=8,
        corpus=CorpusConfig(count=64),
        prior=PriorTrainConfig(steps=60, batch_size=8, hidden=16, min_improvement=0.0),
        mesh=MeshConfig(
            grid_resolution=15, iterations=2, render_resolution=48, turntable_views=3
        ),
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture()
def run_config():
    return small_run_config()
