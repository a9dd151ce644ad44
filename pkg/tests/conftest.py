import json
import os

import numpy as np
import pytest

from app.config import DegradationConfig, Settings, desk_schedule
from app.manifest import ManifestRecord
from app.sampling import identity_pattern, synthesize_dataset

# Small enough to train on in a unit test; still two templates per identity.
TINY_IDENTITIES = 3
TINY_PER_IDENTITY = 10


@pytest.hookimpl(tryfirst=True)
def pytest_configure(config):
    # Default to 'test' if not already set
    os.environ.setdefault("FQA_ENV", "test")
    # Unit tests run single-threaded unless asked otherwise
    os.environ.setdefault("FQA_JOBS", "1")


def make_record(image_id, identity="a", score=None, **fields):
    return ManifestRecord(image_id=image_id, path=f"{identity}/{image_id}.png", identity=identity,
                          score=score, **fields)


def scored_records(scores, identity="a"):
    return [make_record(f"{identity}{i:04d}", identity, float(s)) for i, s in enumerate(scores)]


def _reject_constant(token):
    raise ValueError(f"{token} is not valid JSON")


def strict_json(text):
    """json.loads that refuses NaN and Infinity."""
    return json.loads(text, parse_constant=_reject_constant)


@pytest.fixture
def face_image():
    """A clean 64x64 BGR synthetic identity."""
    return identity_pattern("id000", seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def settings():
    """Settings independent of the working directory's config.yaml."""
    return Settings(jobs=1)


@pytest.fixture
def fast_schedule():
    return desk_schedule(epochs=2, batch_size=8)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """(images_root, records) for a few synthetic identities, written once per session."""
    root = tmp_path_factory.mktemp("synth")
    records = synthesize_dataset(root, TINY_IDENTITIES, TINY_PER_IDENTITY,
                                 kinds=["gaussian_blur", "occlusion"],
                                 severities=[0.0, 0.5, 1.0], seed=7,
                                 degradation=DegradationConfig(), template_size=5)
    return root, records
