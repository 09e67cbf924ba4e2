from __future__ import annotations

import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from helpers import pinned_workspace, run_pipeline  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def pinned_run(tmp_path_factory) -> Path:
    """The pinned manifest run once through the whole pipeline; returns the manifest path."""
    manifest = pinned_workspace(tmp_path_factory.mktemp("pinned"))
    run_pipeline(manifest, ("simulate", "label", "featurize", "train", "evaluate", "route", "sweep", "report"))
    return manifest
