"""Shared fixtures: a small synthetic dataset plus tiny model configs.

The terminal-summary hook prints one PASS/FAIL line per acceptance test so
the acceptance outcome is readable at the end of any full run.
"""
from __future__ import annotations

from pathlib import Path

import pytest

from braingen.embeddings import synthetic_index
from braingen.schedule import build_linear_schedule
from braingen.store import open_archive
from braingen.synth import make_synthetic_dataset
from braingen.unet import DenoiserConfig

SEED = 11


@pytest.fixture(scope="session")
def dataset_paths(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    return make_synthetic_dataset(
        root, n_subjects=2, n_images=4, train_reps=2, test_reps=2,
        n_channels=8, n_timepoints=32, noise_std=0.1, seed=SEED,
    )


@pytest.fixture(scope="session")
def archive(dataset_paths):
    return open_archive(dataset_paths[0])


@pytest.fixture(scope="session")
def provider(archive):
    ids = sorted({r.image_id for r in archive.index})
    return synthetic_index(SEED, ids, 768)


@pytest.fixture(scope="session")
def montage_path(dataset_paths):
    return Path(dataset_paths[2])


@pytest.fixture()
def tiny_config():
    return DenoiserConfig(
        sample_shape=(8, 32), level_channels=(8, 8, 8, 8), heads=1,
        cross_attn_dim=768, time_embed_dim=8,
    )


@pytest.fixture()
def short_schedule():
    return build_linear_schedule(10, 1e-3, 0.2)


# --------------------------------------------------------------- reporting

_acceptance_reports: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid and report.when == "call":
        _acceptance_reports[report.nodeid.split("::")[-1]] = report.outcome


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_reports:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance_reports):
        outcome = _acceptance_reports[name]
        word = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{word}: {name}")
