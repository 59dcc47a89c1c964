from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from defectkit.imagetypes import Patch
from defectkit.rng import derive_rng


def pytest_runtest_logreport(report):
    """One visible pass/fail line per acceptance criterion."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    if hasattr(report, "wasxfail"):
        status = "EXPECTED-FAIL (documented erratum)" if report.skipped else "UNEXPECTED-PASS"
    elif report.passed:
        status = "PASS"
    elif report.skipped:
        status = "SKIP"
    else:
        status = "FAIL"
    name = report.nodeid.split("::")[-1]
    print(f"\n[ACCEPTANCE] {status} {name}", flush=True)


@pytest.fixture
def rng():
    return derive_rng(1234, (99,))


@pytest.fixture
def flat_patch():
    return Patch(pixels=np.full((256, 256), 128, dtype=np.uint8), modality="asm")


def make_patch(fill=128, size=256, modality="asm", noise_rng=None):
    if noise_rng is None:
        pixels = np.full((size, size), fill, dtype=np.uint8)
    else:
        pixels = noise_rng.integers(max(0, fill - 20), min(255, fill + 20) + 1,
                                    size=(size, size)).astype(np.uint8)
    return Patch(pixels=pixels, modality=modality)
