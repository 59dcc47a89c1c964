from __future__ import annotations

import numpy as np
import pytest

from defectkit.rng import derive_rng


def test_same_address_is_bit_identical():
    a = derive_rng(42, (0,)).random(1000)
    b = derive_rng(42, (0,)).random(1000)
    assert np.array_equal(a, b)


def test_sibling_paths_diverge():
    a = derive_rng(42, (0,)).random(1000)
    b = derive_rng(42, (1,)).random(1000)
    assert not np.array_equal(a, b)
    # streams should look unrelated, not merely shifted
    assert abs(np.corrcoef(a, b)[0, 1]) < 0.2


def test_seed_sensitivity():
    a = derive_rng(42, ()).random(1000)
    b = derive_rng(43, ()).random(1000)
    assert not np.array_equal(a, b)


def test_nested_paths_are_independent_of_flat_paths():
    assert not np.array_equal(derive_rng(7, (1, 2)).random(100), derive_rng(7, (1,)).random(100))


def test_rejects_negative_inputs():
    with pytest.raises(ValueError):
        derive_rng(-1, ())
    with pytest.raises(ValueError):
        derive_rng(0, (-3,))
