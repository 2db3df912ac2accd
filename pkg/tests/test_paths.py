import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bsvi.model import make_forward
from bsvi.paths import BLOCK, CapacityError, TimeGrid, dump_paths_csv, generate

FWD = make_forward("identity")


def test_grid():
    g = TimeGrid(2.0, 8)
    assert g.h == 0.25 and g.times[-1] == 2.0 and g.t(4) == 1.0
    with pytest.raises(ValueError):
        TimeGrid(1.0, 0)
    with pytest.raises(ValueError):
        TimeGrid(0.0, 4)


def test_seeded_and_thread_independent():
    g = TimeGrid(1.0, 8)
    a = generate(g, FWD, 3 * BLOCK + 5, 1, seed=1, threads=1)
    b = generate(g, FWD, 3 * BLOCK + 5, 1, seed=1, threads=4)
    c = generate(g, FWD, 3 * BLOCK + 5, 1, seed=2)
    assert np.array_equal(a.dB, b.dB) and np.array_equal(a.X, b.X)
    assert not np.array_equal(a.dB, c.dB)


def test_prefix_stability_across_M():
    g = TimeGrid(1.0, 4)
    small = generate(g, FWD, 100, 1, seed=3)
    large = generate(g, FWD, 5000, 1, seed=3)
    assert np.array_equal(small.dB, large.dB[:100])


def test_increment_variance_and_readonly():
    g = TimeGrid(1.0, 16)
    ens = generate(g, make_forward("identity", dim=2), 40_000, 2, seed=0)
    assert ens.dB.shape == (40_000, 16, 2) and ens.X.shape == (40_000, 17, 2)
    assert abs(ens.dB.var() - g.h) < 0.03 * g.h
    with pytest.raises(ValueError):
        ens.dB[0, 0, 0] = 1.0


def test_antithetic_exact_zero_mean():
    ens = generate(TimeGrid(1.0, 4), FWD, 1000, 1, seed=0, antithetic=True)
    assert np.array_equal(ens.dB[0::2], -ens.dB[1::2])
    assert np.all(ens.dB.sum(axis=0) == 0.0)
    with pytest.raises(ValueError):
        generate(TimeGrid(1.0, 4), FWD, 999, 1, seed=0, antithetic=True)


@given(st.sampled_from([1, 2, 4, 8]))
@settings(max_examples=4, deadline=None)
def test_coarsen_keeps_states(factor):
    ens = generate(TimeGrid(1.0, 16), FWD, 50, 1, seed=5)
    c = ens.coarsen(factor)
    assert c.N == 16 // factor
    assert np.allclose(c.X, ens.X[:, ::factor])


def test_ou_forward_euler():
    fwd = make_forward("ou", dim=1, x0=1.0, theta=1.0, sigma=0.0)
    ens = generate(TimeGrid(1.0, 100), fwd, 4, 1, seed=0)
    assert np.allclose(ens.X[:, -1, 0], (1 - 0.01) ** 100)


def test_identity_forward_dimension_must_match():
    with pytest.raises(ValueError):
        generate(TimeGrid(1.0, 4), FWD, 10, 2, seed=0)


def test_capacity_and_dump(tmp_path):
    with pytest.raises(CapacityError):
        generate(TimeGrid(1.0, 10), FWD, 1000, 1, seed=0, max_bytes=1000)
    ens = generate(TimeGrid(1.0, 2), FWD, 3, 1, seed=0)
    path = dump_paths_csv(ens, tmp_path / "p.csv")
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "path,step,component,dB,X" and len(lines) == 1 + 3 * 3
    assert float(lines[1].split(",")[3]) == ens.dB[0, 0, 0]
