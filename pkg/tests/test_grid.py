import numpy as np
import pytest

from amv3d.errors import NonMonotoneLevels, NonPowerOfTwo, ShapeMismatch
from amv3d.grid import (AMVState, GridShape, ImageStack, ObservationSet, PhysicsConstants,
                        build_pressure_grid, make_rng, pack_theta, synthesize_observations,
                        theta_size, unpack_theta)


def test_pressure_increments_are_slab_thicknesses():
    grid = build_pressure_grid([1000, 950, 900, 800, 700])
    assert grid.K == 4
    np.testing.assert_array_equal(grid.increments, [50, 50, 100, 100])


@pytest.mark.parametrize("levels", [[1000, 1000, 900], [700, 800, 900], [1000, 900]])
def test_bad_levels_rejected(levels):
    with pytest.raises(NonMonotoneLevels):
        build_pressure_grid(levels)


def test_grid_shape_requires_powers_of_two():
    with pytest.raises(NonPowerOfTwo):
        GridShape(24, 32)
    s = GridShape(8, 16)
    assert s.m == 128
    # linear index runs along columns first
    assert s.position(17) == (1, 1)
    assert s.index(*s.position(77)) == 77


def test_state_pins_boundary_winds():
    w = np.zeros((5, 8, 8))
    w[0, 2, 2] = 1.0
    with pytest.raises(ValueError):
        AMVState(np.zeros((4, 2, 8, 8)), w, np.zeros((4, 3, 8, 8)))


def test_theta_roundtrip(rng):
    K, shape = 3, GridShape(8, 8)
    st = AMVState.zeros(K, shape)
    st.d[:] = rng.standard_normal(st.d.shape)
    st.w[1:-1] = rng.standard_normal((K - 1, 8, 8))
    st.c[:] = rng.standard_normal(st.c.shape)
    theta = pack_theta(st)
    assert theta.size == theta_size(K, shape.m) == K * 64 * 2 + (K - 1) * 64 + K * 3 * 64
    back = unpack_theta(theta, K, shape)
    for a, b in ((st.d, back.d), (st.w, back.w), (st.c, back.c)):
        np.testing.assert_array_equal(a, b)


def test_gamma_shape_checked():
    with pytest.raises(ShapeMismatch):
        PhysicsConstants(np.zeros((5, 2)))


def test_observations_sentinel_masked_entries(grid4):
    x = np.ones((4, 3, 8, 8))
    m0 = np.zeros((4, 8, 8), bool)
    m0[:, :4] = True
    obs = synthesize_observations(ImageStack(x, grid4), ImageStack(x, grid4), m0, ~m0, 0.0, seed=0)
    assert np.all(np.isnan(obs.y0[:, :, 4:]))
    assert np.all(obs.filled(0)[:, :, 4:] == 0.0)
    assert not obs.joint_mask.any()


def test_noise_is_seeded(grid4):
    x = np.zeros((4, 3, 8, 8))
    m = np.ones((4, 8, 8), bool)
    a = synthesize_observations(ImageStack(x, grid4), ImageStack(x, grid4), m, m, 0.1, seed=3)
    b = synthesize_observations(ImageStack(x, grid4), ImageStack(x, grid4), m, m, 0.1, seed=3)
    np.testing.assert_array_equal(a.y0, b.y0)
    assert abs(np.std(a.y0) - 0.1) < 0.01


def test_rng_is_reproducible():
    assert make_rng(5).random() == make_rng(5).random()


def test_observation_shapes_checked():
    with pytest.raises(ShapeMismatch):
        ObservationSet(np.zeros((2, 3, 4, 4)), np.zeros((2, 3, 4, 4)),
                       np.ones((2, 4, 8), bool), np.ones((2, 4, 4), bool))
