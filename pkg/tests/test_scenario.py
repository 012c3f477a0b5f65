"""Geometry, fading, and scenario-assembly tests."""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from starbdris.scenario import (
    SPEED_OF_LIGHT, GeometryConfig, NoiseConfig, PowerConfig, Scenario,
    SystemDims, build_scenario, dbm_to_watts, make_rng, pathloss,
    place_users, rician_channel,
)

GEO = GeometryConfig()


def test_place_users_ring_radius():
    dims = SystemDims(M=4, N=8, K_T=3, K_R=2)
    pos = place_users(GEO, dims, make_rng(1, 0))
    ris_xy = np.asarray(GEO.ris_position[:2])
    dist = np.linalg.norm(pos[:, :2] - ris_xy[None, :], axis=1)
    assert_allclose(dist, GEO.user_ring_radius_m, atol=1e-9)
    # all users sit at the surface height
    assert_allclose(pos[:, 2], GEO.ris_position[2])


def test_place_users_zone_sides():
    """Transmissive users land beyond the surface, reflective before it."""
    dims = SystemDims(M=4, N=8, K_T=5, K_R=5)
    pos = place_users(GEO, dims, make_rng(3, 0))
    assert np.all(pos[:5, 0] > GEO.ris_position[0])
    assert np.all(pos[5:, 0] < GEO.ris_position[0])


def test_place_users_empty_zone():
    dims = SystemDims(M=4, N=8, K_T=0, K_R=2)
    pos = place_users(GEO, dims, make_rng(1, 0))
    assert pos.shape == (2, 3)
    empty = place_users(GEO, SystemDims(M=4, N=8, K_T=0, K_R=0), make_rng(1, 0))
    assert empty.shape == (0, 3)


def test_place_users_deterministic():
    dims = SystemDims(M=4, N=8, K_T=2, K_R=2)
    a = place_users(GEO, dims, make_rng(7, 0))
    b = place_users(GEO, dims, make_rng(7, 0))
    assert np.array_equal(a, b)


def test_pathloss_exponent_scaling():
    """Doubling the distance at exponent 2 quarters the gain."""
    g1 = pathloss(25.0, 2.0, 3.5e9)
    g2 = pathloss(50.0, 2.0, 3.5e9)
    assert_allclose(g2, g1 / 4.0, rtol=1e-12)


def test_pathloss_reference_distance():
    """At 1 m the gain is exactly the free-space constant (lambda/4pi)^2."""
    for exponent in (2.0, 2.9, 3.5):
        lam = SPEED_OF_LIGHT / 3.5e9
        assert pathloss(1.0, exponent, 3.5e9) == (lam / (4.0 * np.pi)) ** 2


def test_pathloss_brute_force():
    got = pathloss(180.0, 2.0, 3.5e9)
    lam = SPEED_OF_LIGHT / 3.5e9
    want = (lam / (4.0 * np.pi)) ** 2 / 180.0 ** 2
    assert_allclose(got, want, rtol=1e-14)


def test_pathloss_monotone_in_distance():
    gains = [pathloss(d, 2.9, 3.5e9) for d in np.linspace(1.0, 500.0, 40)]
    assert np.all(np.diff(gains) < 0.0)


def test_pathloss_rejects_nonpositive_distance():
    with pytest.raises(ValueError):
        pathloss(0.0, 2.0, 3.5e9)
    with pytest.raises(ValueError):
        pathloss(-3.0, 2.0, 3.5e9)


def test_rician_los_limit():
    """kappa -> inf collapses onto sqrt(PL) times the LoS component."""
    rng = make_rng(11, 0)
    los = np.exp(1j * np.linspace(0.0, 3.0, 16))
    pl = 2.5e-7
    ch = rician_channel(1e12, los, pl, rng)
    assert np.linalg.norm(ch - np.sqrt(pl) * los) / np.linalg.norm(ch) < 1e-5


def test_rician_rayleigh_variance():
    """kappa = 0: pure scattering, per-entry power equals the path loss."""
    rng = make_rng(12, 0)
    pl = 0.37
    draws = rician_channel(0.0, np.ones(100_000), pl, rng)
    assert_allclose(np.mean(np.abs(draws) ** 2), pl, rtol=0.02)


def test_rician_3db_power_ratio():
    """kappa = 1.995 (about 3 dB): LoS-to-scatter power ratio 2:1."""
    kappa = 1.995
    rng = make_rng(13, 0)
    draws = rician_channel(kappa, np.ones(100_000), 1.0, rng)
    mean = np.mean(draws)
    var = np.mean(np.abs(draws - mean) ** 2)
    assert_allclose(np.abs(mean) ** 2 / var, kappa, rtol=0.02)


def test_rician_normalization():
    """E|entry|^2 = PL regardless of kappa (unit-modulus LoS)."""
    rng = make_rng(14, 0)
    pl = 3.3e-4
    for kappa in (0.5, 2.0, 10.0):
        draws = rician_channel(kappa, np.ones(100_000), pl, rng)
        assert_allclose(np.mean(np.abs(draws) ** 2), pl, rtol=0.02)


def test_rician_rejects_negative_kappa():
    with pytest.raises(ValueError):
        rician_channel(-0.1, np.ones(4), 1.0, make_rng(0, 0))


def test_build_scenario_noise_watts():
    sce = build_scenario(GEO, SystemDims(M=4, N=8, K_T=1, K_R=1),
                         PowerConfig(), NoiseConfig(sigma_user_dbm=-90.0,
                                                    sigma_ris_dbm=-90.0))
    assert np.all(sce.sigma2_user == 1e-12)
    assert np.all(sce.noise_ris == 1e-12)


def test_build_scenario_cell_caps():
    """10 dBm total budget split evenly across N=36 cells."""
    sce = build_scenario(GEO, SystemDims(M=4, N=36, K_T=1, K_R=1),
                         PowerConfig(p_max_dbm=10.0), NoiseConfig())
    assert sce.p_max_total == 0.01
    assert np.all(sce.p_max_cell == 0.01 / 36)
    assert sce.p_bs == dbm_to_watts(20.0)


def test_build_scenario_deterministic():
    dims = SystemDims(M=4, N=8, K_T=1, K_R=1)
    a = build_scenario(GeometryConfig(rng_seed=42), dims, PowerConfig(), NoiseConfig())
    b = build_scenario(GeometryConfig(rng_seed=42), dims, PowerConfig(), NoiseConfig())
    assert np.array_equal(a.G, b.G)
    assert np.array_equal(a.h, b.h)
    assert np.array_equal(a.g, b.g)
    c = build_scenario(GeometryConfig(rng_seed=43), dims, PowerConfig(), NoiseConfig())
    assert not np.array_equal(a.G, c.G)


def test_channel_and_solver_streams_differ():
    a = make_rng(5, 0).standard_normal(8)
    b = make_rng(5, 1).standard_normal(8)
    assert not np.array_equal(a, b)


def test_scenario_json_roundtrip():
    sce = build_scenario(GeometryConfig(rng_seed=9),
                         SystemDims(M=3, N=6, K_T=1, K_R=2),
                         PowerConfig(), NoiseConfig())
    back = Scenario.from_json(sce.to_json())
    assert back.dims == sce.dims
    assert np.array_equal(back.G, sce.G)
    assert np.array_equal(back.h, sce.h)
    assert np.array_equal(back.g, sce.g)
    assert np.array_equal(back.sigma2_user, sce.sigma2_user)
    assert np.array_equal(back.noise_ris, sce.noise_ris)
    assert back.p_bs == sce.p_bs
    assert back.p_max_total == sce.p_max_total
    assert np.array_equal(back.p_max_cell, sce.p_max_cell)
    assert back.rng_seed == sce.rng_seed
