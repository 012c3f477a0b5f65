"""Scenario generation for a dual-zone surface-aided MU-MISO downlink.

Geometry: a base-station uniform linear array, a reconfigurable surface
that serves a reflective zone (base-station side) and a transmissive zone
(far side), and single-antenna users dropped on a ring around the surface.
Channels are Rician with line-of-sight steering components; large-scale
fading follows C0 * d^(-alpha) with C0 the free-space gain at 1 m.

All powers are linear watts internally; configs take dBm at the edges and
key names carry the unit.  Randomness comes from a counter-based Philox
generator so scenarios are bitwise reproducible from the integer seed.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s

# Spawn keys used to split one scenario seed into independent Philox
# streams: one for channel draws, one for solver-side initialization.
CHANNEL_STREAM = 0
SOLVER_STREAM = 1


def dbm_to_watts(p_dbm: float) -> float:
    return 10.0 ** ((p_dbm - 30.0) / 10.0)


def make_rng(seed: int, stream: int) -> np.random.Generator:
    """Philox generator for (seed, stream); same pair -> same draws."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence((seed, stream))))


@dataclass(frozen=True)
class SystemDims:
    """Array and user counts.

    Per-user arrays are ordered transmissive zone first (indices
    0..K_T-1) then reflective zone (K_T..K-1).
    """

    M: int  # base-station antennas
    N: int  # surface cells
    K_T: int  # users in the transmissive zone
    K_R: int  # users in the reflective zone

    @property
    def K(self) -> int:
        return self.K_T + self.K_R

    def is_transmissive(self, k: int) -> bool:
        return k < self.K_T


@dataclass(frozen=True)
class GeometryConfig:
    """Node placement and propagation constants."""

    bs_position: tuple = (0.0, 0.0, 10.0)  # m
    ris_position: tuple = (180.0, 0.0, 5.0)  # m
    user_ring_radius_m: float = 40.0  # horizontal distance user -> surface
    carrier_hz: float = 3.5e9
    pathloss_exp_direct: float = 2.9  # BS -> user
    pathloss_exp_ris: float = 2.0  # BS -> surface and surface -> user
    rician_kappa_db: float = 3.0
    rng_seed: int = 0


@dataclass(frozen=True)
class PowerConfig:
    p_bs_dbm: float = 20.0  # downlink transmit budget
    p_max_dbm: float = 10.0  # total surface emission budget; split evenly per cell


@dataclass(frozen=True)
class NoiseConfig:
    sigma_user_dbm: float = -90.0  # receiver noise power per user
    sigma_ris_dbm: float = -90.0  # amplifier noise power per surface cell


@dataclass(frozen=True)
class Scenario:
    """One channel realization plus budgets; treat as immutable.

    G: (N, M) BS -> surface channel.
    h: (K, M) direct BS -> user channels, one row per user.
    g: (K, N) surface -> user channels, one row per user.
    """

    dims: SystemDims
    G: np.ndarray
    h: np.ndarray
    g: np.ndarray
    sigma2_user: np.ndarray  # (K,) watts
    noise_ris: np.ndarray  # (N,) amplifier noise powers, watts
    p_bs: float  # watts
    p_max_total: float  # watts
    p_max_cell: np.ndarray  # (N,) per-cell emission caps, watts
    rng_seed: int

    def solver_rng(self) -> np.random.Generator:
        """Stream reserved for solver-side random initialization."""
        return make_rng(self.rng_seed, SOLVER_STREAM)

    def to_json(self) -> str:
        d = {
            "dims": {"M": self.dims.M, "N": self.dims.N,
                     "K_T": self.dims.K_T, "K_R": self.dims.K_R},
            "G": _c2pairs(self.G),
            "h": _c2pairs(self.h),
            "g": _c2pairs(self.g),
            "sigma2_user_w": self.sigma2_user.tolist(),
            "noise_ris_w": self.noise_ris.tolist(),
            "p_bs_w": self.p_bs,
            "p_max_total_w": self.p_max_total,
            "p_max_cell_w": self.p_max_cell.tolist(),
            "rng_seed": self.rng_seed,
        }
        return json.dumps(d)

    @staticmethod
    def from_json(text: str) -> "Scenario":
        d = json.loads(text)
        dims = SystemDims(**d["dims"])
        return Scenario(
            dims=dims,
            G=_pairs2c(d["G"]),
            h=_pairs2c(d["h"]),
            g=_pairs2c(d["g"]),
            sigma2_user=np.asarray(d["sigma2_user_w"], dtype=float),
            noise_ris=np.asarray(d["noise_ris_w"], dtype=float),
            p_bs=float(d["p_bs_w"]),
            p_max_total=float(d["p_max_total_w"]),
            p_max_cell=np.asarray(d["p_max_cell_w"], dtype=float),
            rng_seed=int(d["rng_seed"]),
        )


def _c2pairs(a: np.ndarray) -> list:
    """Complex array -> nested lists of [re, im] pairs."""
    return np.stack([a.real, a.imag], axis=-1).tolist()


def _pairs2c(lst: list) -> np.ndarray:
    a = np.asarray(lst, dtype=float)
    return a[..., 0] + 1j * a[..., 1]


def pathloss(distance_m: float, exponent: float, carrier_hz: float) -> float:
    """Linear large-scale power gain C0 * d^(-exponent).

    C0 = (lambda / 4 pi)^2 is the free-space gain at the 1 m reference.
    """
    if distance_m <= 0.0:
        raise ValueError(f"distance must be positive, got {distance_m}")
    lam = SPEED_OF_LIGHT / carrier_hz
    c0 = (lam / (4.0 * np.pi)) ** 2
    return c0 * distance_m ** (-exponent)


def place_users(geometry: GeometryConfig, dims: SystemDims,
                rng: np.random.Generator) -> np.ndarray:
    """Drop users on the ring around the surface; (K, 3) positions in m.

    Transmissive users (first K_T rows) land on the far side of the
    surface along the BS -> surface axis (x > ris_x); reflective users on
    the BS side (x < ris_x).  All at the surface height.
    """
    cx, cy, cz = geometry.ris_position
    r = geometry.user_ring_radius_m
    pos = np.zeros((dims.K, 3))
    # transmissive half-circle: angle in (-pi/2, pi/2) -> cos > 0
    th_t = rng.uniform(-np.pi / 2.0, np.pi / 2.0, size=dims.K_T)
    # reflective half-circle: angle in (pi/2, 3 pi/2) -> cos < 0
    th_r = rng.uniform(np.pi / 2.0, 3.0 * np.pi / 2.0, size=dims.K_R)
    th = np.concatenate([th_t, th_r])
    pos[:, 0] = cx + r * np.cos(th)
    pos[:, 1] = cy + r * np.sin(th)
    pos[:, 2] = cz
    return pos


def rician_channel(kappa_linear: float, los: np.ndarray, pathloss_gain: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Rician fade around a deterministic line-of-sight component.

    Entrywise sqrt(PL) * (sqrt(kappa/(1+kappa)) * los + sqrt(1/(1+kappa)) * w)
    with w iid CN(0, 1).  `los` should be unit-modulus entrywise so that
    E[|entry|^2] = pathloss_gain.
    """
    if kappa_linear < 0.0:
        raise ValueError("kappa must be nonnegative")
    shape = np.shape(los)
    w = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)
    mix = np.sqrt(kappa_linear / (1.0 + kappa_linear)) * los \
        + np.sqrt(1.0 / (1.0 + kappa_linear)) * w
    return np.sqrt(pathloss_gain) * mix


def _steering(n: int, cos_axis: float) -> np.ndarray:
    """ULA steering vector, half-wavelength spacing along the array axis."""
    return np.exp(1j * np.pi * np.arange(n) * cos_axis)


def build_scenario(geometry: GeometryConfig, dims: SystemDims,
                   powers: PowerConfig, noise: NoiseConfig) -> Scenario:
    """Draw one scenario: user drop, Rician channels, budgets in watts."""
    rng = make_rng(geometry.rng_seed, CHANNEL_STREAM)
    kappa = 10.0 ** (geometry.rician_kappa_db / 10.0)
    p_bs = np.asarray(geometry.bs_position, dtype=float)
    p_ris = np.asarray(geometry.ris_position, dtype=float)
    users = place_users(geometry, dims, rng)

    # Both arrays are modeled as linear along the y axis; steering phases
    # depend on the direction cosine with that axis.
    def unit(v):
        return v / np.linalg.norm(v)

    d_bs_ris = unit(p_ris - p_bs)
    dist_bs_ris = np.linalg.norm(p_ris - p_bs)
    los_g_mat = np.outer(_steering(dims.N, d_bs_ris[1]),
                         _steering(dims.M, d_bs_ris[1]).conj())
    pl_g_mat = pathloss(dist_bs_ris, geometry.pathloss_exp_ris, geometry.carrier_hz)
    G = rician_channel(kappa, los_g_mat, pl_g_mat, rng)

    h = np.zeros((dims.K, dims.M), dtype=complex)
    g = np.zeros((dims.K, dims.N), dtype=complex)
    for k in range(dims.K):
        d_bu = unit(users[k] - p_bs)
        dist_bu = np.linalg.norm(users[k] - p_bs)
        h[k] = rician_channel(
            kappa, _steering(dims.M, d_bu[1]),
            pathloss(dist_bu, geometry.pathloss_exp_direct, geometry.carrier_hz), rng)
        d_ru = unit(users[k] - p_ris)
        dist_ru = np.linalg.norm(users[k] - p_ris)
        g[k] = rician_channel(
            kappa, _steering(dims.N, d_ru[1]),
            pathloss(dist_ru, geometry.pathloss_exp_ris, geometry.carrier_hz), rng)

    p_max_total = dbm_to_watts(powers.p_max_dbm)
    return Scenario(
        dims=dims,
        G=G,
        h=h,
        g=g,
        sigma2_user=np.full(dims.K, dbm_to_watts(noise.sigma_user_dbm)),
        noise_ris=np.full(dims.N, dbm_to_watts(noise.sigma_ris_dbm)),
        p_bs=dbm_to_watts(powers.p_bs_dbm),
        p_max_total=p_max_total,
        p_max_cell=np.full(dims.N, p_max_total / dims.N),
        rng_seed=geometry.rng_seed,
    )
