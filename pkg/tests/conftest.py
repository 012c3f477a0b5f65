"""Shared fixtures and small random-instance builders for the test suite.

The three session fixtures below are the expensive Monte-Carlo sweeps the
acceptance tests grade; they are built once and shared.  Everything else
is a cheap helper for synthetic unit-scale instances.
"""
import time

import numpy as np
import pytest

from starbdris import cli, driver, model, wmmse
from starbdris.scenario import (
    GeometryConfig, NoiseConfig, PowerConfig, Scenario, SystemDims,
    build_scenario,
)

# one line per acceptance criterion, printed after the run summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance_report():
    return ACCEPTANCE_LINES


# ----------------------------------------------------------------------
# instance builders
# ----------------------------------------------------------------------

def desk_scenario(seed, n=16, m=4, kt=1, kr=1, p_bs_dbm=20.0,
                  p_max_dbm=10.0) -> Scenario:
    """Default-geometry scenario at the desk-scale operating point."""
    return build_scenario(GeometryConfig(rng_seed=seed),
                          SystemDims(M=m, N=n, K_T=kt, K_R=kr),
                          PowerConfig(p_bs_dbm=p_bs_dbm, p_max_dbm=p_max_dbm),
                          NoiseConfig())


def synthetic_scenario(rng, m=2, n=4, kt=1, kr=1, sigma2=1.0,
                       noise_ris=0.1, p_bs=10.0, p_max_total=50.0) -> Scenario:
    """Unit-scale scenario with iid CN(0,1) channels.

    Keeps conditioning friendly for grid / Monte-Carlo oracles where the
    physical path losses would bury everything at 1e-9 scales.
    """
    k = kt + kr

    def cn(*shape):
        return (rng.standard_normal(shape)
                + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)

    return Scenario(
        dims=SystemDims(M=m, N=n, K_T=kt, K_R=kr),
        G=cn(n, m), h=cn(k, m), g=cn(k, n),
        sigma2_user=np.full(k, float(sigma2)),
        noise_ris=np.full(n, float(noise_ris)),
        p_bs=float(p_bs),
        p_max_total=float(p_max_total),
        p_max_cell=np.full(n, p_max_total / n),
        rng_seed=0,
    )


def random_unitary(rng, n) -> np.ndarray:
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def random_ris(rng, n, beta_hi=1.5) -> model.RisState:
    return model.RisState(
        beta=rng.uniform(1.0, beta_hi, size=n),
        varsigma=rng.uniform(0.05, 0.95, size=n),
        phi_r=random_unitary(rng, n),
        phi_t=random_unitary(rng, n))


def random_precoder(rng, m, k, power) -> model.Precoder:
    W = rng.standard_normal((m, k)) + 1j * rng.standard_normal((m, k))
    W *= np.sqrt(power / np.sum(np.abs(W) ** 2))
    return model.Precoder(W=W)


def random_aux(rng, k) -> wmmse.WmmseAux:
    u = (rng.standard_normal(k) + 1j * rng.standard_normal(k)) * 0.5
    return wmmse.WmmseAux(u=u, t=rng.uniform(0.5, 3.0, size=k))


def mmse_state(scenario, ris=None, rng=None):
    """(ris, channels, precoder, aux) with aux at its closed-form optimum."""
    if ris is None:
        ris = random_ris(rng, scenario.dims.N)
    channels = model.effective_channels(scenario, ris)
    precoder = random_precoder(rng, scenario.dims.M, scenario.dims.K,
                               scenario.p_bs)
    u = wmmse.update_equalizers(scenario, channels, precoder)
    t = wmmse.update_weights(scenario, channels, precoder)
    return ris, channels, precoder, wmmse.WmmseAux(u=u, t=t)


# ----------------------------------------------------------------------
# session-scoped Monte-Carlo sweeps (the expensive shared computations)
# ----------------------------------------------------------------------

DESK_SEEDS = 50


@pytest.fixture(scope="session")
def desk_suite():
    """50 active runs at (N=16, M=4, one user per zone, 20 dBm)."""
    t0 = time.perf_counter()
    results = [driver.run_ao(desk_scenario(seed), driver.SolverConfig())
               for seed in range(DESK_SEEDS)]
    return {"results": results, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def desk_suite_passive():
    """Passive twins of the desk suite (same seeds and channels)."""
    t0 = time.perf_counter()
    results = [driver.run_ao(desk_scenario(seed), driver.SolverConfig(),
                             mode="passive")
               for seed in range(DESK_SEEDS)]
    return {"results": results, "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def power_sweep_table():
    """Paired 50-seed sweep over BS power at N=36, M=10, one user/zone."""
    config = cli.ExperimentConfig(
        label="accept-power", sweep_parameter="p_bs_dbm",
        sweep_values=[10.0, 15.0, 20.0, 25.0, 30.0, 35.0],
        bs_antennas=10, cells=36, users_transmissive=1, users_reflective=1,
        num_seeds=50, master_seed=7241)
    t0 = time.perf_counter()
    rows = cli.run_experiment(config)
    return {"rows": rows, "summary": cli.summarize(rows),
            "seconds": time.perf_counter() - t0}


@pytest.fixture(scope="session")
def size_sweep_table():
    """Paired 50-seed sweep over the cell count at 20 dBm, M=10 fixed."""
    config = cli.ExperimentConfig(
        label="accept-size", sweep_parameter="cells",
        sweep_values=[16, 36, 64],
        bs_antennas=10, cells=36, users_transmissive=1, users_reflective=1,
        p_bs_dbm=20.0, num_seeds=50, master_seed=7242)
    t0 = time.perf_counter()
    rows = cli.run_experiment(config)
    return {"rows": rows, "summary": cli.summarize(rows),
            "seconds": time.perf_counter() - t0}
