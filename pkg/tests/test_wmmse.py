"""Inner-solver tests: equalizers, weights, and the beamformer subproblem.

Oracles: a scalar closed form, grid refinement for the equalizer, a
random-search bound for the constrained beamformer, and direct checks
of the KKT/stationarity conditions.
"""
import numpy as np
from numpy.testing import assert_allclose

from conftest import (
    mmse_state, random_aux, random_precoder, random_ris, synthetic_scenario,
)
from starbdris import model, wmmse

RNG = np.random.default_rng(77)


def _manual_channels(rows, fwd=None):
    rows = np.asarray(rows, dtype=complex)
    if fwd is None:
        fwd = np.zeros(rows.shape[0])
    return model.EffectiveChannels(rows=rows, forwarded_noise=np.asarray(fwd, float))


def _single_user_scenario(sigma2=1.0, m=1):
    return synthetic_scenario(np.random.default_rng(0), m=m, n=1, kt=0, kr=1,
                              sigma2=sigma2, noise_ris=0.0)


# ----------------------------------------------------------------------
# equalizers
# ----------------------------------------------------------------------

def test_equalizer_scalar_closed_form():
    """Unit channel and precoder at sigma^2 = 1: u = 1/2."""
    sce = _single_user_scenario(sigma2=1.0)
    ch = _manual_channels([[1.0]])
    pre = model.Precoder(W=np.array([[1.0]], dtype=complex))
    assert_allclose(wmmse.update_equalizers(sce, ch, pre), [0.5], rtol=1e-14)


def test_equalizer_zero_precoder():
    sce = synthetic_scenario(RNG, kt=1, kr=1)
    ris = random_ris(RNG, sce.dims.N)
    ch = model.effective_channels(sce, ris)
    pre = model.Precoder(W=np.zeros((sce.dims.M, sce.dims.K), dtype=complex))
    assert np.array_equal(wmmse.update_equalizers(sce, ch, pre),
                          np.zeros(sce.dims.K, dtype=complex))


def test_equalizer_grid_refinement_oracle():
    """2-D grid refinement on (Re u, Im u) down to 1e-6 boxes."""
    rng = np.random.default_rng(31)
    sce = synthetic_scenario(rng, m=2, n=3, kt=1, kr=1, sigma2=1.0,
                             noise_ris=0.1)
    ris = random_ris(rng, sce.dims.N)
    ch = model.effective_channels(sce, ris)
    pre = random_precoder(rng, sce.dims.M, sce.dims.K, sce.p_bs)
    u = wmmse.update_equalizers(sce, ch, pre)

    for k in range(sce.dims.K):
        lo_r, hi_r = -2.0, 2.0
        lo_i, hi_i = -2.0, 2.0
        best = None
        while (hi_r - lo_r) > 1e-7:
            re = np.linspace(lo_r, hi_r, 41)
            im = np.linspace(lo_i, hi_i, 41)
            cand = re[:, None] + 1j * im[None, :]
            vals = np.empty(cand.shape)
            for a in range(41):
                uk = np.array(u, copy=True)
                for b in range(41):
                    uk[k] = cand[a, b]
                    vals[a, b] = model.mse(sce, ch, pre, uk)[k]
            a, b = np.unravel_index(np.argmin(vals), vals.shape)
            best = cand[a, b]
            span_r = (hi_r - lo_r) / 40.0
            span_i = (hi_i - lo_i) / 40.0
            lo_r, hi_r = best.real - span_r, best.real + span_r
            lo_i, hi_i = best.imag - span_i, best.imag + span_i
        assert abs(u[k] - best) <= 1e-6 * max(1.0, abs(u[k]))


def test_equalizer_stationarity():
    """Perturbing any component of u by +-1e-4 cannot reduce the MSE."""
    rng = np.random.default_rng(32)
    sce = synthetic_scenario(rng, kt=1, kr=2)
    ris, ch, pre, aux = mmse_state(sce, rng=rng)
    base = model.mse(sce, ch, pre, aux.u)
    for k in range(sce.dims.K):
        for delta in (1e-4, -1e-4, 1e-4j, -1e-4j):
            u2 = np.array(aux.u, copy=True)
            u2[k] += delta
            assert model.mse(sce, ch, pre, u2)[k] >= base[k] - 1e-15


# ----------------------------------------------------------------------
# weights
# ----------------------------------------------------------------------

def test_weight_zero_sinr():
    """Desired stream off, interferer on: gamma = 0 so t = 1."""
    sce = synthetic_scenario(np.random.default_rng(0), m=2, n=1, kt=0, kr=2,
                             sigma2=1.0, noise_ris=0.0)
    ch = _manual_channels([[1.0, 0.0], [0.0, 1.0]])
    W = np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)  # user 0 silent
    t = wmmse.update_weights(sce, ch, model.Precoder(W=W))
    assert_allclose(t[0], 1.0, rtol=1e-14)


def test_weight_known_sinr():
    """gamma = 3 gives t = 4."""
    sce = _single_user_scenario(sigma2=1.0)
    ch = _manual_channels([[1.0]])
    pre = model.Precoder(W=np.array([[np.sqrt(3.0)]], dtype=complex))
    assert_allclose(wmmse.update_weights(sce, ch, pre), [4.0], rtol=1e-13)


def test_weight_times_mmse_is_one():
    rng = np.random.default_rng(33)
    sce = synthetic_scenario(rng, kt=2, kr=2)
    ris, ch, pre, aux = mmse_state(sce, rng=rng)
    eps = model.mse(sce, ch, pre, aux.u)
    assert_allclose(aux.t * eps, np.ones(sce.dims.K), rtol=1e-10)


# ----------------------------------------------------------------------
# curvature system
# ----------------------------------------------------------------------

def test_curvature_single_basis_channel():
    """One user, htilde = e_1, u = 1, t = 1: Q = e_1 e_1^H, rhs = e_1."""
    sce = synthetic_scenario(np.random.default_rng(0), m=3, n=1, kt=0, kr=1,
                             sigma2=1.0, noise_ris=0.0)
    rows = np.zeros((1, 3), dtype=complex)
    rows[0, 0] = 1.0
    ch = _manual_channels(rows)
    aux = wmmse.WmmseAux(u=np.array([1.0 + 0j]), t=np.array([1.0]))
    system = wmmse.build_curvature(sce, ch, aux)
    want_q = np.zeros((3, 3), dtype=complex)
    want_q[0, 0] = 1.0
    assert_allclose(system.Q, want_q, atol=1e-15)
    assert_allclose(system.rhs[:, 0], rows[0].conj(), atol=1e-15)


def test_curvature_zero_aux():
    sce = synthetic_scenario(RNG, kt=1, kr=1)
    ris = random_ris(RNG, sce.dims.N)
    ch = model.effective_channels(sce, ris)
    aux = wmmse.WmmseAux(u=np.zeros(sce.dims.K, dtype=complex),
                         t=np.ones(sce.dims.K))
    system = wmmse.build_curvature(sce, ch, aux)
    assert np.allclose(system.Q, 0.0)
    assert np.allclose(system.rhs, 0.0)


def test_curvature_hermitian_psd():
    rng = np.random.default_rng(34)
    sce = synthetic_scenario(rng, m=4, n=4, kt=1, kr=2)
    ris, ch, pre, aux = mmse_state(sce, rng=rng)
    system = wmmse.build_curvature(sce, ch, aux)
    assert np.max(np.abs(system.Q - system.Q.conj().T)) <= 1e-12
    assert np.linalg.eigvalsh(system.Q)[0] >= -1e-10


# ----------------------------------------------------------------------
# beamformer solve
# ----------------------------------------------------------------------

def test_beamformer_scalar_unconstrained():
    """q w = r with the cap slack: w = r/q and lambda = 0."""
    system = wmmse.CurvatureSystem(Q=np.array([[2.0 + 0j]]),
                                   rhs=np.array([[1.0 + 0j]]), p_bs=100.0)
    pre, lam = wmmse.solve_beamformers(system)
    assert_allclose(pre.W, [[0.5]], rtol=1e-12)
    assert lam == 0.0


def test_beamformer_scalar_binding():
    """Scalar binding cap: lambda* = |r|/sqrt(P) - q."""
    q, r, p = 1.0, 4.0, 2.0
    system = wmmse.CurvatureSystem(Q=np.array([[q + 0j]]),
                                   rhs=np.array([[r + 0j]]), p_bs=p)
    pre, lam = wmmse.solve_beamformers(system)
    want_lam = abs(r) / np.sqrt(p) - q
    assert_allclose(lam, want_lam, rtol=1e-6)
    assert abs(pre.power - p) <= 1e-6 * p


def test_beamformer_zero_rhs():
    system = wmmse.CurvatureSystem(Q=np.eye(3, dtype=complex),
                                   rhs=np.zeros((3, 2), dtype=complex),
                                   p_bs=1.0)
    pre, lam = wmmse.solve_beamformers(system)
    assert np.array_equal(pre.W, np.zeros((3, 2), dtype=complex))
    assert lam == 0.0


def test_beamformer_beats_random_search():
    """Subproblem value at the solve vs 10^4 random feasible precoders."""
    rng = np.random.default_rng(35)
    sce = synthetic_scenario(rng, m=4, n=4, kt=1, kr=1, p_bs=2.0)
    ris, ch, pre0, aux = mmse_state(sce, rng=rng)
    system = wmmse.build_curvature(sce, ch, aux)
    pre, lam = wmmse.solve_beamformers(system)
    ours = wmmse.subproblem_value(system, pre.W)
    m, K = system.rhs.shape
    for _ in range(10_000):
        W = rng.standard_normal((m, K)) + 1j * rng.standard_normal((m, K))
        W *= np.sqrt(system.p_bs * rng.uniform() / np.sum(np.abs(W) ** 2))
        assert wmmse.subproblem_value(system, W) >= ours - 1e-9 * abs(ours)


def test_beamformer_power_decreasing_in_multiplier():
    """||W(lambda)||_F^2 strictly decreases along a log-spaced ladder."""
    rng = np.random.default_rng(36)
    sce = synthetic_scenario(rng, m=4, n=4, kt=1, kr=2)
    ris, ch, pre0, aux = mmse_state(sce, rng=rng)
    system = wmmse.build_curvature(sce, ch, aux)
    lams = np.logspace(-4, 3, 10)
    powers = []
    for lam in lams:
        W = np.linalg.solve(system.Q + lam * np.eye(system.Q.shape[0]),
                            system.rhs)
        powers.append(float(np.sum(np.abs(W) ** 2)))
    assert all(p1 > p2 for p1, p2 in zip(powers, powers[1:]))


def test_block_optimality_chain():
    """J never increases across u -> t -> W updates from a random start."""
    rng = np.random.default_rng(37)
    sce = synthetic_scenario(rng, m=3, n=4, kt=1, kr=1, p_bs=2.0)
    ris = random_ris(rng, sce.dims.N)
    ch = model.effective_channels(sce, ris)
    pre = random_precoder(rng, sce.dims.M, sce.dims.K, sce.p_bs)
    aux = random_aux(rng, sce.dims.K)

    f0 = model.wmmse_objective(sce, ch, pre, aux.u, aux.t)
    u = wmmse.update_equalizers(sce, ch, pre)
    f1 = model.wmmse_objective(sce, ch, pre, u, aux.t)
    assert f1 <= f0 + 1e-9 * abs(f0)
    t = wmmse.update_weights(sce, ch, pre)
    f2 = model.wmmse_objective(sce, ch, pre, u, t)
    assert f2 <= f1 + 1e-9 * abs(f1)
    system = wmmse.build_curvature(sce, ch, wmmse.WmmseAux(u=u, t=t))
    pre2, _ = wmmse.solve_beamformers(system)
    f3 = model.wmmse_objective(sce, ch, pre2, u, t)
    assert f3 <= f2 + 1e-9 * abs(f2)
    assert pre2.power <= sce.p_bs * (1.0 + 1e-9)
