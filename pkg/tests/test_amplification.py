"""Per-cell gain subproblem: quadratic assembly and capped QP solve.

Brute-force oracles at N<=2 pin down the solver; the assembly is
checked against direct weighted-MSE evaluation on grids.
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from conftest import mmse_state, random_precoder, random_ris, synthetic_scenario
from starbdris import amplification, model

RNG = np.random.default_rng(4141)


def _weighted_mse_at_beta(sce, ris, pre, aux, beta):
    trial = ris.copy()
    trial.beta = np.asarray(beta, dtype=float)
    ch = model.effective_channels(sce, trial)
    return float(np.sum(aux.t * model.mse(sce, ch, pre, aux.u)))


def _scenario_qp(seed, n=4, **kw):
    rng = np.random.default_rng(seed)
    sce = synthetic_scenario(rng, m=2, n=n, kt=1, kr=1, **kw)
    ris, ch, pre, aux = mmse_state(sce, rng=rng)
    qp = amplification.assemble_amp_qp(sce, ris, pre, aux)
    return sce, ris, pre, aux, qp


# ----------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------

def test_assemble_zero_equalizers():
    rng = np.random.default_rng(1)
    sce = synthetic_scenario(rng, noise_ris=0.0)
    ris = random_ris(rng, sce.dims.N)
    pre = random_precoder(rng, sce.dims.M, sce.dims.K, sce.p_bs)
    from starbdris import wmmse
    aux = wmmse.WmmseAux(u=np.zeros(sce.dims.K, dtype=complex),
                         t=np.ones(sce.dims.K))
    qp = amplification.assemble_amp_qp(sce, ris, pre, aux)
    assert np.allclose(qp.S, 0.0)
    assert np.allclose(qp.p, 0.0)


def test_assemble_grid_oracle_single_cell():
    """objective(beta) equals the weighted MSE at 100 grid points, N=1."""
    sce, ris, pre, aux, qp = _scenario_qp(2, n=1)
    for b in np.linspace(1.0, 3.0, 100):
        beta = np.array([b])
        assert abs(qp.objective(beta)
                   - _weighted_mse_at_beta(sce, ris, pre, aux, beta)) <= 1e-9


def test_assemble_polarization_identity():
    sce, ris, pre, aux, qp = _scenario_qp(3, n=4)
    rng = np.random.default_rng(4)
    for _ in range(5):
        b1 = rng.uniform(0.0, 2.0, size=4)
        b2 = rng.uniform(0.0, 2.0, size=4)
        zero = np.zeros(4)
        lhs = (qp.objective(b1 + b2) - qp.objective(b1)
               - qp.objective(b2) + qp.objective(zero))
        assert abs(lhs - 2.0 * b1 @ qp.S @ b2) <= 1e-9


def test_assemble_grid_oracle_multi_cell():
    """Random beta vectors at N=4 must also match the direct evaluation."""
    sce, ris, pre, aux, qp = _scenario_qp(5, n=4)
    rng = np.random.default_rng(6)
    for _ in range(20):
        beta = rng.uniform(1.0, 2.5, size=4)
        assert abs(qp.objective(beta)
                   - _weighted_mse_at_beta(sce, ris, pre, aux, beta)) <= 1e-9


def test_assemble_invariants():
    sce, ris, pre, aux, qp = _scenario_qp(7, n=5)
    assert np.max(np.abs(qp.S - qp.S.T)) <= 1e-12
    assert np.linalg.eigvalsh(qp.S)[0] >= -1e-10
    for cap in [qp.cap_total, *qp.cap_cells]:
        assert np.max(np.abs(cap.C - cap.C.conj().T)) <= 1e-10
        assert np.linalg.eigvalsh(cap.C)[0] >= -1e-10


# ----------------------------------------------------------------------
# solve
# ----------------------------------------------------------------------

def _loose_caps(n, bound=1e9):
    cells = [amplification.QuadraticCap(C=np.eye(n), bound=bound)
             for _ in range(n)]
    total = amplification.QuadraticCap(C=np.eye(n), bound=bound)
    return cells, total


def test_solve_unconstrained_interior():
    """Interior optimum with slack caps: solver hits S^{-1} p."""
    rng = np.random.default_rng(8)
    R = rng.standard_normal((3, 3))
    S = R @ R.T + 0.5 * np.eye(3)
    target = np.array([1.7, 2.2, 1.4])
    p = S @ target
    cells, total = _loose_caps(3)
    qp = amplification.AmplificationQP(S=S, p=p, const=0.0,
                                       cap_cells=cells, cap_total=total)
    beta = amplification.solve_amp_qp(qp, np.ones(3))
    assert_allclose(beta, target, atol=1e-6)


def test_solve_single_cell_binding_total_cap():
    """N=1 with the total cap binding: beta = sqrt(bound / C11)."""
    S = np.array([[1.0]])
    p = np.array([5.0])  # unconstrained minimizer at 5
    cells = [amplification.QuadraticCap(C=np.array([[1.0]]), bound=1e6)]
    total = amplification.QuadraticCap(C=np.array([[2.0]]), bound=8.0)
    qp = amplification.AmplificationQP(S=S, p=p, const=0.0,
                                       cap_cells=cells, cap_total=total)
    beta = amplification.solve_amp_qp(qp, np.ones(1))
    assert_allclose(beta[0], np.sqrt(8.0 / 2.0), rtol=1e-9)
    assert qp.caps_ok(beta, slack=1e-9)


def _grid_best(qp, lo=1.0, hi=4.0, step=1e-3):
    xs = np.arange(lo, hi + step / 2, step)
    best_val = np.inf
    best = None
    C_tot, b_tot = qp.cap_total.C, qp.cap_total.bound
    for x1 in xs:
        pts = np.column_stack([np.full_like(xs, x1), xs])
        ok = np.einsum("ij,jk,ik->i", pts, C_tot, pts) <= b_tot
        for cap in qp.cap_cells:
            ok &= np.einsum("ij,jk,ik->i", pts, cap.C, pts) <= cap.bound
        if not np.any(ok):
            continue
        feas = pts[ok]
        vals = (np.einsum("ij,jk,ik->i", feas, qp.S, feas)
                - 2.0 * feas @ qp.p + qp.const)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best = feas[i]
    return best, best_val


def test_solve_two_cell_interior_vs_grid():
    """Interior optimum: two-sided objective agreement with a 1e-3 grid."""
    # eigenvalues in [0.5, 1.5] keep the grid discretization error < 1e-6
    U = np.linalg.qr(np.random.default_rng(9).standard_normal((2, 2)))[0]
    S = U @ np.diag([0.6, 1.4]) @ U.T
    target = np.array([2.3, 1.8])
    p = S @ target
    cells, total = _loose_caps(2)
    qp = amplification.AmplificationQP(S=S, p=p, const=1.0,
                                       cap_cells=cells, cap_total=total)
    beta = amplification.solve_amp_qp(qp, np.ones(2))
    g_beta, g_val = _grid_best(qp)
    assert np.max(np.abs(beta - g_beta)) <= 2e-3
    assert abs(qp.objective(beta) - g_val) <= 1e-6


def test_solve_two_cell_binding_vs_grid():
    """Binding per-cell cap: grid agreement plus the KKT hand oracle."""
    rng = np.random.default_rng(10)
    R = rng.standard_normal((2, 2))
    S = R @ R.T + 0.5 * np.eye(2)
    p = S @ np.array([3.6, 2.2])  # first coordinate pushed past its cap
    cells = [
        amplification.QuadraticCap(C=np.diag([1.0, 0.0]), bound=9.5),
        amplification.QuadraticCap(C=np.diag([0.0, 1.0]), bound=16.0),
    ]
    total = amplification.QuadraticCap(C=np.eye(2), bound=25.0)
    qp = amplification.AmplificationQP(S=S, p=p, const=0.0,
                                       cap_cells=cells, cap_total=total)
    beta = amplification.solve_amp_qp(qp, np.ones(2))
    assert qp.caps_ok(beta, slack=1e-9)

    # only cap 1 binds: beta_1 = sqrt(9.5), beta_2 minimizes the slice
    b1 = np.sqrt(9.5)
    b2 = (p[1] - S[1, 0] * b1) / S[1, 1]
    assert_allclose(beta, [b1, b2], rtol=1e-8)

    g_beta, g_val = _grid_best(qp)
    assert qp.objective(beta) <= g_val + 1e-6
    assert np.max(np.abs(beta - g_beta)) <= 2e-3


def test_solve_infeasible_entry_raises():
    cells, _ = _loose_caps(2)
    total = amplification.QuadraticCap(C=np.eye(2), bound=0.5)  # beta=1 violates
    qp = amplification.AmplificationQP(S=np.eye(2), p=np.zeros(2), const=0.0,
                                       cap_cells=cells, cap_total=total)
    with pytest.raises(amplification.InfeasibleBudgetError):
        amplification.solve_amp_qp(qp, np.ones(2))


# ----------------------------------------------------------------------
# properties
# ----------------------------------------------------------------------

def test_descent_and_feasibility_on_scenario():
    """Objective never worse than entry; emission caps hold afterwards."""
    checked = 0
    for seed in range(4):
        sce, ris, pre, aux, qp = _scenario_qp(100 + seed, n=4,
                                              p_max_total=40.0, p_bs=2.0)
        entry = ris.beta.copy()
        relaxed = not qp.caps_ok(entry, slack=1e-9)
        if relaxed:
            amplification.relax_caps_to_entry(qp, entry)
        f0 = qp.objective(entry)
        beta = amplification.solve_amp_qp(qp, entry)
        f1 = qp.objective(beta)
        assert f1 <= f0 + 1e-9 * max(1.0, abs(f0))
        assert qp.caps_ok(beta, slack=1e-9)
        if not relaxed:
            # model-level C1/C2 residuals within the configured budget
            ris.beta = beta
            report = model.feasibility_report(sce, ris, pre)
            assert max(np.max(report.cell_caps), report.total_cap) <= 1e-9
            checked += 1
    assert checked >= 2  # the budget must actually constrain most seeds


def test_objective_convex_along_segments():
    sce, ris, pre, aux, qp = _scenario_qp(11, n=4)
    rng = np.random.default_rng(12)
    for _ in range(10):
        a = rng.uniform(1.0, 2.0, size=4)
        b = rng.uniform(1.0, 2.0, size=4)
        mid = 0.5 * (a + b)
        second = qp.objective(a) - 2.0 * qp.objective(mid) + qp.objective(b)
        assert second >= -1e-9 * max(1.0, abs(qp.objective(mid)))
