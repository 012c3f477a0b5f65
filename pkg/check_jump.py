"""Numerical check of the rank-1 coupling jump."""
import numpy as np

from starbdris import driver, model, stiefel, wmmse
from starbdris.scenario import (GeometryConfig, NoiseConfig, PowerConfig,
                                SystemDims, build_scenario)


def random_unitary(rng, n):
    z = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))[None, :]


def main():
    rng = np.random.default_rng(7)
    for trial in range(8):
        n = int(rng.integers(3, 9))
        dims = SystemDims(M=3, N=n, K_T=1, K_R=1)
        sc = build_scenario(GeometryConfig(rng_seed=100 + trial), dims,
                            PowerConfig(p_bs_dbm=20.0), NoiseConfig())
        res = driver.run_ao(sc, config=driver.SolverConfig(outer_max_iters=2))
        ris, pre = res.ris, res.precoder
        channels = model.effective_channels(sc, ris)
        u = wmmse.update_equalizers(sc, channels, pre)
        t = wmmse.update_weights(sc, channels, pre)
        aux = wmmse.WmmseAux(u=u, t=t)

        for transmissive in (False, True):
            sysb = stiefel.build_branch_system(sc, ris, pre, aux, transmissive)
            k = [j for j in range(dims.K)
                 if dims.is_transmissive(j) == transmissive][0]
            g = sc.g[k]
            r2 = float(np.real(g.conj() @ g))
            m_w = float(np.real(g.conj() @ (sysb.M @ g))) / r2 ** 2
            v = (sysb.B.conj().T @ g) / (2.0 * r2)

            # 1) reduction identity: f(Phi) == m y^H Q y + 2 Re y^H v
            worst = 0.0
            for _ in range(20):
                phi = random_unitary(rng, n)
                y = phi.conj().T @ g
                f_y = m_w * float(np.real(y.conj() @ (sysb.Q @ y))) \
                    + 2.0 * float(np.real(y.conj() @ v))
                f_phi = stiefel.branch_objective(sysb, phi)
                worst = max(worst, abs(f_y - f_phi) / max(1.0, abs(f_phi)))
            assert worst < 1e-10, worst

            # 2) jump vs long unguarded gradient descent from many starts
            phi0 = ris.phi_t if transmissive else ris.phi_r
            jump = driver._rank1_branch_jump(sc, transmissive, sysb, phi0, None)
            f0 = stiefel.branch_objective(sysb, phi0)
            fj = stiefel.branch_objective(sysb, jump) if jump is not None else f0
            best_gd = np.inf
            long_cfg = stiefel.LineSearchConfig(max_iters=800, grad_tol=1e-12)
            for s in range(3):
                start = phi0 if s == 0 else random_unitary(rng, n)
                pgd, _ = stiefel.optimize_branch(sysb, start, long_cfg)
                best_gd = min(best_gd, stiefel.branch_objective(sysb, pgd))
            scale = max(1.0, abs(best_gd))
            print(f"trial {trial} n={n} z={'T' if transmissive else 'R'} "
                  f"f0={f0:.9g} jump={fj:.9g} gd={best_gd:.9g} "
                  f"gap(jump-gd)/|gd|={(fj - best_gd) / scale:.3e} "
                  f"ident={worst:.1e}")
            # jump must match or beat the best descent basin
            assert fj <= best_gd + 1e-8 * scale, (fj, best_gd)
            if jump is not None:
                defect = np.linalg.norm(jump.conj().T @ jump - np.eye(n))
                assert defect < 1e-12, defect
    print("ALL OK")


if __name__ == "__main__":
    main()
