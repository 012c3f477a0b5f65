"""Riemannian descent for the unitary branch-coupling matrices.

Each branch objective is quadratic-plus-linear on the unitary group,

    f_z(Phi) = tr(Phi^H M_z Phi Q_z) + Re tr(B_z^H Phi),

minimized by projected gradient descent with a QR retraction and Armijo
backtracking.  The inner product is the real part of the trace inner
product; the Euclidean gradient below is exact for it (finite-difference
checked), including the factor 2 on the quadratic term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Precoder, RisState
from .scenario import Scenario
from .wmmse import WmmseAux


@dataclass
class LineSearchConfig:
    initial_step: float = 1.0
    shrink: float = 0.5
    armijo_c1: float = 1e-4
    max_backtracks: int = 30
    grad_tol: float = 1e-6
    max_iters: int = 100


@dataclass
class BranchSystem:
    """Fixed data of one branch subproblem.

    Q: S_z S_z^H + C_z with S_z = E_z A G W and C_z = E_z A N A E_z (the
       forwarded signal-plus-noise seen through the branch, pre-coupling);
    M: sum_k t_k |u_k|^2 g_k g_k^H over the branch's users;
    B: sum_k 2 t_k g_k v_k^H collecting the linear interaction terms.
    """

    Q: np.ndarray  # (N, N) Hermitian PSD
    M: np.ndarray  # (N, N) Hermitian PSD
    B: np.ndarray  # (N, N) complex


def build_branch_system(scenario: Scenario, ris: RisState, precoder: Precoder,
                        aux: WmmseAux, transmissive: bool) -> BranchSystem:
    dims = scenario.dims
    _, e_z = ris.branch_split(transmissive)
    S = (e_z * ris.beta)[:, None] * (scenario.G @ precoder.W)  # (N, K)
    C = np.diag(e_z ** 2 * ris.beta ** 2 * scenario.noise_ris)
    Q = S @ S.conj().T + C
    Q = 0.5 * (Q + Q.conj().T)

    N = dims.N
    M = np.zeros((N, N), dtype=complex)
    B = np.zeros((N, N), dtype=complex)
    for k in range(dims.K):
        if dims.is_transmissive(k) != transmissive:
            continue
        g = scenario.g[k]
        d = scenario.h[k].conj() @ precoder.W  # direct-link inner products
        tk, uk = aux.t[k], aux.u[k]
        M += tk * np.abs(uk) ** 2 * np.outer(g, g.conj())
        v = np.abs(uk) ** 2 * (S @ d.conj()) - uk * S[:, k]
        B += 2.0 * tk * np.outer(g, v.conj())
    M = 0.5 * (M + M.conj().T)
    return BranchSystem(Q=Q, M=M, B=B)


def branch_objective(system: BranchSystem, phi: np.ndarray) -> float:
    # tr(Phi^H M Phi Q) = <Phi, M Phi Q>, tr(B^H Phi) = <B, Phi>
    mid = system.M @ phi @ system.Q
    quad = np.sum(phi.conj() * mid).real
    lin = np.sum(system.B.conj() * phi).real
    return float(quad + lin)


def euclidean_gradient(system: BranchSystem, phi: np.ndarray) -> np.ndarray:
    """Gradient of branch_objective under <X, Y> = Re tr(X^H Y)."""
    return 2.0 * system.M @ phi @ system.Q + system.B


def riemannian_gradient(phi: np.ndarray, egrad: np.ndarray) -> np.ndarray:
    """Project onto the tangent space of the unitary group at phi."""
    sym = phi.conj().T @ egrad
    sym = 0.5 * (sym + sym.conj().T)
    return egrad - phi @ sym


def retract(phi: np.ndarray, step: np.ndarray) -> np.ndarray:
    """QR retraction with the positive-real-diagonal sign convention; falls
    back to the polar factor if the QR factor is rank deficient."""
    q, r = np.linalg.qr(phi + step)
    d = np.diag(r)
    if np.any(np.abs(d) < 1e-12):
        u, _, vh = np.linalg.svd(phi + step)
        return u @ vh
    return q * (d / np.abs(d))[None, :]


def optimize_branch(system: BranchSystem, phi0: np.ndarray,
                    config: LineSearchConfig = LineSearchConfig(),
                    accept_step=None) -> tuple[np.ndarray, dict]:
    """Armijo-backtracked Riemannian descent from phi0.

    accept_step(candidate) -> bool may veto steps (used to hold emission
    caps); a vetoed step is treated like a failed Armijo test.  Returns
    (phi, info) with the trace of objective values and the worst
    unitarity defect seen across iterates.
    """
    phi = phi0.copy()

    def value_and_mid(p):
        mid = system.M @ p @ system.Q  # shared by objective and gradient
        quad = np.sum(p.conj() * mid).real
        lin = np.sum(system.B.conj() * p).real
        return float(quad + lin), mid

    f, mid = value_and_mid(phi)
    trace = [f]
    max_defect = _defect(phi)
    n_iters = 0
    step = config.initial_step
    for _ in range(config.max_iters):
        grad = riemannian_gradient(phi, 2.0 * mid + system.B)
        gnorm2 = float(np.sum(np.abs(grad) ** 2))
        if np.sqrt(gnorm2) <= config.grad_tol:
            break
        n_iters += 1
        # warm-started trial step (never above initial_step); backtracking
        # below keeps the Armijo guarantee for whatever step is accepted
        step = min(config.initial_step, 2.0 * step)
        accepted = False
        for _ in range(config.max_backtracks):
            cand = retract(phi, -step * grad)
            f_cand, mid_cand = value_and_mid(cand)
            if f_cand <= f - config.armijo_c1 * step * gnorm2 \
                    and (accept_step is None or accept_step(cand)):
                phi, f, mid = cand, f_cand, mid_cand
                trace.append(f)
                max_defect = max(max_defect, _defect(phi))
                accepted = True
                break
            step *= config.shrink
        if not accepted:
            break
    return phi, {"objective_trace": trace, "iterations": n_iters,
                 "max_unitarity_defect": max_defect}


def _defect(phi: np.ndarray) -> float:
    n = phi.shape[0]
    return float(np.linalg.norm(phi.conj().T @ phi - np.eye(n)))
