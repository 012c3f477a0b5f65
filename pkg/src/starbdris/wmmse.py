"""Weighted-MMSE blocks: equalizers, weights, and the precoder update.

The precoder subproblem is an M x M complex quadratic program per user
coupled only through the transmit power budget; it is solved in closed
form through the eigendecomposition of the shared curvature matrix, with
a bisection on the power multiplier when the budget binds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import EffectiveChannels, Precoder
from .scenario import Scenario

POWER_REL_TOL = 1e-9
BISECT_MAX_ITERS = 200
RIDGE_SCALE = 1e-12


@dataclass
class WmmseAux:
    """Scalar receive equalizers u and rate weights t, one per user."""

    u: np.ndarray  # (K,) complex
    t: np.ndarray  # (K,) positive reals


def update_equalizers(scenario: Scenario, channels: EffectiveChannels,
                      precoder: Precoder) -> np.ndarray:
    """MMSE equalizers u_k = (htilde_k^H w_k)^* / (sum_j |htilde_k^H w_j|^2
    + fwd_k + sigma_k^2)."""
    rec = channels.rows @ precoder.W
    denom = np.sum(np.abs(rec) ** 2, axis=1) + channels.forwarded_noise \
        + scenario.sigma2_user
    return np.conj(np.diag(rec)) / denom


def update_weights(scenario: Scenario, channels: EffectiveChannels,
                   precoder: Precoder) -> np.ndarray:
    """Optimal rate weights t_k = 1 / eps_k^mmse = 1 + sinr_k."""
    rec = channels.rows @ precoder.W
    p = np.abs(rec) ** 2
    sig = np.diag(p).copy()
    denom = p.sum(axis=1) - sig + channels.forwarded_noise + scenario.sigma2_user
    return 1.0 + sig / denom


@dataclass
class CurvatureSystem:
    """Quadratic data of the precoder subproblem.

    Objective: sum_k w_k^H Q w_k - 2 Re{rhs_k^H w_k} + const, subject to
    sum_k ||w_k||^2 <= p_bs.
    """

    Q: np.ndarray  # (M, M) Hermitian PSD, shared across users
    rhs: np.ndarray  # (M, K), rhs[:, k] = t_k conj(u_k) htilde_k
    p_bs: float


def build_curvature(scenario: Scenario, channels: EffectiveChannels,
                    aux: WmmseAux) -> CurvatureSystem:
    cols = channels.rows.conj().T  # htilde_k as columns
    scaled = cols * (aux.t * np.abs(aux.u) ** 2)[None, :]
    Q = scaled @ cols.conj().T
    Q = 0.5 * (Q + Q.conj().T)  # enforce exact Hermitian symmetry
    rhs = cols * (aux.t * aux.u.conj())[None, :]
    return CurvatureSystem(Q=Q, rhs=rhs, p_bs=scenario.p_bs)


def solve_beamformers(system: CurvatureSystem) -> tuple[Precoder, float]:
    """Power-constrained precoder update; returns (precoder, lambda).

    lambda = 0 whenever the unconstrained solution already fits the budget
    (complementary slackness); otherwise it is found by bisection so the
    power equality holds within POWER_REL_TOL.
    """
    M = system.Q.shape[0]
    if np.all(system.rhs == 0.0):
        return Precoder(W=np.zeros_like(system.rhs)), 0.0

    evals, evecs = np.linalg.eigh(system.Q)
    evals = np.clip(evals, 0.0, None)
    proj = evecs.conj().T @ system.rhs  # (M, K), coordinates of rhs

    def precoder_at(lam: float) -> np.ndarray:
        return evecs @ (proj / (evals + lam)[:, None])

    def power_at(lam: float) -> float:
        return float(np.sum(np.abs(proj) ** 2 / (evals + lam)[:, None] ** 2))

    # Unconstrained attempt (lambda = 0); regularize a singular curvature.
    lam_floor = 0.0
    if evals[0] <= 0.0:
        lam_floor = RIDGE_SCALE * float(np.trace(system.Q).real) / M
        if lam_floor <= 0.0:
            lam_floor = RIDGE_SCALE
    if power_at(lam_floor) <= system.p_bs:
        return Precoder(W=precoder_at(lam_floor)), 0.0

    lo, hi = 0.0, 1.0
    while power_at(hi) > system.p_bs:
        hi *= 2.0
        if hi > 1e30:
            raise FloatingPointError("power multiplier bracket failed to close")
    # hi always stays on the feasible side (power <= budget) so the
    # returned precoder never overshoots the transmit budget.
    for _ in range(BISECT_MAX_ITERS):
        lam = 0.5 * (lo + hi)
        p = power_at(max(lam, lam_floor))
        if p > system.p_bs:
            lo = lam
        else:
            hi = lam
            if system.p_bs - p <= POWER_REL_TOL * system.p_bs:
                break
    lam = max(hi, lam_floor)
    return Precoder(W=precoder_at(lam)), lam


def subproblem_value(system: CurvatureSystem, W: np.ndarray) -> float:
    """Quadratic objective of the precoder subproblem (without constants)."""
    quad = np.einsum("mk,mn,nk->", W.conj(), system.Q, W).real
    lin = 2.0 * np.sum(np.real(np.conj(system.rhs) * W))
    return float(quad - lin)
