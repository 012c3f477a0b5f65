"""Signal model for an amplifying dual-zone surface with cell coupling.

The surface applies, per cell i, an amplitude gain beta_i >= 1 and an
energy split varsigma_i in [0, 1] between the reflective branch
(coefficient varsigma_i) and the transmissive branch (sqrt(1 - varsigma_i^2)),
then each branch mixes all cells through its own N x N unitary coupling
matrix Phi.  Amplification injects noise with per-cell power noise_ris[i].

Branch response seen by a user in zone z:   Phi_z E_z A
with A = diag(beta), E_R = diag(varsigma), E_T = diag(sqrt(1 - varsigma^2)).
E_T is always derived from varsigma, never stored.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .scenario import Scenario

UNITARY_TOL = 1e-8


@dataclass
class RisState:
    """Surface configuration (beta, varsigma, Phi_R, Phi_T)."""

    beta: np.ndarray  # (N,) amplitude gains, >= lower bound (1 = passive)
    varsigma: np.ndarray  # (N,) reflective energy-split coefficients in [0, 1]
    phi_r: np.ndarray  # (N, N) unitary reflective coupling
    phi_t: np.ndarray  # (N, N) unitary transmissive coupling

    @property
    def e_r(self) -> np.ndarray:
        return self.varsigma

    @property
    def e_t(self) -> np.ndarray:
        return np.sqrt(np.clip(1.0 - self.varsigma ** 2, 0.0, None))

    def branch_split(self, transmissive: bool) -> tuple:
        """(Phi_z, e_z) for the requested zone."""
        if transmissive:
            return self.phi_t, self.e_t
        return self.phi_r, self.e_r

    def copy(self) -> "RisState":
        return RisState(self.beta.copy(), self.varsigma.copy(),
                        self.phi_r.copy(), self.phi_t.copy())


def identity_ris(n: int) -> RisState:
    """Unit gains, even split, identity couplings."""
    return RisState(beta=np.ones(n),
                    varsigma=np.full(n, 1.0 / np.sqrt(2.0)),
                    phi_r=np.eye(n, dtype=complex),
                    phi_t=np.eye(n, dtype=complex))


def unitarity_defect(phi: np.ndarray) -> float:
    n = phi.shape[0]
    return float(np.linalg.norm(phi.conj().T @ phi - np.eye(n)))


def validate_ris(ris: RisState, beta_lower: float = 1.0) -> None:
    """Structural checks; raises ValueError on violated invariants."""
    n = ris.beta.shape[0]
    if ris.varsigma.shape != (n,) or ris.phi_r.shape != (n, n) or ris.phi_t.shape != (n, n):
        raise ValueError("inconsistent surface dimensions")
    if np.any(ris.beta < beta_lower - 1e-12):
        raise ValueError("amplitude gain below lower bound")
    if np.any(ris.varsigma < -1e-12) or np.any(ris.varsigma > 1.0 + 1e-12):
        raise ValueError("split coefficient outside [0, 1]")
    for phi in (ris.phi_r, ris.phi_t):
        if unitarity_defect(phi) > UNITARY_TOL:
            raise ValueError("coupling matrix is not unitary within tolerance")


@dataclass
class Precoder:
    """Downlink beamformers, one column per user."""

    W: np.ndarray  # (M, K) complex

    @property
    def power(self) -> float:
        return float(np.sum(np.abs(self.W) ** 2))


def matched_filter_precoder(scenario: Scenario) -> Precoder:
    """Per-user matched filters to the direct channels, equal power split,
    scaled so the total transmit power is exactly p_bs."""
    K = scenario.dims.K
    W = np.zeros((scenario.dims.M, K), dtype=complex)
    for k in range(K):
        nrm = np.linalg.norm(scenario.h[k])
        if nrm > 0.0:
            W[:, k] = scenario.h[k] / nrm
        else:
            W[0, k] = 1.0
    W *= np.sqrt(scenario.p_bs / K)
    return Precoder(W=W)


@dataclass
class EffectiveChannels:
    """Per-user composite downlink channels.

    rows[k] is the row vector htilde_k^H = h_k^H + g_k^H Phi_z E_z A G for
    user k's zone z; forwarded_noise[k] is the amplifier-noise power
    reaching user k through the surface.
    """

    rows: np.ndarray  # (K, M) complex
    forwarded_noise: np.ndarray  # (K,) nonnegative watts


def forwarded_covariance(scenario: Scenario, precoder: Precoder) -> np.ndarray:
    """Covariance of the amplifier input v = G W s + n: G W W^H G^H + diag(noise)."""
    GW = scenario.G @ precoder.W
    return GW @ GW.conj().T + np.diag(scenario.noise_ris)


def effective_channels(scenario: Scenario, ris: RisState) -> EffectiveChannels:
    """Composite channels and forwarded amplifier-noise powers for all users."""
    dims = scenario.dims
    if scenario.G.shape != (dims.N, dims.M):
        raise ValueError("scenario channel dimensions are inconsistent")
    rows = np.zeros((dims.K, dims.M), dtype=complex)
    fwd = np.zeros(dims.K)
    for k in range(dims.K):
        phi, e_z = ris.branch_split(dims.is_transmissive(k))
        # g_k^H Phi_z, then scale by the diagonal branch response e_z * beta
        thru = (scenario.g[k].conj() @ phi) * (e_z * ris.beta)
        rows[k] = scenario.h[k].conj() + thru @ scenario.G
        fwd[k] = float(np.sum(np.abs(thru) ** 2 * scenario.noise_ris).real)
    return EffectiveChannels(rows=rows, forwarded_noise=fwd)


def sinr(scenario: Scenario, channels: EffectiveChannels, precoder: Precoder) -> np.ndarray:
    """Per-user SINR with forwarded amplifier noise in the denominator."""
    rec = channels.rows @ precoder.W  # rec[k, j] = htilde_k^H w_j
    p = np.abs(rec) ** 2
    sig = np.diag(p).copy()
    interf = p.sum(axis=1) - sig
    return sig / (interf + scenario.sigma2_user + channels.forwarded_noise)


def sum_rate(scenario: Scenario, channels: EffectiveChannels, precoder: Precoder) -> float:
    return float(np.sum(np.log2(1.0 + sinr(scenario, channels, precoder))))


def mse(scenario: Scenario, channels: EffectiveChannels, precoder: Precoder,
        equalizers: np.ndarray) -> np.ndarray:
    """Per-user symbol MSE under scalar receive equalizers u.

    eps_k = |u_k|^2 (sum_j |htilde_k^H w_j|^2 + sigma_k^2 + fwd_k)
            - 2 Re{u_k htilde_k^H w_k} + 1
    """
    rec = channels.rows @ precoder.W
    total = np.sum(np.abs(rec) ** 2, axis=1) + scenario.sigma2_user \
        + channels.forwarded_noise
    return (np.abs(equalizers) ** 2 * total
            - 2.0 * np.real(equalizers * np.diag(rec)) + 1.0)


def wmmse_objective(scenario: Scenario, channels: EffectiveChannels,
                    precoder: Precoder, equalizers: np.ndarray,
                    weights: np.ndarray) -> float:
    """sum_k (t_k eps_k - ln t_k); minimized by the alternating solver."""
    eps = mse(scenario, channels, precoder, equalizers)
    return float(np.sum(weights * eps - np.log(weights)))


def emission_powers(scenario: Scenario, ris: RisState, precoder: Precoder,
                    sigma_v: np.ndarray | None = None) -> np.ndarray:
    """Per-cell emitted powers, combining both branches.

    [P_out]_n = [Phi_R E_R A Sigma_v A E_R Phi_R^H
                 + Phi_T E_T A Sigma_v A E_T Phi_T^H]_nn
    """
    if sigma_v is None:
        sigma_v = forwarded_covariance(scenario, precoder)
    amp = ris.beta[:, None] * sigma_v * ris.beta[None, :]
    out = np.zeros(scenario.dims.N)
    for transmissive in (False, True):
        phi, e_z = ris.branch_split(transmissive)
        B = phi * e_z[None, :]
        out += np.einsum("ni,ij,nj->n", B, amp, B.conj()).real
    return out


@dataclass
class FeasibilityReport:
    """Signed residuals of the hardware constraints (<= tol means satisfied).

    cell_caps / total_cap: emitted power minus cap (watts).
    split_consistency: max |e_r^2 + e_t^2 - 1|.
    split_range: max distance of varsigma from [0, 1].
    coupling_r / coupling_t: Frobenius unitarity defects.
    gain_lower: max of (lower bound - beta).
    """

    cell_caps: np.ndarray
    total_cap: float
    split_consistency: float
    split_range: float
    coupling_r: float
    coupling_t: float
    gain_lower: float

    def max_residual(self) -> float:
        return float(max(np.max(self.cell_caps), self.total_cap,
                         self.split_consistency, self.split_range,
                         self.coupling_r, self.coupling_t, self.gain_lower))

    def to_json(self) -> str:
        return json.dumps({
            "cell_caps_w": self.cell_caps.tolist(),
            "total_cap_w": self.total_cap,
            "split_consistency": self.split_consistency,
            "split_range": self.split_range,
            "coupling_r": self.coupling_r,
            "coupling_t": self.coupling_t,
            "gain_lower": self.gain_lower,
            "max_residual": self.max_residual(),
        })


def feasibility_report(scenario: Scenario, ris: RisState, precoder: Precoder,
                       beta_lower: float = 1.0) -> FeasibilityReport:
    out = emission_powers(scenario, ris, precoder)
    e_r, e_t = ris.e_r, ris.e_t
    return FeasibilityReport(
        cell_caps=out - scenario.p_max_cell,
        total_cap=float(np.sum(out) - scenario.p_max_total),
        split_consistency=float(np.max(np.abs(e_r ** 2 + e_t ** 2 - 1.0))),
        split_range=float(np.max(np.maximum(ris.varsigma - 1.0, -ris.varsigma).clip(min=0.0))),
        coupling_r=unitarity_defect(ris.phi_r),
        coupling_t=unitarity_defect(ris.phi_t),
        gain_lower=float(np.max(beta_lower - ris.beta)),
    )
