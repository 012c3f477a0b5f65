"""Energy-split update: cyclic coordinate descent over varsigma.

With (u, t, W, beta, Phi) fixed, the weighted-MSE objective decomposes as

    f(vs) = vs^T S_R vs - 2 Re{p_R^T vs}
          + et^T S_T et - 2 Re{p_T^T et} + const,    et = sqrt(1 - vs^2),

where each S_z is a Hadamard product of a branch-channel outer product
with the amplified forwarded covariance.  Each coordinate is updated by
trying a small closed-form candidate list and keeping the best strict
improvement of the global objective; objective and emission changes are
evaluated in O(N) per candidate through cached matrix-vector products.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Precoder, RisState, forwarded_covariance
from .scenario import Scenario
from .wmmse import WmmseAux

IMPROVE_SLACK = 1e-12
INTERIOR_LO = 0.1  # open interval bounds for the analytic candidates
INTERIOR_HI = 0.9
LOCAL_STEPS = (-0.2, -0.1, 0.1, 0.2)
MAX_SWEEPS = 20


@dataclass
class SplittingSystem:
    """Quadratic data of the split subproblem (see module docstring)."""

    S_R: np.ndarray  # (N, N) Hermitian PSD
    S_T: np.ndarray  # (N, N) Hermitian PSD
    p_R: np.ndarray  # (N,) complex
    p_T: np.ndarray  # (N,) complex
    const: float

    def objective(self, varsigma: np.ndarray) -> float:
        et = np.sqrt(np.clip(1.0 - varsigma ** 2, 0.0, None))
        val = np.real(varsigma @ self.S_R @ varsigma) - 2.0 * np.real(self.p_R @ varsigma)
        val += np.real(et @ self.S_T @ et) - 2.0 * np.real(self.p_T @ et)
        return float(val + self.const)


def assemble_splitting_system(scenario: Scenario, ris: RisState,
                              precoder: Precoder, aux: WmmseAux) -> SplittingSystem:
    dims = scenario.dims
    GW = scenario.G @ precoder.W
    AGW = ris.beta[:, None] * GW
    noise_amp = ris.beta ** 2 * scenario.noise_ris

    N = dims.N
    S = {True: np.zeros((N, N), dtype=complex), False: np.zeros((N, N), dtype=complex)}
    p = {True: np.zeros(N, dtype=complex), False: np.zeros(N, dtype=complex)}
    const = 0.0
    for k in range(dims.K):
        zone = dims.is_transmissive(k)
        phi = ris.phi_t if zone else ris.phi_r
        thru = scenario.g[k].conj() @ phi  # row of g_k^H Phi_z
        d = scenario.h[k].conj() @ precoder.W
        m = thru[:, None] * AGW  # column j: entrywise (g^H Phi) o (A G w_j)
        tk, uk = aux.t[k], aux.u[k]
        w_abs2 = tk * np.abs(uk) ** 2
        S[zone] += w_abs2 * (m @ m.conj().T)
        S[zone] += w_abs2 * np.diag(np.abs(thru) ** 2 * noise_amp)
        p[zone] += tk * uk * m[:, k] - w_abs2 * (m @ d.conj())
        const += w_abs2 * (float(np.sum(np.abs(d) ** 2)) + scenario.sigma2_user[k]) \
            - 2.0 * tk * np.real(uk * d[k]) + tk
    for zone in (True, False):
        S[zone] = 0.5 * (S[zone] + S[zone].conj().T)
    return SplittingSystem(S_R=S[False], S_T=S[True],
                           p_R=p[False], p_T=p[True], const=float(const))


def local_coefficients(system: SplittingSystem, varsigma: np.ndarray,
                       m: int) -> tuple[float, float, float, float]:
    """(s_r, s_t, r, t) of the single-coordinate restriction

        f_m(x) = s_r x^2 + r x + s_t (1 - x^2) + t sqrt(1 - x^2) + offset.
    """
    et = np.sqrt(np.clip(1.0 - varsigma ** 2, 0.0, None))
    s_r = float(np.real(system.S_R[m, m]))
    s_t = float(np.real(system.S_T[m, m]))
    r = 2.0 * float(np.real(system.S_R[m] @ varsigma - system.S_R[m, m] * varsigma[m]
                            - system.p_R[m]))
    t = 2.0 * float(np.real(system.S_T[m] @ et - system.S_T[m, m] * et[m]
                            - system.p_T[m]))
    return s_r, s_t, r, t


def build_candidates(s_r: float, s_t: float, r: float, t: float,
                     current: float) -> list[float]:
    """Boundary points, analytic interior stationary points if they land
    strictly inside (INTERIOR_LO, INTERIOR_HI), balance heuristic, and
    small local perturbations."""
    cands = [0.0, 1.0, current]
    if s_r != s_t:
        quad = -r / (2.0 * (s_r - s_t))
        if INTERIOR_LO < quad < INTERIOR_HI:
            cands.append(quad)
    if s_r > 0.0 and s_t > 0.0:
        cands.append(1.0 - s_t / (s_r + s_t))
    for delta in LOCAL_STEPS:
        x = current + delta
        if INTERIOR_LO < x < INTERIOR_HI:
            cands.append(x)
    return cands


class _SweepCache:
    """O(N) candidate evaluation state for one system + split vector."""

    def __init__(self, system: SplittingSystem, varsigma: np.ndarray):
        self.sys = system
        self.vs = varsigma.copy()
        self.et = np.sqrt(np.clip(1.0 - self.vs ** 2, 0.0, None))
        self.dot_r = system.S_R @ self.vs
        self.dot_t = system.S_T @ self.et
        self.f = system.objective(self.vs)

    def delta(self, m: int, new_vs: float) -> float:
        """Objective change if coordinate m moves to new_vs."""
        new_et = np.sqrt(max(0.0, 1.0 - new_vs ** 2))
        dv = new_vs - self.vs[m]
        de = new_et - self.et[m]
        srr = float(np.real(self.sys.S_R[m, m]))
        stt = float(np.real(self.sys.S_T[m, m]))
        d = 2.0 * float(np.real(self.dot_r[m] - srr * self.vs[m] - self.sys.p_R[m])) * dv
        d += srr * (new_vs ** 2 - self.vs[m] ** 2)
        d += 2.0 * float(np.real(self.dot_t[m] - stt * self.et[m] - self.sys.p_T[m])) * de
        d += stt * (new_et ** 2 - self.et[m] ** 2)
        return d

    def apply(self, m: int, new_vs: float) -> None:
        new_et = np.sqrt(max(0.0, 1.0 - new_vs ** 2))
        self.dot_r += self.sys.S_R[:, m] * (new_vs - self.vs[m])
        self.dot_t += self.sys.S_T[:, m] * (new_et - self.et[m])
        self.f += self.delta(m, new_vs)
        self.vs[m] = new_vs
        self.et[m] = new_et


def sweep_system(system: SplittingSystem, varsigma: np.ndarray,
                 max_sweeps: int = MAX_SWEEPS,
                 guard=None) -> tuple[np.ndarray, float, int]:
    """Coordinate-descent sweeps on an assembled system.

    guard, if given, must expose feasible(m, new_vs, new_et) -> bool (a
    side-effect-free veto; the driver uses it to keep emission caps
    satisfied) and commit(m, new_vs, new_et), called once per applied
    move.  Returns (varsigma, objective, sweeps_done); the objective
    never increases.
    """
    cache = _SweepCache(system, np.asarray(varsigma, dtype=float))
    sweeps = 0
    for _ in range(max_sweeps):
        sweeps += 1
        changed = False
        for m in range(len(cache.vs)):
            coeffs = local_coefficients(system, cache.vs, m)
            best_val, best_x = 0.0, None
            for x in build_candidates(*coeffs, current=cache.vs[m]):
                x = min(1.0, max(0.0, x))
                if x == cache.vs[m]:
                    continue
                dval = cache.delta(m, x)
                if dval < best_val - IMPROVE_SLACK:
                    if guard is not None and not guard.feasible(
                            m, x, np.sqrt(max(0.0, 1.0 - x ** 2))):
                        continue
                    best_val, best_x = dval, x
            if best_x is not None:
                if guard is not None:
                    guard.commit(m, best_x, np.sqrt(max(0.0, 1.0 - best_x ** 2)))
                cache.apply(m, best_x)
                changed = True
        if not changed:
            break
    return cache.vs, cache.f, sweeps
