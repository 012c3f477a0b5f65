"""Per-cell amplification update: a box- and cap-constrained convex QP.

With everything else held fixed the weighted-MSE objective is a real
quadratic in the gain vector beta, and the per-cell / total emission caps
are convex quadratic constraints built from the forwarded covariance via
Hadamard-product identities.  The solver is a log-barrier interior-point
method: damped Newton steps on the barrier-augmented objective with a
shrinking barrier weight.  Gradient steps scaled back to the feasible
set stall on curved cap boundaries, so the barrier is what actually
reaches the brute-force optimum at oracle tolerances; the returned point
is never worse than the entry gains.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Precoder, RisState, forwarded_covariance
from .scenario import Scenario
from .wmmse import WmmseAux

MAX_ITERS = 500
MAX_BACKTRACKS = 40


class InfeasibleBudgetError(RuntimeError):
    """Raised when even unit gains violate the emission caps; the caller
    must shrink the precoder or raise the caps."""


@dataclass
class QuadraticCap:
    """Constraint beta^T C beta <= bound, C real symmetric PSD."""

    C: np.ndarray  # (N, N)
    bound: float

    def value(self, beta: np.ndarray) -> float:
        return float(beta @ self.C @ beta)

    def residual(self, beta: np.ndarray) -> float:
        return self.value(beta) - self.bound


@dataclass
class AmplificationQP:
    """Objective beta^T S beta - 2 p^T beta + const, minimizer S^{-1} p
    when unconstrained; cap_cells from the per-cell emission limits,
    cap_total from the aggregate one."""

    S: np.ndarray  # (N, N) real symmetric PSD
    p: np.ndarray  # (N,)
    const: float
    cap_cells: list
    cap_total: QuadraticCap
    beta_lower: float = 1.0

    def objective(self, beta: np.ndarray) -> float:
        return float(beta @ self.S @ beta - 2.0 * self.p @ beta + self.const)

    def caps_ok(self, beta: np.ndarray, slack: float = 1e-12) -> bool:
        if self.cap_total.residual(beta) > slack * max(1.0, self.cap_total.bound):
            return False
        return all(c.residual(beta) <= slack * max(1.0, c.bound) for c in self.cap_cells)


def assemble_amp_qp(scenario: Scenario, ris: RisState, precoder: Precoder,
                    aux: WmmseAux, beta_lower: float = 1.0,
                    cap_scale: float = 1.0) -> AmplificationQP:
    """Freeze (u, t, W, varsigma, Phi) and expose the gain subproblem.

    cap_scale < 1 tightens the caps (the solver uses a small margin so the
    other blocks keep room to move without leaving the true feasible set).
    """
    dims = scenario.dims
    sigma_v = forwarded_covariance(scenario, precoder)
    GW = scenario.G @ precoder.W  # (N, K)

    S = np.zeros((dims.N, dims.N))
    p = np.zeros(dims.N)
    const = 0.0
    for k in range(dims.K):
        phi, e_z = ris.branch_split(dims.is_transmissive(k))
        thru = (scenario.g[k].conj() @ phi) * e_z  # row of g_k^H Phi_z E_z
        # htilde_k^H w_j = d_j + m_j^T beta, linear in the gains
        d = scenario.h[k].conj() @ precoder.W  # (K,)
        m = thru[:, None] * GW  # (N, K), column j = m_j
        tk, uk = aux.t[k], aux.u[k]
        w_abs2 = tk * np.abs(uk) ** 2
        S += w_abs2 * (m @ m.conj().T).real
        S += w_abs2 * np.diag(np.abs(thru) ** 2 * scenario.noise_ris)
        # linear terms: |d_j + m_j beta|^2 cross parts and -2 Re{u_k (.)}
        p -= w_abs2 * np.real(m @ d.conj())
        p += tk * np.real(uk * m[:, k])
        const += w_abs2 * (float(np.sum(np.abs(d) ** 2)) + scenario.sigma2_user[k]) \
            - 2.0 * tk * np.real(uk * d[k]) + tk
    S = 0.5 * (S + S.T)

    amp_free = sigma_v  # covariance before the gain stage
    C_stack = np.zeros((dims.N, dims.N, dims.N))
    for transmissive in (False, True):
        phi, e_z = ris.branch_split(transmissive)
        B = phi * e_z[None, :]  # row n mixes cell outputs into emitted port n
        C_stack += (B[:, :, None] * B.conj()[:, None, :]
                    * amp_free[None, :, :]).real
    C_stack = 0.5 * (C_stack + np.swapaxes(C_stack, 1, 2))
    caps = [QuadraticCap(C=C_stack[n], bound=cap_scale * scenario.p_max_cell[n])
            for n in range(dims.N)]
    C_tot = sum(c.C for c in caps)
    cap_total = QuadraticCap(C=C_tot, bound=cap_scale * scenario.p_max_total)
    return AmplificationQP(S=S, p=p, const=const, cap_cells=caps,
                           cap_total=cap_total, beta_lower=beta_lower)


def relax_caps_to_entry(qp: AmplificationQP, beta_entry: np.ndarray) -> None:
    """Loosen each (possibly margin-tightened) cap up to the entry point's
    own emission so the incumbent is always feasible for the subproblem."""
    for cap in qp.cap_cells + [qp.cap_total]:
        cap.bound = max(cap.bound, cap.value(beta_entry) * (1.0 + 1e-12))


def _stacked_caps(qp: AmplificationQP) -> tuple[np.ndarray, np.ndarray]:
    """All caps as one (ncap, N, N) tensor plus bounds, for BLAS-friendly
    feasibility probes inside the solver loop."""
    C_all = np.stack([c.C for c in qp.cap_cells] + [qp.cap_total.C])
    bounds = np.array([c.bound for c in qp.cap_cells] + [qp.cap_total.bound])
    return C_all, bounds


def _caps_ok_stacked(C_all, bounds, beta, slack: float = 1e-12) -> bool:
    vals = (C_all @ beta) @ beta
    return bool(np.all(vals - bounds <= slack * np.maximum(1.0, bounds)))


def _pull_to_caps(qp: AmplificationQP, anchor: np.ndarray,
                  candidate: np.ndarray,
                  stacked: tuple[np.ndarray, np.ndarray] | None = None
                  ) -> np.ndarray:
    """Largest step along anchor -> candidate keeping every cap satisfied.

    Each cap is a convex quadratic of the step fraction s, so its feasible
    region on the segment is an interval [0, s_max] with a closed form.
    """
    C_all, bounds = _stacked_caps(qp) if stacked is None else stacked
    d = candidate - anchor
    Cd = C_all @ d  # (ncap, N)
    a = Cd @ d
    b = 2.0 * (Cd @ anchor)
    c = (C_all @ anchor) @ anchor - bounds
    # solve a s^2 + b s + c <= 0 per cap for the largest s in [0, 1]
    s = 1.0
    curved = a > 0.0
    disc = b[curved] ** 2 - 4.0 * a[curved] * c[curved]
    crossed = disc >= 0.0
    if np.any(crossed):
        roots = (-b[curved][crossed] + np.sqrt(disc[crossed])) \
            / (2.0 * a[curved][crossed])
        s = min(s, max(0.0, float(roots.min())))
    flat = ~curved & (b > 0.0) & (c + b > 0.0)
    if np.any(flat):
        s = min(s, max(0.0, float((-c[flat] / b[flat]).min())))
    if s >= 1.0:
        return candidate
    return anchor + s * (1.0 - 1e-12) * d


def _interior_start(qp: AmplificationQP, stacked, entry: np.ndarray):
    """A point strictly inside the caps and the box, near the entry.

    Returns None when the feasible set has (numerically) no interior in
    the entry's neighborhood; the caller then keeps the entry unchanged.
    """
    C_all, bounds = stacked
    eps = 1e-10 * max(1.0, abs(qp.beta_lower))
    floor = qp.beta_lower + eps

    def strict(beta):
        if float(np.min(beta - qp.beta_lower)) < 0.5 * eps:
            return False
        margins = bounds - (C_all @ beta) @ beta
        return bool(np.all(margins > 1e-13 * np.maximum(1.0, bounds)))

    cand = np.maximum(entry, floor)
    if strict(cand):
        return cand
    anchor = np.full_like(entry, floor)
    pulled = _pull_to_caps(qp, anchor, cand, stacked)
    pulled = anchor + 0.999 * (pulled - anchor)
    if strict(pulled):
        return pulled
    return None


def _max_domain_step(C_all, bounds, lower, beta, delta, margins, slack) -> float:
    """Largest t with beta + t*delta still inside caps and box."""
    t = np.inf
    neg = delta < 0.0
    if np.any(neg):
        t = float(np.min(slack[neg] / -delta[neg]))
    Cd = C_all @ delta
    a = Cd @ delta
    b = 2.0 * (Cd @ beta)
    c = -margins  # cap value minus bound, negative inside
    curved = a > 0.0
    if np.any(curved):
        disc = np.maximum(b[curved] ** 2 - 4.0 * a[curved] * c[curved], 0.0)
        roots = (-b[curved] + np.sqrt(disc)) / (2.0 * a[curved])
        t = min(t, float(np.min(roots)))
    flat = ~curved & (b > 0.0)
    if np.any(flat):
        t = min(t, float(np.min(-c[flat] / b[flat])))
    return max(t, 0.0)


def _barrier_minimize(qp: AmplificationQP, stacked, beta0: np.ndarray,
                      max_newton: int, mu0_scale: float = 0.1) -> np.ndarray:
    C_all, bounds = stacked
    lower = qp.beta_lower
    f_scale = max(1.0, abs(qp.objective(beta0)))
    mu = mu0_scale * f_scale
    mu_min = 1e-12 * f_scale
    beta = beta0.astype(float).copy()
    best_f, best_beta = qp.objective(beta), beta.copy()
    used = 0

    def barrier_value(b, mu_now):
        margins = bounds - (C_all @ b) @ b
        slack = b - lower
        if float(np.min(margins)) <= 0.0 or float(np.min(slack)) <= 0.0:
            return np.inf
        return qp.objective(b) - mu_now * (float(np.sum(np.log(margins)))
                                           + float(np.sum(np.log(slack))))

    while used < max_newton:
        for _ in range(50):  # Newton iterations within one barrier stage
            if used >= max_newton:
                break
            used += 1
            Cb = C_all @ beta  # (ncap, N)
            margins = bounds - np.einsum("cn,n->c", Cb, beta)
            slack = beta - lower
            inv_m = 1.0 / margins
            grad = (2.0 * (qp.S @ beta - qp.p)
                    + 2.0 * mu * (Cb.T @ inv_m) - mu / slack)
            H = (2.0 * qp.S
                 + 4.0 * mu * (Cb.T * inv_m ** 2) @ Cb
                 + 2.0 * mu * np.tensordot(inv_m, C_all, axes=([0], [0])))
            H[np.diag_indices_from(H)] += mu / slack ** 2
            try:
                delta = np.linalg.solve(H, -grad)
            except np.linalg.LinAlgError:
                H[np.diag_indices_from(H)] += 1e-12 * abs(np.trace(H))
                delta = np.linalg.solve(H, -grad)
            decrement = -0.5 * float(grad @ delta)
            if decrement <= max(1e-14 * f_scale, 1e-3 * mu):
                break
            t = min(1.0, 0.99 * _max_domain_step(C_all, bounds, lower,
                                                 beta, delta, margins, slack))
            psi0 = barrier_value(beta, mu)
            gTd = float(grad @ delta)
            moved = False
            for _ in range(MAX_BACKTRACKS):
                cand = beta + t * delta
                if barrier_value(cand, mu) <= psi0 + 1e-4 * t * gTd:
                    beta = cand
                    moved = True
                    break
                t *= 0.5
            if not moved:
                break
        f_now = qp.objective(beta)
        if f_now < best_f:
            best_f, best_beta = f_now, beta.copy()
        if mu <= mu_min:
            break
        # two decades per stage costs a couple of extra Newton steps each
        # but nearly halves the stage count; the final stage is clamped to
        # mu_min so the boundary accuracy is unchanged
        mu = max(0.01 * mu, mu_min)
    return best_beta


def solve_amp_qp(qp: AmplificationQP, beta_entry: np.ndarray,
                 max_iters: int = MAX_ITERS, warm: bool = False) -> np.ndarray:
    """Barrier solve from a feasible entry gain vector.

    max_iters bounds the total Newton iteration count across barrier
    stages; the result never has a worse objective than the entry point.
    `warm` starts the barrier weight five decades lower — right for entry
    points already near the optimum (successive solves of a slowly
    changing problem), where the early wide-barrier stages would only
    drag the iterate toward the analytic center and back.  The final
    stage weight is unchanged, so accuracy at the solution is too.
    """
    stacked = _stacked_caps(qp)
    ones = np.full_like(beta_entry, qp.beta_lower)
    if not _caps_ok_stacked(*stacked, ones, slack=1e-9):
        raise InfeasibleBudgetError(
            "unit gains violate the emission caps; shrink the precoder or raise the caps")
    entry = np.maximum(beta_entry, qp.beta_lower)
    if not _caps_ok_stacked(*stacked, entry):
        entry = _pull_to_caps(qp, ones, entry, stacked)

    start = _interior_start(qp, stacked, entry)
    if start is None:
        return entry
    beta = _barrier_minimize(qp, stacked, start, max_iters,
                             mu0_scale=1e-6 if warm else 0.1)
    if qp.objective(beta) <= qp.objective(entry):
        return beta
    return entry
