"""Alternating-optimization driver.

Block order per outer iteration: equalizers, weights, beamformers,
amplification, splitting, coupling (reflective / transmissive).  Every
block is arranged to never increase the weighted-MSE objective and never
leave the hardware-feasible set:

* the beamformer update is blended back toward the previous (feasible)
  precoder until the emission caps hold at the current surface state --
  the subproblem is convex, so any blend is still an improvement;
* the gain QP runs against caps tightened by a small margin (relaxed up
  to the entry point's own emission), which restores slack the later
  blocks can spend;
* split and coupling moves are accepted only if they both improve the
  objective and respect the caps; the two coupling branches get frozen
  per-cell emission budgets so their updates commute.
"""
from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import amplification, model, splitting, stiefel, wmmse
from .scenario import Scenario


@dataclass
class SolverConfig:
    outer_max_iters: int = 100
    outer_rel_tol: float = 1e-5
    beta_lower: float = 1.0
    cap_margin: float = 1e-3
    enable_beamformers: bool = True
    enable_amplification: bool = True
    enable_splitting: bool = True
    enable_coupling: bool = True
    enable_extrapolation: bool = True
    # joint gain/split refinement in Cartesian branch-amplitude
    # coordinates; the polar blocks alternate radial and angular moves
    # along one curved valley, the polish walks the valley floor directly
    enable_polish: bool = True
    polish_max_iters: int = 120
    # cap on the chained (u,t)-refresh sub-iterations inside the precoder
    # and gain blocks; 1 = single pass (chasing each block's own fixed
    # point early over-commits the weights and lands in worse basins)
    block_saturation: int = 1
    splitting_max_sweeps: int = splitting.MAX_SWEEPS
    # the gain QP only needs to rough in the radius each pass — the polish
    # step finishes the job jointly with the splits at a fraction of the
    # per-iteration cost
    amp_max_iters: int = 80
    # fraction of the gain/polish subproblem step taken per outer pass.
    # Jumping straight to each subproblem optimum whipsaws the couplings
    # and precoder across basins; a partial step keeps the joint state on
    # one smooth drift (which the extrapolation then collapses).  Segment
    # points of a convex subproblem keep both descent and cap feasibility.
    block_damping: float = 1.0
    # iterations over which the damping relaxes linearly back to full
    # steps (0 = constant damping).  Gentle early passes pick the basin;
    # full late passes drain the remaining gap so the trace can plateau
    # instead of chasing the (u, t)-refreshed target forever.
    damping_ramp_iters: int = 0
    # per outer pass the coupling blocks only need a modest inner budget:
    # they are re-solved every iteration, and short inexact passes converge
    # to the same block-stationary points at a fraction of the cost
    stiefel: stiefel.LineSearchConfig = field(
        default_factory=lambda: stiefel.LineSearchConfig(max_iters=20))


@dataclass
class BlockRecord:
    iteration: int
    block: str
    objective: float
    sum_rate: float
    max_residual: float
    wall_ms: float
    extra: dict = field(default_factory=dict)


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)

    def objectives(self) -> np.ndarray:
        return np.array([r.objective for r in self.records])

    def rate_trace(self) -> np.ndarray:
        """Sum rate at the fresh-equalizer/weight point of each iteration
        (there the rate-MSE identity makes it nondecreasing)."""
        return np.array([r.sum_rate for r in self.records if r.block == "weights"])

    def is_monotone(self, rel_tol: float = 1e-9) -> bool:
        obj = self.objectives()
        return bool(np.all(np.diff(obj) <= rel_tol * np.abs(obj[:-1])))

    def max_identity_gap(self) -> float:
        gaps = [r.extra.get("rate_identity_gap", 0.0) for r in self.records]
        return float(max(gaps)) if gaps else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "block", "objective", "sum_rate",
                        "max_residual", "ms"])
            for r in self.records:
                w.writerow([r.iteration, r.block, repr(r.objective),
                            repr(r.sum_rate), repr(r.max_residual),
                            repr(r.wall_ms)])


@dataclass
class FinalMetrics:
    sum_rate: float
    sinr: np.ndarray
    feasibility: model.FeasibilityReport


@dataclass
class AoResult:
    scenario: Scenario
    ris: model.RisState
    precoder: model.Precoder
    aux: wmmse.WmmseAux
    trace: IterationTrace
    iterations: int
    converged: bool
    final: FinalMetrics


def initial_state(scenario: Scenario, config: SolverConfig,
                  passive: bool) -> tuple[model.RisState, model.Precoder]:
    """Matched-filter precoder at full budget; unit gains; identity
    couplings; split coefficients iid uniform on [0.3, 0.7] drawn from the
    scenario's solver stream (shared by active and passive runs)."""
    n = scenario.dims.N
    rng = scenario.solver_rng()
    beta0 = 1.0 if passive else max(1.0, config.beta_lower)
    ris = model.RisState(beta=np.full(n, beta0),
                         varsigma=rng.uniform(0.3, 0.7, size=n),
                         phi_r=np.eye(n, dtype=complex),
                         phi_t=np.eye(n, dtype=complex))
    return ris, model.matched_filter_precoder(scenario)


def _blend_to_caps(scenario: Scenario, ris: model.RisState,
                   W0: np.ndarray, W1: np.ndarray) -> tuple[np.ndarray, float]:
    """Largest blend of the new precoder onto the old one keeping every
    emission cap satisfied at the current surface state."""
    n = scenario.dims.N
    amp_rows = []
    noise_em = np.zeros(n)
    for transmissive in (False, True):
        phi, e_z = ris.branch_split(transmissive)
        F = (phi * (e_z * ris.beta)[None, :]) @ scenario.G  # (N, M)
        amp_rows.append(F)
        Bn = phi * (e_z * ris.beta)[None, :]
        noise_em += np.sum(np.abs(Bn) ** 2 * scenario.noise_ris[None, :], axis=1)
    X0 = np.concatenate([F @ W0 for F in amp_rows], axis=1)
    X1 = np.concatenate([F @ W1 for F in amp_rows], axis=1)
    dX = X1 - X0
    a = np.sum(np.abs(dX) ** 2, axis=1)
    b = 2.0 * np.sum(np.real(dX * X0.conj()), axis=1)
    c = np.sum(np.abs(X0) ** 2, axis=1) + noise_em - scenario.p_max_cell
    # total cap on top of the per-cell ones
    a = np.append(a, a.sum())
    b = np.append(b, b.sum())
    c = np.append(c, np.sum(np.abs(X0) ** 2) + noise_em.sum() - scenario.p_max_total)
    s = 1.0
    for ai, bi, ci in zip(a, b, c):
        if ai <= 0.0:
            if bi > 0.0 and bi + ci > 0.0:
                s = min(s, max(0.0, -ci / bi))
            continue
        disc = bi * bi - 4.0 * ai * ci
        if disc < 0.0:
            continue
        root = (-bi + np.sqrt(disc)) / (2.0 * ai)
        if root < s:
            s = max(0.0, root)
    if s >= 1.0:
        return W1, 1.0
    s_sh = s * (1.0 - 1e-12)
    return W0 + s_sh * (W1 - W0), s_sh


def _rebalance_gains(scenario: Scenario, ris: model.RisState,
                     aux, W_prev: np.ndarray, W_target: np.ndarray,
                     beta_lower: float
                     ) -> tuple[np.ndarray, np.ndarray, float, float]:
    """Blend toward the bisected precoder, optionally trading gain for
    beamformer headroom on cap-bound cells.

    Cells pinned at their emission cap lock the blend to microscopic
    steps; backing a bound cell's gain off by a notch frees its cap so
    the precoder can move.  Candidates (gain backoff x re-blend) are
    accepted only on strict objective improvement, so the move keeps the
    descent guarantee; feasibility holds because the blend enforces the
    caps at each candidate's own gains."""
    W_base, s_base = _blend_to_caps(scenario, ris, W_prev, W_target)
    base_channels = model.effective_channels(scenario, ris)
    pre_base = model.Precoder(W=W_base)
    f_base = model.wmmse_objective(scenario, base_channels, pre_base,
                                   aux.u, aux.t)
    best = (W_base, ris.beta, f_base, s_base, 0.0)
    if s_base < 1.0:
        em = model.emission_powers(scenario, ris, pre_base)
        bound = em >= 0.9 * scenario.p_max_cell
        if np.any(bound):
            for delta in (0.5, 0.3, 0.15, 0.05):
                beta_c = np.where(bound, np.maximum(
                    beta_lower, ris.beta * (1.0 - delta)), ris.beta)
                ris_c = ris.copy()
                ris_c.beta = beta_c
                W_c, s_c = _blend_to_caps(scenario, ris_c, W_prev, W_target)
                ch_c = model.effective_channels(scenario, ris_c)
                f_c = model.wmmse_objective(scenario, ch_c,
                                            model.Precoder(W=W_c),
                                            aux.u, aux.t)
                if f_c < best[2]:
                    best = (W_c, beta_c, f_c, s_c, delta)
    W_best, beta_best, _, s_best, delta_best = best
    return W_best, beta_best, s_best, delta_best


def _rank1_branch_jump(scenario: Scenario, transmissive: bool,
                       system, phi: np.ndarray, guard):
    """Exact coupling update for a single-user zone.

    With one user behind the branch the curvature matrix has rank one,
    M = m g g^H, and the branch objective depends on the coupling only
    through y = Phi^H g: f(y) = m y^H Q y + 2 Re{y^H v} on the sphere
    ||y|| = ||g||.  That trust-region-style problem is solved globally by
    a secular-equation bisection in the eigenbasis of Q; the coupling is
    then rotated in the plane spanned by the old and new y, leaving the
    orthogonal complement untouched.  The move must pass the emission
    guard and strictly improve, like every other coupling candidate."""
    dims = scenario.dims
    zone = [k for k in range(dims.K) if dims.is_transmissive(k) == transmissive]
    if len(zone) != 1:
        return None
    g = scenario.g[zone[0]]
    r2 = float(np.real(g.conj() @ g))
    if r2 <= 0.0:
        return None
    r = float(np.sqrt(r2))
    # rank-one data recovered from the assembled system: M = m g g^H and
    # B = 2 g v^H give m = (g^H M g) / r^4 and v = (B^H g) / (2 r^2)
    m_w = float(np.real(g.conj() @ (system.M @ g))) / r2 ** 2
    v = (system.B.conj().T @ g) / (2.0 * r2)

    evals, evecs = np.linalg.eigh(system.Q)
    proj = evecs.conj().T @ v
    lam = m_w * np.clip(evals, 0.0, None)

    def norm_at(mu: float) -> float:
        with np.errstate(over="ignore", divide="ignore"):
            return float(np.sqrt(np.sum(np.abs(proj) ** 2 / (lam + mu) ** 2)))

    lo = -lam[0]
    if norm_at(lo + max(1e-18, abs(lo)) * 1e-9) < r:
        return None  # hard case: minimizer needs an eigenspace component
    hi = max(np.linalg.norm(v) / r - lam[0], lo + 1.0)
    while norm_at(hi) > r:
        hi = lo + 2.0 * (hi - lo)
    for _ in range(200):
        mu = 0.5 * (lo + hi)
        if norm_at(mu) > r:
            lo = mu
        else:
            hi = mu
    y_new = evecs @ (-proj / (lam + hi))
    y_norm = float(np.linalg.norm(y_new))
    if y_norm <= 0.0:
        return None
    y_new *= r / y_norm  # back onto the sphere so the rotation is unitary
    y_old = phi.conj().T @ g
    # unitary U with U^H y_old = y_new, a plane rotation: Phi -> Phi U
    q1 = y_new / r
    c = complex(q1.conj() @ (y_old / r))
    p_perp = y_old / r - c * q1
    s = float(np.linalg.norm(p_perp))
    if s < 1e-14:
        if abs(c) < 1e-14:
            return None
        U_cols = q1[:, None]
        T = np.array([[c / abs(c)]], dtype=complex)
    else:
        q2 = p_perp / s
        U_cols = np.stack([q1, q2], axis=1)
        T = np.array([[c, -s], [s, np.conj(c)]], dtype=complex)
    phi_c = phi + (phi @ U_cols) @ ((T - np.eye(T.shape[0])) @ U_cols.conj().T)
    f_old = stiefel.branch_objective(system, phi)
    f_new = stiefel.branch_objective(system, phi_c)
    if f_new >= f_old or (guard is not None and not guard(phi_c)):
        return None
    return phi_c


def _amplitude_polish(scenario: Scenario, ris: model.RisState,
                      precoder: model.Precoder, aux, sigma_v: np.ndarray,
                      beta_lower: float, cap_margin: float,
                      max_iters: int, damping: float = 1.0,
                      warm: bool = False):
    """Joint gain/split refinement in Cartesian branch amplitudes.

    The gain block moves the radius (beta) and the split block moves the
    angle (varsigma) of the per-cell amplitude pair a_r = beta varsigma,
    a_t = beta sqrt(1 - varsigma^2); alternating the two crawls along a
    curved valley in tiny steps.  In the (a_r, a_t) coordinates the
    frozen-(u, t, W, Phi) objective is a single convex quadratic (each
    user's MSE touches only its own branch) and the emission caps stay
    convex quadratics, so one barrier solve of the stacked 2N-variable
    QP takes the diagonal moves the polar blocks cannot.  The only
    nonconvexity is the lower radius bound; solutions dipping inside it
    are pushed back out radially and re-checked against the caps, and
    the result is returned only on strict improvement.  Returns
    (beta, varsigma) or None."""
    n = scenario.dims.N
    unit = replace(ris, beta=np.ones(n))
    sys_a = splitting.assemble_splitting_system(scenario, unit, precoder, aux)
    S = {False: sys_a.S_R.real, True: sys_a.S_T.real}
    p = {False: sys_a.p_R.real, True: sys_a.p_T.real}

    C = {}
    for z in (False, True):
        phi = ris.phi_t if z else ris.phi_r
        T = (phi[:, :, None] * phi.conj()[:, None, :] * sigma_v[None]).real
        T = 0.5 * (T + np.swapaxes(T, 1, 2))
        C[z] = np.concatenate([T, T.sum(axis=0, keepdims=True)])
    bounds = np.append(scenario.p_max_cell, scenario.p_max_total) \
        * (1.0 - cap_margin)

    a = {False: ris.beta * ris.e_r, True: ris.beta * ris.e_t}
    dir0 = {z: a[z] / ris.beta for z in (False, True)}

    def cap_vals(x):
        return (C[False] @ x[False]) @ x[False] + (C[True] @ x[True]) @ x[True]

    bounds = np.maximum(bounds, cap_vals(a) * (1.0 + 1e-12))

    # stacked 2N-variable convex QP: blocks decouple in the objective,
    # the caps couple the branches through the shared emitted power
    S2 = np.zeros((2 * n, 2 * n))
    S2[:n, :n] = S[False]
    S2[n:, n:] = S[True]
    p2 = np.concatenate([p[False], p[True]])
    C2 = np.zeros((n + 1, 2 * n, 2 * n))
    C2[:, :n, :n] = C[False]
    C2[:, n:, n:] = C[True]
    qp = amplification.AmplificationQP(
        S=S2, p=p2, const=0.0,
        cap_cells=[amplification.QuadraticCap(C=C2[i], bound=float(bounds[i]))
                   for i in range(n)],
        cap_total=amplification.QuadraticCap(C=C2[n], bound=float(bounds[n])),
        beta_lower=0.0)

    a_entry = np.concatenate([a[False], a[True]])
    f0 = qp.objective(a_entry)
    x = amplification.solve_amp_qp(qp, a_entry, max_iters=max_iters,
                                   warm=warm)
    if damping < 1.0:
        x = a_entry + damping * (x - a_entry)
    ar, at = x[:n], x[n:]
    nrm = np.hypot(ar, at)
    if np.any(nrm < beta_lower * (1.0 - 1e-12)):
        # the convex solve ignores the (nonconvex) lower radius bound;
        # push offending cells back out radially and re-check the caps
        scale = np.where(nrm < beta_lower,
                         beta_lower / np.maximum(nrm, 1e-300), 1.0)
        ar, at = ar * scale, at * scale
        dead = nrm <= 1e-300
        if np.any(dead):
            ar[dead] = beta_lower * dir0[False][dead]
            at[dead] = beta_lower * dir0[True][dead]
        x = np.concatenate([ar, at])
        if not qp.caps_ok(x, slack=1e-12):
            return None
    f = qp.objective(x)
    if not f < f0 - 1e-12 * max(1.0, abs(f0)):
        return None
    beta = np.maximum(np.hypot(ar, at), beta_lower)
    varsigma = np.clip(ar / beta, 0.0, 1.0)
    return beta, varsigma


def _overrelax_branch(system, phi0: np.ndarray, phi_new: np.ndarray,
                      guard, info: dict) -> tuple[np.ndarray, dict]:
    """Extrapolate a coupling solve along its own net displacement.

    Plain gradient descent zigzags on the ill-conditioned branch
    quadratic while drifting steadily in one secular direction; retracting
    a multiple of the whole pass's displacement often buys many passes'
    worth of progress at the cost of a few objective evaluations.  Each
    candidate must strictly improve the branch objective and pass the
    emission-budget guard, so the move keeps every invariant of the
    coupling block itself."""
    disp = phi_new - phi0
    if not np.any(disp):
        return phi_new, info
    f_cur = stiefel.branch_objective(system, phi_new)
    for _ in range(12):
        best = None
        for xi in (4.0, 2.0, 1.0, 0.5):
            cand = stiefel.retract(phi_new, xi * (phi_new - phi0))
            f_c = stiefel.branch_objective(system, cand)
            if f_c < f_cur and (best is None or f_c < best[1]) \
                    and (guard is None or guard(cand)):
                best = (cand, f_c)
        if best is None:
            break
        phi0, phi_new, f_cur = phi_new, best[0], best[1]
        info["max_unitarity_defect"] = max(
            info["max_unitarity_defect"], stiefel._defect(phi_new))
        info["objective_trace"].append(f_cur)
    return phi_new, info


def _pull_amplitudes_to_caps(scenario: Scenario, ris: model.RisState,
                             precoder: model.Precoder, anchor, cand):
    """Largest cap-feasible fraction of an amplitude segment.

    Works on per-branch amplitude pairs (a_r, a_t) with the couplings and
    precoder of `ris`/`precoder` frozen; the caps are quadratic in the
    stacked amplitudes, so the largest feasible fraction has a closed
    form per cap.  When the anchor itself violates these caps — routine
    once the cells run at their emission limits, because the caps move
    with the candidate couplings — the endpoint is scaled radially toward
    zero instead: emission vanishes there, so a single factor always
    restores feasibility while keeping the candidate's direction."""
    sigma_v = model.forwarded_covariance(scenario, precoder)
    C = {}
    for z, phi in ((False, ris.phi_r), (True, ris.phi_t)):
        T = (phi[:, :, None] * phi.conj()[:, None, :] * sigma_v[None]).real
        C[z] = np.concatenate([T, T.sum(axis=0, keepdims=True)])
    bounds = np.append(scenario.p_max_cell, scenario.p_max_total)
    a0 = {False: anchor[0], True: anchor[1]}
    a1 = {False: cand[0], True: cand[1]}
    d = {z: a1[z] - a0[z] for z in (False, True)}
    Cd = {z: C[z] @ d[z] for z in (False, True)}
    aa = Cd[False] @ d[False] + Cd[True] @ d[True]
    bb = 2.0 * (Cd[False] @ a0[False] + Cd[True] @ a0[True])
    cc = (C[False] @ a0[False]) @ a0[False] \
        + (C[True] @ a0[True]) @ a0[True] - bounds
    if np.any(cc > 1e-12 * np.maximum(1.0, bounds)):
        q = (C[False] @ a1[False]) @ a1[False] \
            + (C[True] @ a1[True]) @ a1[True]
        over = q > bounds
        if not np.any(over):
            return a1[False], a1[True]
        s = float(np.sqrt((bounds[over] / q[over]).min())) * (1.0 - 1e-12)
        return s * a1[False], s * a1[True]
    s = 1.0
    curved = aa > 0.0
    disc = bb[curved] ** 2 - 4.0 * aa[curved] * cc[curved]
    crossed = disc >= 0.0
    if np.any(crossed):
        roots = (-bb[curved][crossed] + np.sqrt(disc[crossed])) \
            / (2.0 * aa[curved][crossed])
        s = min(s, max(0.0, float(roots.min())))
    flat = ~curved & (bb > 0.0) & (cc + bb > 0.0)
    if np.any(flat):
        s = min(s, max(0.0, float((-cc[flat] / bb[flat]).min())))
    if s >= 1.0:
        return a1[False], a1[True]
    s *= 1.0 - 1e-12
    return a0[False] + s * d[False], a0[True] + s * d[True]


def _snapshot(ris: model.RisState, W: np.ndarray) -> tuple:
    return (ris.beta.copy(), ris.varsigma.copy(), ris.phi_r.copy(),
            ris.phi_t.copy(), W.copy())


def _joint_extrapolation(scenario: Scenario, ris: model.RisState,
                         precoder: model.Precoder, prev: tuple,
                         beta_lower: float, passive: bool,
                         f_ref: float):
    """Guarded heavy-ball step over the whole variable stack.

    Alternating updates crawl through narrow valleys: each block moves a
    little, the others re-adjust, and the joint state drifts steadily for
    hundreds of iterations.  Extrapolating the full state along the last
    outer displacement — gains and splits clipped to their boxes,
    couplings retracted back to unitary, the precoder rescaled to the
    transmit budget — jumps many iterations ahead along that drift.
    Candidates are accepted only on strict objective improvement with the
    true emission caps verified, so descent and feasibility survive.

    Gains and splits are extrapolated together in Cartesian branch
    amplitudes (beta varsigma, beta sqrt(1 - varsigma^2)) — the space the
    polish step moves in — because the polar coordinates curve sharply
    along the drift while the amplitudes move near-linearly.

    Candidates are scored at fresh closed-form (u, t): at the frozen pair
    the incumbent is already nearly block-optimal, and the drift's payoff
    only shows once the equalizers and weights respond.  f_ref must be the
    incumbent's fresh-pair objective, so acceptance keeps the recorded
    trace nonincreasing."""
    beta_p, vs_p, phi_r_p, phi_t_p, W_p = prev
    ar = ris.beta * ris.e_r
    at = ris.beta * ris.e_t
    et_p = np.sqrt(np.clip(1.0 - vs_p ** 2, 0.0, None))
    d_ar = ar - beta_p * vs_p
    d_at = at - beta_p * et_p
    d_vs = ris.varsigma - vs_p
    d_phi_r = ris.phi_r - phi_r_p
    d_phi_t = ris.phi_t - phi_t_p
    d_W = precoder.W - W_p
    best = None
    for xi in (64.0, 32.0, 16.0, 8.0, 4.0, 2.0, 1.0):
        cand = ris.copy()
        cand.phi_r = stiefel.retract(ris.phi_r, xi * d_phi_r)
        cand.phi_t = stiefel.retract(ris.phi_t, xi * d_phi_t)
        W_c = precoder.W + xi * d_W
        power = float(np.sum(np.abs(W_c) ** 2))
        if power > scenario.p_bs:
            W_c = W_c * np.sqrt(scenario.p_bs / power)
        pre_c = model.Precoder(W=W_c)
        if passive:
            cand.varsigma = np.clip(ris.varsigma + xi * d_vs, 0.0, 1.0)
            em = model.emission_powers(scenario, cand, pre_c)
            if np.any(em > scenario.p_max_cell) or em.sum() > scenario.p_max_total:
                continue
        else:
            ar_c = np.clip(ar + xi * d_ar, 0.0, None)
            at_c = np.clip(at + xi * d_at, 0.0, None)
            pulled = _pull_amplitudes_to_caps(scenario, cand, pre_c,
                                              (ar, at), (ar_c, at_c))
            if pulled is None:
                continue
            ar_c, at_c = pulled
            nrm = np.hypot(ar_c, at_c)
            cand.beta = np.maximum(nrm, beta_lower)
            cand.varsigma = np.clip(ar_c / np.maximum(nrm, 1e-300), 0.0, 1.0)
            # the lower gain bound can undo part of the pull-back, so
            # verify the true budget once more on the final state
            em = model.emission_powers(scenario, cand, pre_c)
            if np.any(em > scenario.p_max_cell) or em.sum() > scenario.p_max_total:
                continue
        ch_c = model.effective_channels(scenario, cand)
        u_c = wmmse.update_equalizers(scenario, ch_c, pre_c)
        t_c = wmmse.update_weights(scenario, ch_c, pre_c)
        f_c = model.wmmse_objective(scenario, ch_c, pre_c, u_c, t_c)
        if f_c < f_ref and (best is None or f_c < best[0]):
            best = (f_c, cand, pre_c, u_c, t_c, xi)
    return best


def _branch_emissions(scenario: Scenario, ris: model.RisState,
                      sigma_v: np.ndarray) -> dict:
    """Per-cell emitted power of each branch at the current state."""
    amp = ris.beta[:, None] * sigma_v * ris.beta[None, :]
    out = {}
    for transmissive in (False, True):
        phi, e_z = ris.branch_split(transmissive)
        B = phi * e_z[None, :]
        out[transmissive] = (np.real((B @ amp) * B.conj())).sum(axis=1)
    return out


def run_ao(scenario: Scenario, config: SolverConfig | None = None,
           mode: str = "active") -> AoResult:
    """Alternating optimization; mode "passive" pins unit gains, skips the
    amplification block, and zeroes the amplifier noise."""
    if config is None:
        config = SolverConfig()
    if mode not in ("active", "passive"):
        raise ValueError(f"unknown mode {mode!r}")
    passive = mode == "passive"
    if passive:
        scenario = replace(scenario, noise_ris=np.zeros(scenario.dims.N))

    ris, precoder = initial_state(scenario, config, passive)
    channels = model.effective_channels(scenario, ris)
    aux = wmmse.WmmseAux(u=np.zeros(scenario.dims.K, dtype=complex),
                         t=np.ones(scenario.dims.K))
    trace = IterationTrace()

    def record(it, block, wall_ms, **extra):
        obj = model.wmmse_objective(scenario, channels, precoder, aux.u, aux.t)
        rate = model.sum_rate(scenario, channels, precoder)
        resid = model.feasibility_report(
            scenario, ris, precoder, config.beta_lower if not passive else 1.0)
        trace.records.append(BlockRecord(
            iteration=it, block=block, objective=obj, sum_rate=rate,
            max_residual=resid.max_residual(), wall_ms=wall_ms, extra=extra))
        return obj

    iterations = 0
    converged = False
    prev_obj = None
    snap = None
    for it in range(config.outer_max_iters):
        iterations = it + 1
        prev_snap, snap = snap, _snapshot(ris, precoder.W)

        if config.damping_ramp_iters > 0:
            damp_now = 1.0 - (1.0 - config.block_damping) \
                * max(0.0, 1.0 - it / config.damping_ramp_iters)
        else:
            damp_now = config.block_damping
        # saturating a damped block just compounds the damped steps into a
        # full jump, defeating the ramp; only saturate once steps are full
        sat_now = config.block_saturation if damp_now >= 1.0 else 1

        t0 = time.perf_counter()
        aux.u = wmmse.update_equalizers(scenario, channels, precoder)
        record(it, "equalizers", (time.perf_counter() - t0) * 1e3)

        t0 = time.perf_counter()
        aux.t = wmmse.update_weights(scenario, channels, precoder)
        ms = (time.perf_counter() - t0) * 1e3
        eps = model.mse(scenario, channels, precoder, aux.u)
        identity_rate = float(np.log2(np.e) * np.sum(
            np.log(aux.t) - aux.t * eps + 1.0))
        actual_rate = model.sum_rate(scenario, channels, precoder)
        gap = abs(identity_rate - actual_rate) / max(1.0, abs(actual_rate))
        record(it, "weights", ms, rate_identity_gap=gap)

        def refresh_aux():
            # interleaved closed-form (u, t) refresh: both are exact
            # coordinate minimizers, so the objective only decreases and
            # the following block works against current curvature
            aux.u = wmmse.update_equalizers(scenario, channels, precoder)
            aux.t = wmmse.update_weights(scenario, channels, precoder)

        if config.enable_beamformers:
            t0 = time.perf_counter()
            # saturate the (u, t) <-> precoder feedback: every sub-step is
            # an exact or blended descent move, so the loop is monotone;
            # without it the loop's fixed point is approached one notch
            # per outer pass and the whole run crawls
            f_prev = model.wmmse_objective(scenario, channels, precoder,
                                           aux.u, aux.t)
            for _ in range(sat_now):
                W_entry, beta_entry = precoder.W, ris.beta
                system = wmmse.build_curvature(scenario, channels, aux)
                cand, lam = wmmse.solve_beamformers(system)
                rebal = 0.0
                if passive:
                    W_new, blend = _blend_to_caps(scenario, ris, precoder.W,
                                                  cand.W)
                else:
                    W_new, beta_new, blend, rebal = _rebalance_gains(
                        scenario, ris, aux, precoder.W, cand.W,
                        config.beta_lower)
                    if beta_new is not ris.beta:
                        ris.beta = beta_new
                        channels = model.effective_channels(scenario, ris)
                precoder = model.Precoder(W=W_new)
                f_now = model.wmmse_objective(scenario, channels, precoder,
                                              aux.u, aux.t)
                if f_now > f_prev:
                    # the bisection tolerance can leave the penalized
                    # minimizer a hair above the incumbent when the
                    # incumbent already sits at the power cap; keep the
                    # incumbent rather than book an increase
                    precoder = model.Precoder(W=W_entry)
                    if beta_entry is not ris.beta:
                        ris.beta = beta_entry
                        channels = model.effective_channels(scenario, ris)
                    break
                if abs(f_prev - f_now) <= 1e-6 * max(1.0, abs(f_prev)):
                    break
                f_prev = f_now
                refresh_aux()
            record(it, "beamformers", (time.perf_counter() - t0) * 1e3,
                   power_multiplier=lam, power=precoder.power,
                   bisect_power=cand.power, blend=blend, rebalance=rebal)

        if config.enable_amplification and not passive:
            t0 = time.perf_counter()
            # one roughing pass: the polish below equilibrates the joint
            # amplitude fixed point, so saturating the radius alone here
            # would only repeat work it immediately redoes
            refresh_aux()
            qp = amplification.assemble_amp_qp(
                scenario, ris, precoder, aux,
                beta_lower=config.beta_lower,
                cap_scale=1.0 - config.cap_margin)
            amplification.relax_caps_to_entry(qp, ris.beta)
            try:
                beta_new = amplification.solve_amp_qp(
                    qp, ris.beta, max_iters=config.amp_max_iters,
                    warm=it > 0)
                ris.beta = ris.beta + damp_now * (beta_new - ris.beta)
            except amplification.InfeasibleBudgetError as exc:
                resid = model.feasibility_report(scenario, ris, precoder,
                                                 config.beta_lower)
                raise amplification.InfeasibleBudgetError(
                    f"amplification block, iteration {it}: {exc}; "
                    f"residuals {resid.to_json()}") from exc
            channels = model.effective_channels(scenario, ris)
            record(it, "amplification", (time.perf_counter() - t0) * 1e3)
        elif config.enable_amplification:
            record(it, "amplification", 0.0)

        sigma_v = model.forwarded_covariance(scenario, precoder)

        if config.enable_splitting:
            t0 = time.perf_counter()
            refresh_aux()
            sys_split = splitting.assemble_splitting_system(
                scenario, ris, precoder, aux)
            guard = _SplitCapGuard(scenario, ris, sigma_v)
            vs, _, sweeps = splitting.sweep_system(
                sys_split, ris.varsigma, max_sweeps=config.splitting_max_sweeps,
                guard=guard)
            ris.varsigma = vs
            channels = model.effective_channels(scenario, ris)
            record(it, "splitting", (time.perf_counter() - t0) * 1e3,
                   sweeps=sweeps)

        if config.enable_polish and not passive:
            t0 = time.perf_counter()
            # saturate the (u, t) <-> amplitude feedback too: the polish
            # target moves with every aux refresh, and approaching the
            # moving target one notch per outer pass never plateaus
            f_prev = None
            accepted = False
            for rnd in range(sat_now):
                refresh_aux()
                pol = _amplitude_polish(scenario, ris, precoder, aux, sigma_v,
                                        config.beta_lower, config.cap_margin,
                                        config.polish_max_iters,
                                        damping=damp_now,
                                        warm=it > 0 or rnd > 0)
                if pol is None:
                    break
                accepted = True
                ris.beta, ris.varsigma = pol
                channels = model.effective_channels(scenario, ris)
                f_now = model.wmmse_objective(scenario, channels, precoder,
                                              aux.u, aux.t)
                if f_prev is not None and \
                        abs(f_prev - f_now) <= 1e-6 * max(1.0, abs(f_prev)):
                    break
                f_prev = f_now
            record(it, "amplitude_polish", (time.perf_counter() - t0) * 1e3,
                   accepted=accepted)

        if config.enable_coupling:
            refresh_aux()
            # frozen per-branch budgets keep the two updates independent
            entry_em = _branch_emissions(scenario, ris, sigma_v)
            slack = np.minimum(
                scenario.p_max_cell - entry_em[False] - entry_em[True],
                (scenario.p_max_total - entry_em[False].sum()
                 - entry_em[True].sum()) / scenario.dims.N)
            slack = np.clip(slack, 0.0, None)
            new_phi = {}
            infos = {}
            for transmissive in (False, True):
                t0 = time.perf_counter()
                sys_b = stiefel.build_branch_system(scenario, ris, precoder,
                                                    aux, transmissive)
                budget = entry_em[transmissive] + 0.5 * slack
                guard = _coupling_cap_guard(scenario, ris, sigma_v,
                                            transmissive, budget)
                phi0 = ris.phi_t if transmissive else ris.phi_r
                jump = _rank1_branch_jump(scenario, transmissive, sys_b,
                                          phi0, guard)
                if jump is not None:
                    # global optimum of the branch subproblem; nothing left
                    # for the iterative solve to improve
                    phi_new = jump
                    info = {"iterations": 0,
                            "objective_trace": [
                                stiefel.branch_objective(sys_b, phi0),
                                stiefel.branch_objective(sys_b, jump)],
                            "max_unitarity_defect": stiefel._defect(jump)}
                else:
                    phi_new, info = stiefel.optimize_branch(
                        sys_b, phi0, config.stiefel, accept_step=guard)
                    phi_new, info = _overrelax_branch(sys_b, phi0, phi_new,
                                                      guard, info)
                new_phi[transmissive] = phi_new
                info["wall_ms"] = (time.perf_counter() - t0) * 1e3
                infos[transmissive] = info
            ris.phi_r = new_phi[False]
            channels = model.effective_channels(scenario, ris)
            record(it, "coupling_r", infos[False]["wall_ms"],
                   stiefel_iters=infos[False]["iterations"],
                   max_unitarity_defect=infos[False]["max_unitarity_defect"])
            ris.phi_t = new_phi[True]
            channels = model.effective_channels(scenario, ris)
            obj = record(it, "coupling_t", infos[True]["wall_ms"],
                         stiefel_iters=infos[True]["iterations"],
                         max_unitarity_defect=infos[True]["max_unitarity_defect"])
        else:
            obj = model.wmmse_objective(scenario, channels, precoder, aux.u, aux.t)

        if config.enable_extrapolation and prev_snap is not None:
            t0 = time.perf_counter()
            # repeat while accepted: each round re-extrapolates along the
            # move just taken, walking down the drift geometrically.  The
            # baseline is the incumbent's fresh-(u, t) objective: it never
            # exceeds the last recorded value, so the trace stays monotone
            refresh_aux()
            f_ref = model.wmmse_objective(scenario, channels, precoder,
                                          aux.u, aux.t)
            base, rounds, xi = prev_snap, 0, 0.0
            while rounds < 8:
                jump = _joint_extrapolation(scenario, ris, precoder, base,
                                            config.beta_lower, passive, f_ref)
                if jump is None:
                    break
                base = _snapshot(ris, precoder.W)
                f_ref, ris, precoder, aux.u, aux.t, xi = jump
                channels = model.effective_channels(scenario, ris)
                rounds += 1
            if rounds:
                obj = record(it, "extrapolation",
                             (time.perf_counter() - t0) * 1e3, factor=xi,
                             rounds=rounds)

        if prev_obj is not None and abs(prev_obj - obj) <= \
                config.outer_rel_tol * max(abs(prev_obj), 1e-12) \
                and damp_now >= 1.0:
            # one quiet pass ends the run — but only at full step length,
            # otherwise the ramp's deliberately small early moves would
            # read as convergence
            converged = True
            break
        prev_obj = obj

    final = evaluate_final(scenario, ris, precoder,
                           1.0 if passive else config.beta_lower)
    return AoResult(scenario=scenario, ris=ris, precoder=precoder, aux=aux,
                    trace=trace, iterations=iterations, converged=converged,
                    final=final)


class _SplitCapGuard:
    """Emission-cap veto for split moves, O(N) per feasibility probe.

    Caches B_z = Phi_z diag(e_z) and C_z = B_z (A Sigma_v A) per branch so
    a single-coordinate move's per-cell emission change is a closed-form
    rank-one correction.
    """

    def __init__(self, scenario: Scenario, ris: model.RisState,
                 sigma_v: np.ndarray):
        self.scenario = scenario
        self.phi = {False: ris.phi_r, True: ris.phi_t}
        self.amp = ris.beta[:, None] * sigma_v * ris.beta[None, :]
        self.B = {}
        self.C = {}
        for z in (False, True):
            phi, e_z = ris.branch_split(z)
            self.B[z] = phi * e_z[None, :]
            self.C[z] = self.B[z] @ self.amp
        self.em = sum((np.real(self.C[z] * self.B[z].conj())).sum(axis=1)
                      for z in (False, True))
        self.cur = {False: ris.e_r.copy(), True: ris.e_t.copy()}
        self.tol = 1e-12 * max(1.0, scenario.p_max_total)

    def _new_emission(self, m, new_vs, new_et):
        delta = np.zeros(self.scenario.dims.N)
        for z, new_e in ((False, new_vs), (True, new_et)):
            de = new_e - self.cur[z][m]
            col = self.phi[z][:, m]
            delta += 2.0 * de * np.real(col * np.conj(self.C[z][:, m])) \
                + de * de * np.real(self.amp[m, m]) * np.abs(col) ** 2
        return self.em + delta

    def feasible(self, m, new_vs, new_et) -> bool:
        new_em = self._new_emission(m, new_vs, new_et)
        return bool(np.all(new_em <= self.scenario.p_max_cell + self.tol)
                    and new_em.sum() <= self.scenario.p_max_total + self.tol)

    def commit(self, m, new_vs, new_et) -> None:
        self.em = self._new_emission(m, new_vs, new_et)
        for z, new_e in ((False, new_vs), (True, new_et)):
            de = new_e - self.cur[z][m]
            self.C[z] += np.outer(self.phi[z][:, m] * de, self.amp[m])
            self.B[z][:, m] += self.phi[z][:, m] * de
            self.cur[z][m] = new_e


def _coupling_cap_guard(scenario: Scenario, ris: model.RisState,
                        sigma_v: np.ndarray, transmissive: bool,
                        budget: np.ndarray):
    """Candidate coupling matrices must keep this branch's per-cell
    emission within its frozen budget."""
    _, e_z = ris.branch_split(transmissive)
    Y = (e_z * ris.beta)[:, None] * sigma_v * (e_z * ris.beta)[None, :]
    tol = 1e-12 * max(1.0, scenario.p_max_total)

    def accept(phi_cand):
        em = (np.real((phi_cand @ Y) * phi_cand.conj())).sum(axis=1)
        return bool(np.all(em <= budget + tol))

    return accept


def run_passive_baseline(scenario: Scenario,
                         config: SolverConfig | None = None) -> AoResult:
    return run_ao(scenario, config, mode="passive")


def evaluate_final(scenario: Scenario, ris: model.RisState,
                   precoder: model.Precoder,
                   beta_lower: float = 1.0) -> FinalMetrics:
    channels = model.effective_channels(scenario, ris)
    return FinalMetrics(
        sum_rate=model.sum_rate(scenario, channels, precoder),
        sinr=model.sinr(scenario, channels, precoder),
        feasibility=model.feasibility_report(scenario, ris, precoder, beta_lower),
    )
