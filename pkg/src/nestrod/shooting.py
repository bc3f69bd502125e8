"""Two-point boundary-value solve for a tendon-loaded nested-tube stack.

The base pose and base twists are clamped; the unknown base strains
[u₁, v₁, twist curvature and dilation of each inner tube] are found by
shooting: integrate the cross-section ODE station by station, apply the
load transfer at every tube end / tendon anchor, and drive the terminal
wrench mismatches to zero with a damped Newton iteration. Tension is
ramped in uniform continuation steps so high-tension scenarios start
from an already-bent warm guess.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .assembly import AssemblySpec, SegmentPlan, assign_tendons, section_stiffness, segment_plan
from .errors import (DegenerateTendon, IllConditioned, NoConvergence,
                     SingularTransition)

_RECOVERABLE = (SingularTransition, DegenerateTendon, IllConditioned)
from .so3 import hat, reorthonormalize, rot_d3
from .statics import (RodState, SegmentContext, StateDerivative, TendonContext,
                      TubeContext, derived_strains, pack_state, state_derivative,
                      tube_wrench, unpack_state)

# Backtracking halves the Newton step at most this many times (down to 2^-10).
_LINE_SEARCH_HALVINGS = 10

# Intermediate tension-ramp steps only need to stay inside Newton's basin,
# so they stop this factor short of the final tolerances.
_RAMP_RELAX = 1e4

# With the relaxed target, a healthy intermediate step converges in a
# handful of iterations; past this many it is cheaper to subdivide the
# tension step than to keep crawling along a damped valley.
_RAMP_ITER_CAP = 12


@dataclass
class SolverOptions:
    """Knobs of the shooting driver; defaults suit the bundled scenarios."""

    steps_per_segment: int = 200
    force_tol: float = 1e-8          # N, per residual component
    moment_tol: float = 1e-10        # N·m, per residual component
    max_iterations: int = 50         # Newton cap per continuation step
    continuation_step: float = 0.5   # N of tension per ramp step
    fd_step_curvature: float = 1e-6
    fd_step_strain: float = 1e-8
    fd_step_beta: float = 1e-8
    stiffness_scale: float = 1.0     # validation hook: scales section stiffness


@dataclass
class EventContext:
    """One boundary: who ends, who continues, which tendons anchor here."""

    station: float
    ending: list[int]                    # local tube indices in the old segment
    continuing: list[int]                # local tube indices in the old segment
    terminating: list[tuple[TendonContext, int, int]]  # (tendon, assigned, anchored)

    @property
    def final(self) -> bool:
        return not self.continuing


@dataclass
class Problem:
    """Assembly compiled to per-segment contexts at one tension scale."""

    assembly: AssemblySpec
    plan: SegmentPlan
    contexts: list[SegmentContext]
    events: list[EventContext]
    residual_classes: list[str]          # "f" or "m" per residual component

    @property
    def n_tubes(self) -> int:
        return len(self.assembly.tubes)

    @property
    def guess_size(self) -> int:
        return 4 + 2 * self.n_tubes


def build_problem(assembly: AssemblySpec, options: SolverOptions,
                  tension_scale: float = 1.0) -> Problem:
    plan = segment_plan(assembly)
    assignment = assign_tendons(assembly, plan)

    tube_ctx = []
    for i, tube in enumerate(assembly.tubes):
        stiff = section_stiffness(tube).scaled(options.stiffness_scale)
        tube_ctx.append(TubeContext(index=i, kse_diag=stiff.kse_diag,
                                    kbt_diag=stiff.kbt_diag,
                                    rest=tube.rest_shape,
                                    offset=assembly.base_offsets[i]))

    tendon_ctx = [
        TendonContext(routing=t.routing, tension=t.tension * tension_scale,
                      tube=t.tube, termination=assembly.termination_station(j))
        for j, t in enumerate(assembly.tendons)
    ]

    contexts = []
    for seg, seg_assign in zip(plan.segments, assignment):
        locals_of = {g: a for a, g in enumerate(seg.tubes)}
        loads: list[list[TendonContext]] = [[] for _ in seg.tubes]
        for j in seg.tendons:
            loads[locals_of[seg_assign[j]]].append(tendon_ctx[j])
        contexts.append(SegmentContext(
            start=seg.start, end=seg.end,
            tubes=[tube_ctx[g] for g in seg.tubes], loads=loads))

    events = []
    classes: list[str] = []
    for seg, seg_assign, event in zip(plan.segments, assignment, plan.events):
        locals_of = {g: a for a, g in enumerate(seg.tubes)}
        ending = sorted(locals_of[g] for g in event.ending_tubes)
        continuing = [a for a in range(len(seg.tubes)) if a not in ending]
        terminating = [
            (tendon_ctx[j], locals_of[seg_assign[j]],
             locals_of[assembly.tendons[j].tube])
            for j in event.terminating_tendons
        ]
        events.append(EventContext(station=event.station, ending=ending,
                                   continuing=continuing,
                                   terminating=terminating))
        classes.extend(["f", "m"] * len(ending))
        if not continuing:
            classes.extend(["f", "f", "m", "m"])
    return Problem(assembly=assembly, plan=plan, contexts=contexts,
                   events=events, residual_classes=classes)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def integrate_segment(state: RodState, ctx: SegmentContext, steps: int,
                      record: bool = False):
    """March the cross-section ODE across one segment with fixed-step RK4.

    The frame is re-projected onto the rotation group after every step so
    drift never accumulates. Returns (end state, recorded packed states or
    None, worst condition estimate seen).
    """
    h = (ctx.end - ctx.start) / steps
    k = ctx.n_active
    y = pack_state(state)
    cond_max = 0.0
    trail = [y.copy()] if record else None

    def rhs(yv: np.ndarray, s: float, diagnostics: bool = False) -> np.ndarray:
        nonlocal cond_max
        deriv = state_derivative(unpack_state(yv, k, s), ctx,
                                 diagnostics=diagnostics)
        if diagnostics:
            cond_max = max(cond_max, float(np.max(deriv.cond)))
        return deriv.packed()

    for i in range(steps):
        s = ctx.start + i * h
        # The condition estimate is sampled once per macro step; the three
        # inner stages run the cheap solve.
        k1 = rhs(y, s, diagnostics=True)
        k2 = rhs(y + 0.5 * h * k1, s + 0.5 * h)
        k3 = rhs(y + 0.5 * h * k2, s + 0.5 * h)
        k4 = rhs(y + h * k3, s + h)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        st = unpack_state(y, k, s + h)
        st.R = reorthonormalize(st.R)
        y = pack_state(st)
        if record:
            trail.append(y.copy())

    return unpack_state(y, k, ctx.end), trail, cond_max


# ---------------------------------------------------------------------------
# boundary transfer
# ---------------------------------------------------------------------------


def _theta_all(state: RodState) -> np.ndarray:
    zero = np.zeros(state.theta.shape[:-1] + (1,))
    return np.concatenate([zero, state.theta], axis=-1)


def _rot2(theta: np.ndarray) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    row0 = np.stack([c, -s], axis=-1)
    row1 = np.stack([s, c], axis=-1)
    return np.stack([row0, row1], axis=-2)


def _mv(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...j->...i", m, v)


def apply_transition(state: RodState, event: EventContext, ctx: SegmentContext):
    """Transfer loads across a boundary and rebuild the next segment's state.

    Tendons anchoring here pull a point force/moment on their anchor tube.
    Each ending tube's remaining twist/axial wrench components become
    residual entries; its bending/shear components transfer into the
    continuing stack. The continuing tubes' strains are re-solved in closed
    form from their post-boundary wrench targets.

    Returns (next state or None at the final station, residual component
    list, per-tube leftover wrench pairs for diagnostics).
    """
    k = ctx.n_active
    us, vs = derived_strains(state)
    ns, ms = tube_wrench(state, ctx)
    thetas = _theta_all(state)

    tip_f = [np.zeros_like(ns[0]) for _ in range(k)]
    tip_m = [np.zeros_like(ms[0]) for _ in range(k)]
    for tendon, assigned, anchored in event.terminating:
        r, rdot, _ = tendon.routing.eval(state.s)
        pb = _mv(hat(us[assigned]), np.broadcast_to(r, us[assigned].shape))
        pb = pb + rdot + vs[assigned]
        direction = pb / np.linalg.norm(pb, axis=-1, keepdims=True)
        f_a = -tendon.tension * direction
        m_a = _mv(hat(r), f_a)
        spin = rot_d3(thetas[..., assigned] - thetas[..., anchored])
        tip_f[anchored] = tip_f[anchored] + _mv(spin, f_a)
        tip_m[anchored] = tip_m[anchored] + _mv(spin, m_a)

    left_n = [ns[i] - tip_f[i] for i in range(k)]
    left_m = [ms[i] - tip_m[i] for i in range(k)]

    residual = []
    for e in event.ending:
        residual.append(left_n[e][..., 2])
        residual.append(left_m[e][..., 2])

    if event.final:
        comp_f = sum(_mv(rot_d3(thetas[..., i]), left_n[i]) for i in range(k))
        comp_m = sum(_mv(rot_d3(thetas[..., i]), left_m[i]) for i in range(k))
        residual.extend([comp_f[..., 0], comp_f[..., 1],
                         comp_m[..., 0], comp_m[..., 1]])
        return None, residual, (left_n, left_m)

    cont = event.continuing
    ref = cont[0]
    th_ref = thetas[..., ref]
    rel = [thetas[..., c] - th_ref for c in cont]

    # Composite bending/shear target in the new reference frame: every
    # tube's leftover transfers, ending tubes included.
    target_f = sum(_mv(rot_d3(thetas[..., i] - th_ref), left_n[i])
                   for i in range(k))
    target_m = sum(_mv(rot_d3(thetas[..., i] - th_ref), left_m[i])
                   for i in range(k))

    # Twist/axial components re-solve per continuing tube.
    rests = []
    for c in cont:
        tube = ctx.tubes[c]
        ustar, _ = tube.rest.curvature(state.s + tube.offset)
        vstar, _ = tube.rest.stretch(state.s + tube.offset)
        rests.append((ustar, vstar))

    u_z = []
    n_z_ref = None
    for idx, c in enumerate(cont):
        tube = ctx.tubes[c]
        m_z = left_m[c][..., 2]
        u_z.append(rests[idx][0][2] + m_z / tube.kbt_diag[2])
        if idx == 0:
            n_z_ref = left_n[c][..., 2]

    ref_tube = ctx.tubes[ref]
    v1_z = rests[0][1][2] + n_z_ref / ref_tube.kse_diag[2]
    if np.any(v1_z <= 0.0):
        raise SingularTransition(
            f"reference tube extension non-positive after {event.station:.6f} m")

    betas = []
    for idx, c in enumerate(cont[1:], start=1):
        tube = ctx.tubes[c]
        bz = (rests[idx][1][2] + left_n[c][..., 2] / tube.kse_diag[2]) / v1_z
        if np.any(bz <= 0.0):
            raise SingularTransition(
                f"tube {tube.index + 1} dilation non-positive after "
                f"{event.station:.6f} m")
        betas.append(bz)

    # Shared bending curvature from the 2x2 stack-stiffness system.
    batch = state.u1.shape[:-1]
    s_mat = np.zeros(batch + (2, 2))
    rhs_m = target_m[..., 0:2].copy()
    rhs_f = target_f[..., 0:2].copy()
    ga_beta = np.zeros(batch)
    for idx, c in enumerate(cont):
        tube = ctx.tubes[c]
        rot = _rot2(rel[idx])
        ei = np.array([[tube.kbt_diag[0], 0.0], [0.0, tube.kbt_diag[1]]])
        s_mat = s_mat + rot @ ei @ np.swapaxes(rot, -1, -2)
        rhs_m = rhs_m + _mv(rot, tube.kbt_diag[0:2] * rests[idx][0][0:2])
        rhs_f = rhs_f + tube.kse_diag[0] * _mv(rot, rests[idx][1][0:2])
        ga_beta = ga_beta + tube.kse_diag[0] * (1.0 if idx == 0 else betas[idx - 1])

    det = (s_mat[..., 0, 0] * s_mat[..., 1, 1]
           - s_mat[..., 0, 1] * s_mat[..., 1, 0])
    if np.any(np.abs(det) < 1e-300) or np.any(ga_beta <= 0.0):
        raise SingularTransition(
            f"stack stiffness singular after {event.station:.6f} m")
    u1_xy = np.stack([
        (s_mat[..., 1, 1] * rhs_m[..., 0] - s_mat[..., 0, 1] * rhs_m[..., 1]) / det,
        (s_mat[..., 0, 0] * rhs_m[..., 1] - s_mat[..., 1, 0] * rhs_m[..., 0]) / det,
    ], axis=-1)
    v1_xy = rhs_f / ga_beta[..., None]

    new_state = RodState(
        p=state.p.copy(),
        R=state.R @ rot_d3(th_ref),
        u1=np.concatenate([u1_xy, u_z[0][..., None]], axis=-1),
        v1=np.concatenate([v1_xy, v1_z[..., None]], axis=-1),
        theta=np.stack(rel[1:], axis=-1) if len(cont) > 1
        else state.theta[..., :0],
        u_d3=np.stack(u_z[1:], axis=-1) if len(cont) > 1
        else state.u_d3[..., :0],
        beta=np.stack(betas, axis=-1) if betas else state.beta[..., :0],
        s=event.station,
    )
    return new_state, residual, (left_n, left_m)


# ---------------------------------------------------------------------------
# residual and Newton driver
# ---------------------------------------------------------------------------


def _base_state(problem: Problem, guess: np.ndarray) -> RodState:
    n = problem.n_tubes
    batch = guess.shape[:-1]
    eye = np.broadcast_to(np.eye(3), batch + (3, 3)).copy()
    twists = np.broadcast_to(
        np.asarray(problem.assembly.base_twists[1:], dtype=float),
        batch + (n - 1,)).copy()
    return RodState(p=np.zeros(batch + (3,)), R=eye,
                    u1=guess[..., 0:3].copy(), v1=guess[..., 3:6].copy(),
                    theta=twists, u_d3=guess[..., 6:5 + n].copy(),
                    beta=guess[..., 5 + n:4 + 2 * n].copy(), s=0.0)


def boundary_residual(guess: np.ndarray, problem: Problem,
                      options: SolverOptions, record: bool = False):
    """Residual vector of the shooting map for a (batched) base-strain guess.

    Component order: per boundary in station order, [axial force, twist
    moment] of each tube ending there; the final station appends the whole
    stack's transverse force then bending moment mismatch. Returns
    (residual (..., size), trail list or None, worst condition estimate).
    """
    state = _base_state(problem, guess)
    parts: list[np.ndarray] = []
    trail = [] if record else None
    cond_max = 0.0
    for ctx, event in zip(problem.contexts, problem.events):
        state, rec, cond = integrate_segment(state, ctx, options.steps_per_segment,
                                             record=record)
        cond_max = max(cond_max, cond)
        if record:
            trail.append(rec)
        state, res, _ = apply_transition(state, event, ctx)
        parts.extend(res)
    return np.stack(parts, axis=-1), trail, cond_max


@dataclass
class ConvergenceReport:
    converged: bool
    iterations: int
    continuation_steps: int
    scaled_residual: float            # max |component| / its tolerance
    residual: np.ndarray
    condition_max: float
    message: str = ""

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "continuation_steps": self.continuation_steps,
            "scaled_residual": self.scaled_residual,
            "residual_norm": float(np.linalg.norm(self.residual)),
            "condition_max": self.condition_max,
            "message": self.message,
        }


@dataclass
class SegmentSolution:
    """Sampled solution of one segment, tubes listed outermost first."""

    start: float
    end: float
    tubes: list[int]                 # global tube indices
    stations: np.ndarray             # (S,)
    p: np.ndarray                    # (S, 3)
    R: np.ndarray                    # (S, 3, 3)
    u1: np.ndarray                   # (S, 3)
    v1: np.ndarray                   # (S, 3)
    theta: np.ndarray                # (S, k-1)
    u_d3: np.ndarray                 # (S, k-1)
    beta: np.ndarray                 # (S, k-1)
    tube_u: np.ndarray               # (S, k, 3) per-tube curvature
    tube_v: np.ndarray               # (S, k, 3)
    tube_n: np.ndarray               # (S, k, 3) internal force, own frame
    tube_m: np.ndarray               # (S, k, 3)

    @property
    def ref_tube(self) -> int:
        return self.tubes[0]


@dataclass
class Solution:
    """Converged robot shape plus everything the exporters need."""

    assembly: AssemblySpec
    options: SolverOptions
    guess: np.ndarray
    segments: list[SegmentSolution]
    report: ConvergenceReport
    leftovers: list = field(default_factory=list)

    @property
    def tip_position(self) -> np.ndarray:
        return self.segments[-1].p[-1]

    @property
    def tip_frame(self) -> np.ndarray:
        return self.segments[-1].R[-1]

    @property
    def total_length(self) -> float:
        return self.segments[-1].end


def _expand_segment(ctx: SegmentContext, trail: list[np.ndarray]) -> SegmentSolution:
    k = ctx.n_active
    steps = len(trail) - 1
    h = (ctx.end - ctx.start) / steps
    stations = ctx.start + h * np.arange(steps + 1)
    batch = np.stack(trail, axis=0)
    state = unpack_state(batch, k, ctx.start)
    # Strains and wrench are station-independent maps except for the rest
    # shape, which needs true stations: evaluate per sample.
    us = np.zeros((steps + 1, k, 3))
    vsz = np.zeros((steps + 1, k, 3))
    nw = np.zeros((steps + 1, k, 3))
    mw = np.zeros((steps + 1, k, 3))
    for j in range(steps + 1):
        st = unpack_state(trail[j], k, float(stations[j]))
        u_list, v_list = derived_strains(st)
        n_list, m_list = tube_wrench(st, ctx)
        for i in range(k):
            us[j, i] = u_list[i]
            vsz[j, i] = v_list[i]
            nw[j, i] = n_list[i]
            mw[j, i] = m_list[i]
    return SegmentSolution(
        start=ctx.start, end=ctx.end, tubes=[t.index for t in ctx.tubes],
        stations=stations, p=state.p, R=state.R, u1=state.u1, v1=state.v1,
        theta=state.theta, u_d3=state.u_d3, beta=state.beta,
        tube_u=us, tube_v=vsz, tube_n=nw, tube_m=mw)


def rest_guess(problem: Problem) -> np.ndarray:
    """Initial guess: every tube keeps its rest strains, no dilation."""
    assembly = problem.assembly
    g = np.zeros(problem.guess_size)
    u0, _ = assembly.tubes[0].rest_shape.curvature(assembly.base_offsets[0])
    v0, _ = assembly.tubes[0].rest_shape.stretch(assembly.base_offsets[0])
    g[0:3] = u0
    g[3:6] = v0
    n = problem.n_tubes
    for i in range(1, n):
        ui, _ = assembly.tubes[i].rest_shape.curvature(assembly.base_offsets[i])
        g[5 + i] = ui[2]
        g[4 + n + i] = 1.0
    return g


def _scaled_max(res: np.ndarray, tol: np.ndarray) -> float:
    return float(np.max(np.abs(res) / tol))


def _newton(problem: Problem, options: SolverOptions, guess: np.ndarray,
            relax: float = 1.0, iter_cap: int | None = None):
    """Damped Newton on the shooting residual. Returns (guess, report data).

    ``relax`` loosens the convergence target by that factor (the returned
    metric is always against the unrelaxed tolerances); ``iter_cap``
    tightens the iteration budget below the configured maximum.
    """
    size = problem.guess_size
    n = problem.n_tubes
    tol = np.where(np.array(problem.residual_classes) == "f",
                   options.force_tol, options.moment_tol)
    cap = options.max_iterations if iter_cap is None \
        else min(iter_cap, options.max_iterations)
    h = np.empty(size)
    h[0:3] = options.fd_step_curvature
    h[3:6] = options.fd_step_strain
    h[6:5 + n] = options.fd_step_curvature
    h[5 + n:] = options.fd_step_beta

    cond_max = 0.0
    res, _, cond = boundary_residual(guess, problem, options)
    cond_max = max(cond_max, cond)
    metric = _scaled_max(res, tol)
    iterations = 0
    while metric >= relax:
        if iterations >= cap:
            return guess, res, metric, iterations, cond_max, False
        stencil = np.concatenate([guess[None, :], guess[None, :] + np.diag(h)],
                                 axis=0)
        try:
            res_all, _, cond = boundary_residual(stencil, problem, options)
        except _RECOVERABLE:
            return guess, res, metric, iterations, cond_max, False
        cond_max = max(cond_max, cond)
        res = res_all[0]
        metric = _scaled_max(res, tol)
        if metric < relax:
            break
        jac = ((res_all[1:] - res) / h[:, None]).T
        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(jac, -res, rcond=None)[0]

        factors = 0.5 ** np.arange(_LINE_SEARCH_HALVINGS + 1)
        accepted = False
        try:
            # One batched call covers the whole backtracking ladder; pick
            # the longest step that still reduces the scaled residual.
            cands = guess + factors[:, None] * step
            cand_res, _, cond = boundary_residual(cands, problem, options)
            cond_max = max(cond_max, cond)
            cand_metrics = np.max(np.abs(cand_res) / tol, axis=-1)
            better = np.flatnonzero(cand_metrics < metric)
            if better.size:
                j = int(better[0])
                guess, res, metric = cands[j], cand_res[j], float(cand_metrics[j])
                accepted = True
        except _RECOVERABLE:
            # A bold trial step may leave the physical domain (tube dilation
            # or extension crossing zero), poisoning the batch; fall back to
            # shrinking one candidate at a time.
            for t in factors:
                cand = guess + t * step
                try:
                    cand_res, _, cond = boundary_residual(cand, problem, options)
                except _RECOVERABLE:
                    continue
                cond_max = max(cond_max, cond)
                cand_metric = _scaled_max(cand_res, tol)
                if cand_metric < metric:
                    guess, res, metric = cand, cand_res, cand_metric
                    accepted = True
                    break
        iterations += 1
        if not accepted:
            return guess, res, metric, iterations, cond_max, False
    return guess, res, metric, iterations, cond_max, True


def shoot(assembly: AssemblySpec, options: SolverOptions | None = None,
          initial_guess: np.ndarray | None = None) -> Solution:
    """Solve the clamped-base statics of an assembly.

    A caller-supplied ``initial_guess`` (e.g. the previous point of a sweep)
    is tried directly at full tension first; if that stalls, the solver
    falls back to the tension ramp from the rest guess. Raises
    :class:`NoConvergence` with a diagnostic report when every route fails.
    """
    options = options or SolverOptions()
    # The ramp is sized by the combined pull of all tendons: three tendons
    # at 2 N load the stack like one at 6 N, and the first step has to stay
    # inside Newton's basin around the rest state.
    total_tension = sum(t.tension for t in assembly.tendons)
    ramp_steps = max(1, math.ceil(total_tension / options.continuation_step)) \
        if total_tension > 0 else 1
    # Extreme tensions would otherwise schedule thousands of uniform steps;
    # past this count the adaptive subdivision is the better tool anyway.
    ramp_steps = min(ramp_steps, 64)

    attempts: list[tuple[np.ndarray, bool]] = []
    if initial_guess is not None:
        attempts.append((np.asarray(initial_guess, dtype=float), False))
    attempts.append((None, True))

    last_error: NoConvergence | None = None
    for start_guess, use_ramp in attempts:
        total_iterations = 0
        cond_max = 0.0
        problem_full = build_problem(assembly, options, tension_scale=1.0)
        guess = start_guess if start_guess is not None else rest_guess(problem_full)
        queue = [(j + 1) / ramp_steps for j in range(ramp_steps)] if use_ramp \
            else [1.0]
        min_gap = (1.0 / ramp_steps) / 64.0
        step_budget = ramp_steps + 24
        ok = True
        history: list[tuple[float, np.ndarray]] = []
        s_done = 0.0
        steps_run = 0
        while queue:
            scale = queue[0]
            problem = problem_full if scale == 1.0 else build_problem(
                assembly, options, tension_scale=scale)
            start = guess
            if len(history) >= 2:
                # Secant prediction along the ramp: warm-started steps then
                # land inside Newton's fast region instead of re-entering
                # the damped phase every time.
                (s_a, g_a), (s_b, g_b) = history[-2], history[-1]
                if s_b > s_a:
                    start = g_b + (g_b - g_a) * ((scale - s_b) / (s_b - s_a))
            relax = 1.0 if scale == 1.0 else _RAMP_RELAX
            cap = None if scale == 1.0 else _RAMP_ITER_CAP
            out = None
            failure = "stalled line search or iteration cap"
            if start is not guess:
                try:
                    out = _newton(problem, options, start, relax, cap)
                except _RECOVERABLE:
                    out = None
                if out is not None and not out[5]:
                    out = None
            if out is None:
                # Either no prediction was available or it overshot the
                # physical domain / stalled; run from the last converged guess.
                try:
                    out = _newton(problem, options, guess, relax, cap)
                except _RECOVERABLE as exc:
                    failure = f"integration left the physical domain ({exc})"
            metric, res = float("inf"), np.array([])
            if out is not None:
                new_guess, res, metric, iters, cond, converged = out
                total_iterations += iters
                cond_max = max(cond_max, cond)
                if converged:
                    guess = new_guess
                    history.append((scale, guess))
                    queue.pop(0)
                    s_done = scale
                    steps_run += 1
                    continue
            # The step was too ambitious: retry halfway between the last
            # converged tension and this one, until the interval collapses.
            steps_run += 1
            if use_ramp and scale - s_done > min_gap and steps_run < step_budget:
                queue.insert(0, 0.5 * (s_done + scale))
                continue
            last_error = NoConvergence(
                f"shooting stalled at tension scale {scale:.3f} with "
                f"scaled residual {metric:.3e} after {total_iterations} "
                f"iterations",
                report=ConvergenceReport(
                    converged=False, iterations=total_iterations,
                    continuation_steps=steps_run,
                    scaled_residual=metric, residual=res,
                    condition_max=cond_max,
                    message=failure,
                ))
            ok = False
            break
        if ok:
            res, trail, cond = boundary_residual(guess, problem_full, options,
                                                 record=True)
            cond_max = max(cond_max, cond)
            tol = np.where(np.array(problem_full.residual_classes) == "f",
                           options.force_tol, options.moment_tol)
            report = ConvergenceReport(
                converged=True, iterations=total_iterations,
                continuation_steps=steps_run,
                scaled_residual=_scaled_max(res, tol), residual=res,
                condition_max=cond_max)
            segments = [_expand_segment(ctx, rec)
                        for ctx, rec in zip(problem_full.contexts, trail)]
            return Solution(assembly=assembly, options=options, guess=guess,
                            segments=segments, report=report)
    raise last_error


def twist_consistency(solution: Solution) -> float:
    """Worst |θ_i(s) − θ_i(0) − ∫(u_d3,i − u1,z)| per 0.1 m, by Simpson.

    A pure bookkeeping identity of the integrator: the relative twist
    angle must match the quadrature of its own rate over every segment.
    """
    worst = 0.0
    for seg in solution.segments:
        if seg.theta.shape[-1] == 0:
            continue
        stations = seg.stations
        span = seg.end - seg.start
        if span <= 0 or len(stations) < 3:
            continue
        integrand = seg.u_d3 - seg.u1[:, 2:3]
        m = len(stations) - 1
        if m % 2 == 1:      # Simpson needs an even interval count
            integrand = integrand[:-1]
            stations = stations[:-1]
            m -= 1
        h = (stations[-1] - stations[0]) / m
        weights = np.ones(m + 1)
        weights[1:-1:2] = 4.0
        weights[2:-1:2] = 2.0
        integral = h / 3.0 * np.einsum("s,si->i", weights, integrand)
        drift = np.abs(seg.theta[m] - seg.theta[0] - integral)
        scale = max(stations[-1] - stations[0], 1e-12) / 0.1
        worst = max(worst, float(np.max(drift) / scale))
    return worst
