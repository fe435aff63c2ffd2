"""Space-time adaptive evolution loop with blow-up detection.

The loop controls the time step with a scaled time indicator, marks cells
against a scaled space indicator, multiplies all four tolerances by the
fixed-point parameter of the previous slab, and stops either at the final
time or when the fixed-point parameter stops existing (the blow-up
signal).  A non-adaptive fixed-mesh runner shares the same estimator
bookkeeping for convergence studies.
"""

import os
from dataclasses import dataclass, field as dfield

import numpy as np

from . import fespace as fe
from . import scheme as sc
from . import estimators as est


class ExtrapolationError(ValueError):
    """Blow-up time extrapolation needs strictly increasing positive norms."""


@dataclass(frozen=True)
class Tolerances:
    """The four adaptivity tolerances.

    Refinement and coarsening thresholds must sit at least a factor 8
    apart, otherwise halving/doubling the time step (which moves the time
    indicator by about 4x) can oscillate across the band forever.
    """

    stol_plus: float
    stol_minus: float
    ttol_plus: float
    ttol_minus: float

    def __post_init__(self):
        for name in ("stol_plus", "stol_minus", "ttol_plus", "ttol_minus"):
            if getattr(self, name) <= 0:
                raise ValueError("%s must be positive" % name)
        if self.stol_minus >= self.stol_plus or self.ttol_minus >= self.ttol_plus:
            raise ValueError("coarsening tolerances must sit below refinement ones")
        if self.stol_plus / self.stol_minus < 8 or self.ttol_plus / self.ttol_minus < 8:
            raise ValueError("refine/coarsen tolerance ratio must be >= 8")

    @classmethod
    def from_plus(cls, stol_plus, ttol_plus, ratio=16.0):
        return cls(stol_plus, stol_plus / ratio, ttol_plus, ttol_plus / ratio)


@dataclass
class DriverOptions:
    c_inf: float = 1.0
    time_quadrature: int = 3
    scale_tolerances: bool = True
    first_interval_cap: int = 40
    step_adjust_cap: int = 30
    max_steps: int = 100000
    dump_every: int = 0
    out_dir: str = "."


@dataclass
class RunResult:
    trajectory: object
    ledger: object
    stop_reason: str
    steps: int
    final_time: float
    final_norm: float
    tinf_estimate: object = None
    avg_dofs: float = 0.0
    caps_hit: list = dfield(default_factory=list)
    final_tolerances: object = None

    def summary(self):
        tinf = "%.6g" % self.tinf_estimate if self.tinf_estimate else "n/a"
        return ("steps=%d final_time=%.6g linf_U=%.6g tinf=%s "
                "avg_dofs=%.1f stop=%s"
                % (self.steps, self.final_time, self.final_norm, tinf,
                   self.avg_dofs, self.stop_reason))


def time_indicator(eta_T, r_tilde_prev):
    """Scaled temporal refinement indicator."""
    if r_tilde_prev < 1.0:
        raise ValueError("accumulated factor must be >= 1")
    return eta_T / r_tilde_prev


def alpha_value(modulus, workspace, xi, r_tilde_prev, k):
    """Weight of the space estimator inside the space indicator."""
    if modulus.is_zero:
        return 1.0
    integral = workspace.modulus_integral(modulus, xi)
    return max(1.0, integral / (r_tilde_prev * k))


def space_indicator(eta_S_map, eta_dot_map, alpha, r_tilde_prev):
    """Per-cell space refinement indicator (slabs after the first)."""
    return np.maximum(alpha * np.asarray(eta_S_map),
                      np.asarray(eta_dot_map) / r_tilde_prev)


def first_space_indicator(e0_map, eta_S0_map, eta_S1_map, eta_dot_map, alpha):
    """Per-cell space indicator for the first interval (includes ||e(0)||)."""
    return np.maximum.reduce([
        np.asarray(e0_map), alpha * np.asarray(eta_S0_map),
        alpha * np.asarray(eta_S1_map), np.asarray(eta_dot_map)])


def extrapolate_blowup(t_prev, norm_prev, t_last, norm_last):
    """Blow-up time from two consecutive (time, sup-norm) samples.

    Exact for norms growing like a first-order pole 1/(T_inf - t).
    """
    if not (norm_last > norm_prev > 0.0):
        raise ExtrapolationError("norms must be positive and increasing")
    return (t_last * norm_last - t_prev * norm_prev) / (norm_last - norm_prev)


def weighted_average_dofs(trajectory):
    """Time-step weighted mean of the overlay-space dofs of each slab."""
    slabs = trajectory.slabs
    if not slabs:
        raise ValueError("empty trajectory")
    total = 0.0
    for s in slabs:
        lam = s.overlay_dofs
        if not lam:
            mp, mn = s.space_prev.mesh, s.space_next.mesh
            if mp.leafset == mn.leafset:
                lam = s.space_next.n_free
            else:
                lam = fe.Space(mp.overlay_finest(mn),
                               s.space_next.degree).n_free
            s.overlay_dofs = lam
        total += s.k * lam
    return total / trajectory.final_time


def _modify_mesh(mesh, indicator, stol_plus, stol_minus):
    """One refine/coarsen pass against the per-cell indicator."""
    indicator = np.asarray(indicator)
    refine_keys = [mesh.leaves[i] for i in np.flatnonzero(indicator > stol_plus)]
    coarsen_keys = [mesh.leaves[i] for i in np.flatnonzero(indicator < stol_minus)]
    out = mesh
    if refine_keys:
        out = out.refine(refine_keys)
    if coarsen_keys:
        out = out.coarsen([k for k in coarsen_keys if k in out.leafset])
    return out


def _maybe_dump(opts, step, mesh, field):
    if opts.dump_every <= 0 or step % opts.dump_every != 0:
        return
    os.makedirs(opts.out_dir, exist_ok=True)
    cx = mesh.x0 + 0.5 * mesh.hx
    cy = mesh.y0 + 0.5 * mesh.hy
    data = {"u_center": field.eval(cx, cy),
            "u_maxabs": np.abs(field.sample_values("val")).max(axis=1)}
    mesh.dump_vtk(os.path.join(opts.out_dir, "step_%05d.vtk" % step), data)


def _tinf_from_ledger(ledger):
    if len(ledger.t) < 2:
        return None
    try:
        return extrapolate_blowup(ledger.t[-2], ledger.linf_u[-2],
                                  ledger.t[-1], ledger.linf_u[-1])
    except ExtrapolationError:
        return None


def run_adaptive(problem, tolerances, degree, initial_mesh, k1, options=None):
    """Adaptive run; returns a RunResult with trajectory and ledger.

    Stops at t = T for fixed-time problems, or on nonexistence of the
    slab's fixed-point parameter (expected near blow-up).  Uncertified
    trailing steps are discarded: every recorded step carries a delta.
    """
    opts = options or DriverOptions()
    modulus = problem.modulus
    q = opts.time_quadrature
    c_inf = opts.c_inf
    T = problem.T
    if k1 <= 0:
        raise ValueError("k1 must be positive")
    if T is not None and k1 > T:
        k1 = T
    caps = []
    ttol_p, ttol_m = tolerances.ttol_plus, tolerances.ttol_minus
    stol_p, stol_m = tolerances.stol_plus, tolerances.stol_minus

    # First interval: refine mesh and halve k concurrently until both
    # indicators sit below their refinement tolerances.
    mesh = initial_mesh
    k = k1
    passes = 0
    while True:
        space = fe.Space(mesh, degree)
        hmin = mesh.min_diameter()
        U0 = sc.project_initial(problem, space)
        U1, Uhat = sc.imex_step(problem, U0, space, k, 0.0)
        ws = est.SlabWorkspace(
            problem, U0, sc.InitialLaplacian(problem.a, problem.lap_u0),
            space, 0.0, q=q)
        ws.set_state(U1, Uhat, k)
        eta_T = ws.eta_time()
        eta_S0 = est.initial_space_estimator(problem, U0)
        eta_S1 = ws.eta_space_map()
        dot1, xi_prime = ws.eta_dot_maps()
        e0_map = est.initial_error_map(problem, U0)
        xi = est.xi_value(eta_S0, hmin, eta_S1, hmin)
        alpha = alpha_value(modulus, ws, xi, 1.0, k)
        ref_T = eta_T
        ref_S = first_space_indicator(e0_map, eta_S0, eta_S1, dot1, alpha)
        if ref_T <= ttol_p and ref_S.max() <= stol_p:
            break
        if passes >= opts.first_interval_cap:
            caps.append(("first_interval", passes))
            break
        mesh = _modify_mesh(mesh, ref_S, stol_p, stol_m)
        if ref_T > ttol_p:
            k *= 0.5
        passes += 1

    ledger = est.EstimatorLedger(c_inf=c_inf, modulus_is_zero=modulus.is_zero)
    ledger.set_initial(problem, U0, eta_S0)
    psi = est.psi_update(ledger, 1, eta_T, xi, xi_prime, modulus, ws)
    delta = est.fixed_point_delta(psi, xi, k, 0.0, modulus, ws.u_norm,
                                  c_inf, q)
    traj = sc.Trajectory(U0)
    if delta is None:
        return RunResult(
            trajectory=traj, ledger=ledger,
            stop_reason="delta_nonexistent at step 1", steps=0,
            final_time=0.0, final_norm=U0.linf_norm(), caps_hit=caps,
            final_tolerances=(stol_p, stol_m, ttol_p, ttol_m))
    r = est.gronwall_factor(delta, psi, xi, k, 0.0, modulus, ws.u_norm,
                            c_inf, q)
    slab = sc.make_slab(problem, 1, 0.0, k, U0, U1, Uhat)
    slab.overlay_dofs = ws.overlay_free_dofs()
    traj.slabs.append(slab)
    ledger.add_step(1, k, k, space.n_free, U1.linf_norm(), eta_T, xi,
                    xi_prime, psi, delta, r, eta_S1, mesh.min_diameter(),
                    dot1)
    _maybe_dump(opts, 1, mesh, U1)

    t = k
    m = 1
    u_cur = U1
    stop = None
    while True:
        if T is not None and t >= T * (1.0 - 1e-14):
            stop = "final_time"
            break
        if m >= opts.max_steps:
            stop = "max_steps"
            caps.append(("max_steps", m))
            break
        if opts.scale_tolerances:
            ttol_p *= delta
            ttol_m *= delta
            stol_p *= delta
            stol_m *= delta

        r_tilde_prev = ledger.r_tilde[-1]
        A_prev = slab.A_next
        space_prev = space
        prev_map = ledger.eta_S_maps[-1]
        hmin_prev = mesh.min_diameter()
        clipped = False
        if T is not None and t + k >= T * (1.0 - 1e-12):
            k = T - t
            clipped = True
        u_next, u_hat = sc.imex_step(problem, u_cur, space, k, t)
        ws = est.SlabWorkspace(problem, u_cur, A_prev, space, t, q=q)
        ws.set_state(u_next, u_hat, k)
        eta_T = ws.eta_time()
        ref_T = time_indicator(eta_T, r_tilde_prev)
        adjusts = 0
        while not (ttol_m <= ref_T <= ttol_p):
            if adjusts >= opts.step_adjust_cap:
                caps.append(("step_adjust", m + 1))
                break
            if ref_T > ttol_p:
                k *= 0.5
                clipped = False
            else:
                if clipped:
                    break
                if T is not None and t + 2.0 * k >= T * (1.0 - 1e-12):
                    k = T - t
                    clipped = True
                else:
                    k *= 2.0
            u_next, u_hat = sc.imex_step(problem, u_cur, space, k, t)
            ws.set_state(u_next, u_hat, k)
            eta_T = ws.eta_time()
            ref_T = time_indicator(eta_T, r_tilde_prev)
            adjusts += 1

        # One spatial refine/coarsen pass, then re-solve if the mesh moved.
        eta_S = ws.eta_space_map()
        dot_map, xi_prime = ws.eta_dot_maps()
        xi = est.xi_value(prev_map, hmin_prev, eta_S, mesh.min_diameter())
        alpha = alpha_value(modulus, ws, xi, r_tilde_prev, k)
        ref_S = space_indicator(eta_S, dot_map, alpha, r_tilde_prev)
        new_mesh = _modify_mesh(mesh, ref_S, stol_p, stol_m)
        if new_mesh.leafset != mesh.leafset:
            mesh = new_mesh
            space = fe.Space(mesh, degree)
            u_next, u_hat = sc.imex_step(problem, u_cur, space, k, t)
            ws = est.SlabWorkspace(problem, u_cur, A_prev, space, t, q=q)
            ws.set_state(u_next, u_hat, k)
            eta_T = ws.eta_time()
            eta_S = ws.eta_space_map()
            dot_map, xi_prime = ws.eta_dot_maps()
            xi = est.xi_value(prev_map, hmin_prev, eta_S, mesh.min_diameter())

        psi = est.psi_update(ledger, m + 1, eta_T, xi, xi_prime, modulus, ws)
        delta = est.fixed_point_delta(psi, xi, k, t, modulus, ws.u_norm,
                                      c_inf, q)
        if delta is None:
            stop = "delta_nonexistent at step %d" % (m + 1)
            break
        r = est.gronwall_factor(delta, psi, xi, k, t, modulus, ws.u_norm,
                                c_inf, q)
        slab = sc.make_slab(problem, m + 1, t, k, u_cur, u_next, u_hat)
        slab.A_prev = A_prev
        slab.overlay_dofs = ws.overlay_free_dofs()
        traj.slabs.append(slab)
        t = T if clipped else t + k
        slab.t_next = t
        m += 1
        ledger.add_step(m, t, k, space.n_free, u_next.linf_norm(), eta_T,
                        xi, xi_prime, psi, delta, r, eta_S,
                        mesh.min_diameter(), dot_map)
        u_cur = u_next
        _maybe_dump(opts, m, mesh, u_cur)

    return RunResult(
        trajectory=traj, ledger=ledger, stop_reason=stop, steps=m,
        final_time=t, final_norm=u_cur.linf_norm(),
        tinf_estimate=_tinf_from_ledger(ledger),
        avg_dofs=weighted_average_dofs(traj) if traj.slabs else 0.0,
        caps_hit=caps, final_tolerances=(stol_p, stol_m, ttol_p, ttol_m))


def run_fixed(problem, mesh, degree, k, T=None, options=None):
    """Uniform-step run on a fixed mesh with full estimator bookkeeping.

    No adaptivity: the mesh never changes and k is constant up to the
    final clipped step.  Steps keep running even if some delta does not
    exist (its ledger column is then empty and the conditional bound
    unavailable from that step on).
    """
    opts = options or DriverOptions()
    modulus = problem.modulus
    q = opts.time_quadrature
    c_inf = opts.c_inf
    if T is None:
        T = problem.T
    if T is None:
        raise ValueError("run_fixed needs a finite final time")
    space = fe.Space(mesh, degree)
    hmin = mesh.min_diameter()
    U0 = sc.project_initial(problem, space)
    eta_S0 = est.initial_space_estimator(problem, U0)
    ledger = est.EstimatorLedger(c_inf=c_inf, modulus_is_zero=modulus.is_zero)
    ledger.set_initial(problem, U0, eta_S0)
    traj = sc.Trajectory(U0)

    t = 0.0
    m = 0
    u_cur = U0
    A_prev = sc.InitialLaplacian(problem.a, problem.lap_u0)
    prev_map = eta_S0
    while t < T * (1.0 - 1e-14):
        clipped = t + k >= T * (1.0 - 1e-12)
        k_step = (T - t) if clipped else k
        u_next, u_hat = sc.imex_step(problem, u_cur, space, k_step, t)
        ws = est.SlabWorkspace(problem, u_cur, A_prev, space, t, q=q)
        ws.set_state(u_next, u_hat, k_step)
        eta_T = ws.eta_time()
        eta_S = ws.eta_space_map()
        dot_map, xi_prime = ws.eta_dot_maps()
        xi = est.xi_value(prev_map, hmin, eta_S, hmin)
        psi = est.psi_update(ledger, m + 1, eta_T, xi, xi_prime, modulus, ws)
        delta = est.fixed_point_delta(psi, xi, k_step, t, modulus, ws.u_norm,
                                      c_inf, q)
        r = None if delta is None else est.gronwall_factor(
            delta, psi, xi, k_step, t, modulus, ws.u_norm, c_inf, q)
        slab = sc.make_slab(problem, m + 1, t, k_step, u_cur, u_next, u_hat)
        slab.A_prev = A_prev
        slab.overlay_dofs = space.n_free
        traj.slabs.append(slab)
        t = T if clipped else t + k_step
        slab.t_next = t
        m += 1
        ledger.add_step(m, t, k_step, space.n_free, u_next.linf_norm(),
                        eta_T, xi, xi_prime, psi, delta, r, eta_S, hmin,
                        dot_map)
        u_cur = u_next
        A_prev = slab.A_next
        prev_map = eta_S
        _maybe_dump(opts, m, mesh, u_cur)

    return RunResult(
        trajectory=traj, ledger=ledger, stop_reason="final_time", steps=m,
        final_time=t, final_norm=u_cur.linf_norm(),
        tinf_estimate=_tinf_from_ledger(ledger),
        avg_dofs=weighted_average_dofs(traj) if traj.slabs else 0.0)
