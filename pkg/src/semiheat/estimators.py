"""A posteriori error machinery for the IMEX discretization.

Per slab the pieces are: a per-cell space estimator (interior residual of
the discrete Laplacian plus gradient jumps), its logged two-endpoint
maximum, a space-derivative estimator evaluated on the overlay meshes, a
time estimator integrating the temporal residual, the recursively
accumulated parabolic bound psi, the fixed-point parameter delta (whose
nonexistence is the adaptive stop signal), and the per-slab Gronwall
amplification factor r.  The ledger collects everything and evaluates the
total conditional bound.
"""

import inspect
import math

import numpy as np

from . import fespace as fe
from .fespace import gauss_legendre
from .mesh import face_set
from .scheme import DiscreteLaplacian, InitialLaplacian


class EstimatorError(RuntimeError):
    """Internal inconsistency in an estimator computation."""


class BoundUnavailableError(RuntimeError):
    """The conditional bound was requested but some delta does not exist."""


def log_factor(hmin):
    """max(1, log(1/h_min)): the logarithmic weight of the space terms.

    Clamped below at 1 so the bound stays monotone on coarse meshes where
    log(1/h) would dip below one or go negative.
    """
    return max(1.0, math.log(1.0 / hmin))


class LipschitzModulus:
    """Known increment bound L(t, |v|, |w|) of the reaction term.

    `kind` is "zero" (reaction independent of u), "additive" (L = a + b,
    which admits a closed-form quadratic for delta) or "generic".  The
    wrapped callable may take (t, a, b) or just (a, b); the time argument
    is ignored for the latter.
    """

    def __init__(self, fn=None, kind="generic"):
        if kind not in ("zero", "additive", "generic"):
            raise ValueError("unknown modulus kind %r" % kind)
        self.kind = kind
        self.is_zero = kind == "zero"
        if kind == "zero":
            self._fn = None
        elif kind == "additive":
            self._fn = lambda t, a, b: a + b
        else:
            if fn is None:
                raise ValueError("generic modulus needs a callable")
            try:
                nargs = len(inspect.signature(fn).parameters)
            except (TypeError, ValueError):
                nargs = 3
            if nargs == 2:
                self._fn = lambda t, a, b: fn(a, b)
            else:
                self._fn = fn

    @classmethod
    def zero(cls):
        return cls(kind="zero")

    @classmethod
    def additive(cls):
        return cls(kind="additive")

    def __call__(self, t, a, b):
        if self.is_zero:
            return 0.0 * (np.asarray(a) + np.asarray(b))
        return self._fn(t, a, b)


def _time_rule(t_prev, k, q):
    pts, wts = gauss_legendre(q)
    return t_prev + k * pts, k * wts


# -- single-mesh space estimator (slab zero) ------------------------------------


def initial_space_estimator(problem, u0_field):
    """Per-cell space estimator of the projected initial field.

    Volume residual uses the analytic driving term -a*lap(u0).
    """
    space = u0_field.space
    X, Y = space.sample_points()
    A0 = -problem.a * np.asarray(problem.lap_u0(X, Y), dtype=float)
    vol = np.abs(A0 + problem.a * u0_field.sample_values("lap")).max(axis=1)
    jump = u0_field.jump_max_per_cell()
    h = space.mesh.h
    return h * h / problem.a * vol + h * jump


def initial_error_map(problem, u0_field):
    """Per-cell sampled max of |u0 - U0|."""
    space = u0_field.space
    X, Y = space.sample_points()
    diff = np.asarray(problem.u0(X, Y), dtype=float) \
        - u0_field.sample_values("val")
    return np.abs(diff).max(axis=1)


def xi_value(prev_map, hmin_prev, next_map, hmin_next):
    """Logged maximum of the space estimator over the two slab endpoints."""
    left = log_factor(hmin_prev) * (float(np.max(prev_map)) if len(prev_map) else 0.0)
    right = log_factor(hmin_next) * (float(np.max(next_map)) if len(next_map) else 0.0)
    return max(left, right)


def eta_initial(problem, u0_field, eta0_map, c_inf=1.0):
    """Initial-condition estimator: ||e(0)|| plus the logged space term."""
    e0 = float(initial_error_map(problem, u0_field).max())
    hmin = u0_field.space.mesh.min_diameter()
    return e0 + c_inf * log_factor(hmin) * float(np.max(eta0_map))


# -- slab workspace ----------------------------------------------------------------


class _FaceBatch:
    __slots__ = ("sel", "x", "y", "left", "right", "ns", "deriv")


class SlabWorkspace:
    """Evaluates all slab estimators on the overlay of the two meshes.

    Built once per mesh configuration of a slab; `set_state` swaps in a
    candidate (U_next, U_hat, k) cheaply so time-step adjustment loops only
    pay for value re-evaluation.  Laplacians and face gradients are
    computed lazily when the space estimators are first requested.
    """

    def __init__(self, problem, u_prev, A_prev, space_next, t_prev, q=3):
        if u_prev.space.degree != space_next.degree:
            raise ValueError("slab endpoint spaces must share the degree")
        self.problem = problem
        self.u_prev = u_prev
        self.A_prev = A_prev
        self.space_prev = u_prev.space
        self.space_next = space_next
        self.t_prev = t_prev
        self.q = q
        mesh_prev = self.space_prev.mesh
        mesh_next = space_next.mesh
        self.mesh_prev = mesh_prev
        self.mesh_next = mesh_next
        self.same_mesh = mesh_prev is mesh_next \
            or mesh_prev.leafset == mesh_next.leafset
        if self.same_mesh:
            self.vee = mesh_next
            self.wedge = mesh_next
        else:
            self.vee = mesh_prev.overlay_finest(mesh_next)
            self.wedge = mesh_prev.overlay_coarsest(mesh_next)
        nvee = len(self.vee)
        cx = self.vee.x0 + 0.5 * self.vee.hx
        cy = self.vee.y0 + 0.5 * self.vee.hy
        if self.same_mesh:
            ident = np.arange(nvee)
            self.src_prev = ident
            self.src_next = ident
            self.h_wedge = self.vee.h
        else:
            self.src_prev = mesh_prev.locate(cx, cy)
            self.src_next = mesh_next.locate(cx, cy)
            self.h_wedge = self.wedge.h[self.wedge.locate(cx, cy)]
        self.hmin_prev = mesh_prev.min_diameter()
        self.hmin_next = mesh_next.min_diameter()

        t = space_next.rule.sample1d
        ns = len(t)
        self._t1d = t
        tx = np.tile(t, ns)
        ty = np.repeat(t, ns)
        self.Xs = self.vee.x0[:, None] + self.vee.hx[:, None] * tx[None, :]
        self.Ys = self.vee.y0[:, None] + self.vee.hy[:, None] * ty[None, :]

        self._classes = {
            "prev": self._build_classes(mesh_prev, self.src_prev),
            "next": self._build_classes(mesh_next, self.src_next)}
        self._tensor_cache = {}
        self._face_batches = None

        # Static per-slab arrays.
        self.Uprev = self._grid_eval(u_prev, "prev", "val")
        self.f_prev = np.asarray(
            problem.f(self.Xs, self.Ys, t_prev, self.Uprev), dtype=float)
        self._lapUprev = None
        self._A_prev_vals = None
        self._grad_prev_faces = None

        # Per-state arrays (set_state).
        self.u_next = None
        self.u_hat = None
        self.k = None
        self.Unext = None
        self._A_next_vals = None
        self._lapUnext = None
        self._grad_next_faces = None

    # -- structured evaluation ---------------------------------------------

    def _build_classes(self, mesh_src, srcmap):
        classes = {}
        for vi, key in enumerate(self.vee.leaves):
            skey = mesh_src.leaves[int(srcmap[vi])]
            dl = key[0] - skey[0]
            offx = key[1] - (skey[1] << dl)
            offy = key[2] - (skey[2] << dl)
            classes.setdefault((dl, offx, offy), []).append(vi)
        return {ck: np.array(v, dtype=np.int64) for ck, v in classes.items()}

    def _tensor(self, dl, ox, oy, dx, dy):
        key = (dl, ox, oy, dx, dy)
        if key not in self._tensor_cache:
            ref = self.space_next.ref
            scale = float(1 << dl)
            Bx = ref.eval((ox + self._t1d) / scale, dx)
            By = ref.eval((oy + self._t1d) / scale, dy)
            self._tensor_cache[key] = np.kron(By, Bx)
        return self._tensor_cache[key]

    def _grid_eval(self, field, channel, deriv):
        """Field values/derivatives at the overlay sample grid."""
        space = field.space
        srcmap = self.src_prev if channel == "prev" else self.src_next
        classes = self._classes[channel]
        out = np.empty_like(self.Xs)
        mesh_src = space.mesh
        for (dl, ox, oy), vis in classes.items():
            cells = srcmap[vis]
            C = field.coeffs[space.dofmap[cells]]
            if deriv == "val":
                V = C @ self._tensor(dl, ox, oy, 0, 0).T
            elif deriv == "lap":
                V = (C @ self._tensor(dl, ox, oy, 2, 0).T) \
                    / (mesh_src.hx[cells] ** 2)[:, None] \
                    + (C @ self._tensor(dl, ox, oy, 0, 2).T) \
                    / (mesh_src.hy[cells] ** 2)[:, None]
            else:
                raise ValueError(deriv)
            out[vis] = V
        return out

    def _eval_any(self, field, deriv="val"):
        """Structured when the field lives on a slab space, scattered otherwise."""
        if field.space is self.space_prev:
            return self._grid_eval(field, "prev", deriv)
        if field.space is self.space_next:
            return self._grid_eval(field, "next", deriv)
        dv = (0, 0) if deriv == "val" else deriv
        flat = fe.evaluate_multi([field], self.Xs.ravel(), self.Ys.ravel(),
                                 [dv if deriv != "lap" else "lap"])[0]
        return flat.reshape(self.Xs.shape)

    # -- state ----------------------------------------------------------------

    def set_state(self, u_next, u_hat, k):
        if u_next.space is not self.space_next:
            raise ValueError("u_next does not live on the slab's next space")
        self.u_next = u_next
        self.u_hat = u_hat
        self.k = float(k)
        self.Unext = self._grid_eval(u_next, "next", "val")
        self._Uhat = self._grid_eval(u_hat, "next", "val") \
            if u_hat is not u_next else self.Unext
        self._A_next_vals = None
        self._lapUnext = None
        self._grad_next_faces = None

    # -- driving terms ---------------------------------------------------------

    def A_prev_values(self):
        if self._A_prev_vals is None:
            A = self.A_prev
            if isinstance(A, InitialLaplacian):
                vals = A(self.Xs, self.Ys)
            elif isinstance(A, DiscreteLaplacian):
                up = self._eval_any(A.u_prev)
                un = self._eval_any(A.u_next)
                uh = self._eval_any(A.u_hat)
                vals = np.asarray(
                    self.problem.f(self.Xs, self.Ys, A.t_prev, up),
                    dtype=float) - (un - uh) / A.k
            else:
                vals = np.asarray(A(self.Xs, self.Ys), dtype=float)
            self._A_prev_vals = vals
        return self._A_prev_vals

    def A_next_values(self):
        if self._A_next_vals is None:
            self._A_next_vals = self.f_prev - (self.Unext - self._Uhat) / self.k
        return self._A_next_vals

    # -- time estimator ----------------------------------------------------------

    def u_norm(self, s):
        """Sampled sup norm of the time interpolant at s in the slab."""
        lb = (s - self.t_prev) / self.k
        la = 1.0 - lb
        return float(np.abs(la * self.Uprev + lb * self.Unext).max())

    def u_norm_integral(self):
        nodes, wts = _time_rule(self.t_prev, self.k, self.q)
        return float(sum(w * self.u_norm(s) for s, w in zip(nodes, wts)))

    def modulus_integral(self, modulus, c):
        """Integral over the slab of L(s, ||U(s)||, ||U(s)|| + c)."""
        if modulus.is_zero or self.k == 0.0:
            return 0.0
        nodes, wts = _time_rule(self.t_prev, self.k, self.q)
        acc = 0.0
        for s, w in zip(nodes, wts):
            n = self.u_norm(s)
            acc += w * float(modulus(s, n, n + c))
        return acc

    def eta_time(self):
        """Gauss-in-time integral of the sampled sup norm of the residual."""
        return eta_time_from_values(
            self.problem.f, self.Xs, self.Ys, self.t_prev, self.k,
            self.Uprev, self.Unext, self.A_prev_values(),
            self.A_next_values(), q=self.q)

    # -- space estimators --------------------------------------------------------

    def _lap_prev(self):
        if self._lapUprev is None:
            self._lapUprev = self._grid_eval(self.u_prev, "prev", "lap")
        return self._lapUprev

    def _lap_next(self):
        if self._lapUnext is None:
            self._lapUnext = self._grid_eval(self.u_next, "next", "lap")
        return self._lapUnext

    def _scatter_next_max(self, per_vee):
        out = np.zeros(len(self.mesh_next))
        np.maximum.at(out, self.src_next, per_vee)
        return out

    def eta_space_map(self):
        """Per-cell space estimator of the slab's end field on its mesh."""
        a = self.problem.a
        vol_vee = np.abs(self.A_next_values() + a * self._lap_next()).max(axis=1)
        vol = self._scatter_next_max(vol_vee)
        jump = self.u_next.jump_max_per_cell()
        h = self.mesh_next.h
        return h * h / a * vol + h * jump

    def _faces(self):
        if self._face_batches is None:
            fs = face_set(self.vee)
            t = self._t1d
            ns = len(t)
            batches = []
            seg = fs.lo[:, None] + (fs.hi - fs.lo)[:, None] * t[None, :]
            for o in (0, 1):
                sel = np.flatnonzero(fs.orient == o)
                if len(sel) == 0:
                    continue
                b = _FaceBatch()
                b.sel = sel
                b.ns = ns
                b.deriv = (1, 0) if o == 0 else (0, 1)
                if o == 0:
                    b.x = np.repeat(fs.coord[sel], ns)
                    b.y = seg[sel].ravel()
                else:
                    b.x = seg[sel].ravel()
                    b.y = np.repeat(fs.coord[sel], ns)
                b.left = fs.left[sel]
                b.right = fs.right[sel]
                batches.append(b)
            self._face_batches = (fs, batches)
        return self._face_batches

    def _face_grads(self, field, channel):
        """Normal derivative of a field on both sides of every overlay face."""
        srcmap = self.src_prev if channel == "prev" else self.src_next
        _, batches = self._faces()
        out = []
        for b in batches:
            gl = fe.evaluate_in_cells(
                [field], np.repeat(srcmap[b.left], b.ns), b.x, b.y,
                [b.deriv])[0].reshape(len(b.left), b.ns)
            gr = fe.evaluate_in_cells(
                [field], np.repeat(srcmap[b.right], b.ns), b.x, b.y,
                [b.deriv])[0].reshape(len(b.right), b.ns)
            out.append((gl, gr))
        return out

    def eta_dot_maps(self):
        """Space-derivative estimator: (per-cell map on the end mesh, xi').

        Volume and jump parts of the field difference are evaluated on the
        finest-overlay cells, weighted by the size of the containing
        coarsest-overlay cell.
        """
        a = self.problem.a
        k = self.k
        vol_vee = np.abs(self.A_next_values() - self.A_prev_values()
                         + a * (self._lap_next() - self._lap_prev())).max(axis=1)
        if self._grad_prev_faces is None:
            self._grad_prev_faces = self._face_grads(self.u_prev, "prev")
        if self._grad_next_faces is None:
            self._grad_next_faces = self._face_grads(self.u_next, "next")
        jump_vee = np.zeros(len(self.vee))
        _, batches = self._faces()
        for b, (gpl, gpr), (gnl, gnr) in zip(
                batches, self._grad_prev_faces, self._grad_next_faces):
            d = np.abs((gnl - gpl) - (gnr - gpr)).max(axis=1)
            np.maximum.at(jump_vee, b.left, d)
            np.maximum.at(jump_vee, b.right, d)
        hw = self.h_wedge
        etadot_vee = hw * hw / (k * a) * vol_vee + hw / k * jump_vee
        xi_prime = log_factor(min(self.hmin_prev, self.hmin_next)) * k \
            * (float(etadot_vee.max()) if len(etadot_vee) else 0.0)
        return self._scatter_next_max(etadot_vee), xi_prime

    def overlay_free_dofs(self):
        """Free dofs of the degree-p space on the overlay mesh."""
        if self.same_mesh:
            return self.space_next.n_free
        return fe.Space(self.vee, self.space_next.degree).n_free


def eta_time_from_values(f, Xs, Ys, t_prev, k, U_prev_vals, U_next_vals,
                         A_prev_vals, A_next_vals, q=3):
    """Time estimator from sampled endpoint values.

    Integrates the sampled sup norm of
    f(x, s, U(s)) - l_a(s) A_prev - l_b(s) A_next - (U_next - U_prev)/k
    with a q-node Gauss rule over the slab.
    """
    Ut = (U_next_vals - U_prev_vals) / k
    nodes, wts = _time_rule(t_prev, k, q)
    acc = 0.0
    for s, w in zip(nodes, wts):
        lb = (s - t_prev) / k
        la = 1.0 - lb
        U = la * U_prev_vals + lb * U_next_vals
        R = np.asarray(f(Xs, Ys, s, U), dtype=float) \
            - la * A_prev_vals - lb * A_next_vals - Ut
        acc += w * float(np.abs(R).max())
    return acc


# -- psi / delta / r -------------------------------------------------------------


def psi_update(ledger, m, eta_T, xi, xi_prime, modulus, workspace):
    """Accumulated parabolic bound for slab m.

    Slab 1 starts from the initial-condition estimator; later slabs start
    from the Gronwall-amplified previous value.
    """
    c = ledger.c_inf
    if modulus.is_zero:
        lip = 0.0
    else:
        lip = c * xi * workspace.modulus_integral(modulus, c * xi)
    if m == 1:
        if ledger.eta_I is None:
            raise EstimatorError("initial estimator missing from the ledger")
        base = ledger.eta_I
    else:
        if ledger.r[-1] is None or ledger.psi[-1] is None:
            return None  # chain broken by an earlier missing delta
        base = ledger.r[-1] * ledger.psi[-1]
    return base + lip + eta_T + c * xi_prime


def fixed_point_delta(psi, xi, k, t_prev, modulus, u_norm, c_inf=1.0, q=3,
                      ceiling=1e8):
    """Smallest root in [1, ceiling] of the slab's fixed-point function.

    Returns None when no root exists (the adaptive stop signal).  For the
    additive modulus the root solves a quadratic in closed form; otherwise
    the leftmost sign change of a geometric scan is bisected (with a
    convexity-based minimum probe so narrow dips are not stepped over) and
    polished by a secant step.  Every returned root is checked against the
    contraction inequality int L <= 1 - 1/delta.
    """
    if modulus.is_zero or k <= 0.0:
        return 1.0
    if psi is None:
        return None
    nodes, wts = _time_rule(t_prev, k, q)
    norms = np.array([u_norm(s) for s in nodes])

    def integral(delta):
        args = delta * psi + norms + c_inf * xi
        return float(sum(w * modulus(s, ai, ai)
                         for s, w, ai in zip(nodes, wts, args)))

    def phi(delta):
        return 1.0 + delta * (integral(delta) - 1.0)

    delta = None
    if modulus.kind == "additive":
        int_u = float(wts @ norms)
        a2 = 2.0 * k * psi
        b = 2.0 * c_inf * k * xi + 2.0 * int_u - 1.0
        if a2 == 0.0:
            if b >= 0.0:
                return None
            delta = max(-1.0 / b, 1.0)
            if delta > ceiling:
                return None
        else:
            disc = b * b - 4.0 * a2
            if disc < 0.0 or b >= 0.0:
                return None
            sq = math.sqrt(disc)
            small = 2.0 / (-b + sq)
            large = (-b + sq) / (2.0 * a2)
            for root in (small, large):
                if root >= 1.0 - 1e-9:
                    delta = max(root, 1.0)
                    break
            if delta is None or delta > ceiling:
                return None
    else:
        p1 = phi(1.0)
        if p1 <= 1e-14:
            delta = 1.0
        else:
            # Geometric scan for the leftmost sign change.  The scan alone
            # can step over a narrow dip, so when it finds none we also
            # probe the minimum (phi is convex for the monotone moduli in
            # use) before declaring nonexistence.
            grid = [1.0]
            d = 1.0
            factor = 2.0 ** 0.25
            while grid[-1] < ceiling:
                d *= factor
                grid.append(min(d, ceiling))
            vals = [p1] + [phi(g) for g in grid[1:]]
            hi = None
            for i in range(1, len(grid)):
                if vals[i] <= 0.0:
                    lo, flo = grid[i - 1], vals[i - 1]
                    hi, fhi = grid[i], vals[i]
                    break
            if hi is None:
                imin = int(np.argmin(vals))
                a = grid[max(imin - 1, 0)]
                b = grid[min(imin + 1, len(grid) - 1)]
                for _ in range(200):
                    if b - a <= 1e-13 * b:
                        break
                    m1 = a + (b - a) / 3.0
                    m2 = b - (b - a) / 3.0
                    if phi(m1) <= phi(m2):
                        b = m2
                    else:
                        a = m1
                dstar = 0.5 * (a + b)
                if phi(dstar) <= 0.0:
                    lo, flo = 1.0, p1
                    hi, fhi = dstar, phi(dstar)
                else:
                    return None
            for _ in range(200):
                if hi - lo <= 1e-12 * hi:
                    break
                mid = 0.5 * (lo + hi)
                fm = phi(mid)
                if fm <= 0.0:
                    hi, fhi = mid, fm
                else:
                    lo, flo = mid, fm
            # secant polish inside the bracket
            if fhi != flo:
                cand = hi - fhi * (hi - lo) / (fhi - flo)
                if lo <= cand <= hi:
                    hi = cand
            delta = hi
    margin = integral(delta) - (1.0 - 1.0 / delta)
    if margin > 1e-10:
        raise EstimatorError(
            "contraction check failed at delta=%g (margin %.3e)"
            % (delta, margin))
    return float(delta)


def gronwall_factor(delta, psi, xi, k, t_prev, modulus, u_norm, c_inf=1.0, q=3):
    """Per-slab amplification factor exp(int L(s, delta psi + ., .) ds)."""
    if modulus.is_zero or k <= 0.0:
        return 1.0
    nodes, wts = _time_rule(t_prev, k, q)
    acc = 0.0
    for s, w in zip(nodes, wts):
        n = u_norm(s)
        acc += w * float(modulus(s, delta * psi + n + c_inf * xi,
                                 n + c_inf * xi))
    return math.exp(acc)


# -- ledger -------------------------------------------------------------------------


class EstimatorLedger:
    """Per-step record of all estimator values and the running bound."""

    def __init__(self, c_inf=1.0, modulus_is_zero=False):
        self.c_inf = c_inf
        self.modulus_is_zero = modulus_is_zero
        self.e0 = None
        self.eta_I = None
        self.log_eta_S0 = None
        self.eta_S0_map = None
        self.m = []
        self.t = []
        self.k = []
        self.dofs = []
        self.linf_u = []
        self.eta_T = []
        self.xi = []
        self.xi_prime = []
        self.psi = []
        self.delta = []
        self.r = []
        self.r_tilde = []
        self.log_eta_S = []
        self.hmin = []
        self.eta_S_maps = []
        self.eta_dot_maps = []
        self.bound = []

    def set_initial(self, problem, u0_field, eta0_map):
        self.eta_S0_map = np.asarray(eta0_map, dtype=float)
        self.e0 = float(initial_error_map(problem, u0_field).max())
        hmin = u0_field.space.mesh.min_diameter()
        self.log_eta_S0 = log_factor(hmin) * float(self.eta_S0_map.max())
        self.eta_I = self.e0 + self.c_inf * self.log_eta_S0

    def add_step(self, m, t, k, dofs, linf_u, eta_T, xi, xi_prime, psi,
                 delta, r, eta_S_map, hmin, eta_dot_map):
        if self.eta_I is None:
            raise EstimatorError("set_initial must run before add_step")
        self.m.append(m)
        self.t.append(t)
        self.k.append(k)
        self.dofs.append(dofs)
        self.linf_u.append(linf_u)
        self.eta_T.append(eta_T)
        self.xi.append(xi)
        self.xi_prime.append(xi_prime)
        self.psi.append(psi)
        self.delta.append(delta)
        self.r.append(r)
        if delta is None:
            self.r_tilde.append(None)
        else:
            prev = 1.0
            for rt in reversed(self.r_tilde):
                if rt is not None:
                    prev = rt
                    break
            self.r_tilde.append(prev * r)
        eta_S_map = np.asarray(eta_S_map, dtype=float)
        self.eta_S_maps.append(eta_S_map)
        self.eta_dot_maps.append(np.asarray(eta_dot_map, dtype=float))
        self.hmin.append(hmin)
        self.log_eta_S.append(log_factor(hmin) * float(eta_S_map.max()))
        try:
            self.bound.append(self.bound_through(len(self.m)))
        except BoundUnavailableError:
            self.bound.append(None)

    def _log_max(self, upto):
        vals = [self.log_eta_S0] + self.log_eta_S[:upto]
        return max(v for v in vals if v is not None)

    def space_bound_term(self, upto=None):
        """The bound's standalone elliptic part: C * max_m log(1/h) max eta_S."""
        if upto is None:
            upto = len(self.m)
        return self.c_inf * self._log_max(upto)

    def space_estimator_max(self, upto=None):
        """max over recorded steps (slab zero included) of max_K eta_S^m.

        The h-dependent content of the bound's elliptic part, without the
        global logarithmic weight.
        """
        if upto is None:
            upto = len(self.m)
        vals = [float(self.eta_S0_map.max())]
        vals += [float(m.max()) for m in self.eta_S_maps[:upto]]
        return max(vals)

    def bound_through(self, upto=None):
        """Total error bound through step `upto` (default: all steps).

        Zero-modulus data telescopes to
        ||e(0)|| + sum eta_T + C sum xi' + C max log * max eta_S; otherwise
        the conditional form r_M psi_M + C max log * max eta_S, which needs
        every delta up to `upto` to exist.
        """
        if upto is None:
            upto = len(self.m)
        if upto < 1:
            raise BoundUnavailableError("no steps recorded")
        space_term = self.c_inf * self._log_max(upto)
        if self.modulus_is_zero:
            return self.e0 + sum(self.eta_T[:upto]) \
                + self.c_inf * sum(self.xi_prime[:upto]) + space_term
        if any(d is None for d in self.delta[:upto]):
            raise BoundUnavailableError(
                "delta missing before step %d; bound does not hold" % upto)
        return self.r[upto - 1] * self.psi[upto - 1] + space_term

    def to_csv(self, path):
        """Write the bit-specified per-step table.

        Columns: m,t_m,k_m,dofs_m,linf_U_m,eta_T,xi,xi_prime,psi,delta,
        r,r_tilde,bound with empty fields where delta (and anything that
        needs it) does not exist.
        """
        def fmt(v):
            return "" if v is None else "%.17g" % v

        lines = ["m,t_m,k_m,dofs_m,linf_U_m,eta_T,xi,xi_prime,psi,delta,"
                 "r,r_tilde,bound"]
        for i in range(len(self.m)):
            lines.append(",".join([
                "%d" % self.m[i], fmt(self.t[i]), fmt(self.k[i]),
                "%d" % self.dofs[i], fmt(self.linf_u[i]), fmt(self.eta_T[i]),
                fmt(self.xi[i]), fmt(self.xi_prime[i]), fmt(self.psi[i]),
                fmt(self.delta[i]),
                fmt(self.r[i] if self.delta[i] is not None else None),
                fmt(self.r_tilde[i]), fmt(self.bound[i])]))
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def total_bound(ledger, upto=None):
    """Total bound of a completed run; raises when some delta is absent."""
    return ledger.bound_through(upto)
