"""First-order IMEX evolution: implicit diffusion, explicit reaction.

The initial field solves the discrete elliptic problem
(grad U0, grad V) = (-lap u0, V); each step then solves
(M/k + S) U_next = M(U_hat/k) + (f(., t_prev, U_prev), .) on the new
space, where U_hat is the nodal transfer of U_prev.  The reaction
functional is evaluated pointwise at quadrature points of the new mesh
against the untransferred previous field, which is also what the
discrete-Laplacian closures use.
"""

from dataclasses import dataclass, field as dfield

import numpy as np

from . import fespace as fe
from .linalg import assemble_mass, assemble_stiffness, load_vector, solve_spd


class InitialLaplacian:
    """Pointwise -a * lap(u0); the slab-zero driving term."""

    def __init__(self, a, lap_u0):
        self.a = a
        self.lap_u0 = lap_u0

    def __call__(self, x, y):
        return -self.a * np.asarray(self.lap_u0(x, y), dtype=float)


class DiscreteLaplacian:
    """Pointwise f(x, t_prev, U_prev(x)) - (U_next(x) - U_hat(x)) / k.

    U_prev is the untransferred endpoint field of the previous mesh;
    U_hat its nodal transfer onto the next mesh.  Stored as a closure so
    estimators can evaluate it anywhere without projection error.
    """

    def __init__(self, f, t_prev, k, u_prev, u_next, u_hat):
        self.f = f
        self.t_prev = t_prev
        self.k = k
        self.u_prev = u_prev
        self.u_next = u_next
        self.u_hat = u_hat

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = x.shape
        xf, yf = x.ravel(), y.ravel()
        up = fe.evaluate_multi([self.u_prev], xf, yf, [(0, 0)])[0]
        un, uh = fe.evaluate_multi([self.u_next, self.u_hat], xf, yf,
                                   [(0, 0), (0, 0)])
        vals = np.asarray(self.f(xf, yf, self.t_prev, up), dtype=float) \
            - (un - uh) / self.k
        return vals.reshape(shape)


@dataclass
class TimeSlab:
    """One interval (t_prev, t_next] with both endpoint discretizations."""

    m: int
    t_prev: float
    t_next: float
    k: float
    space_prev: object
    space_next: object
    u_prev: object
    u_next: object
    u_hat: object          # u_prev transferred onto space_next
    A_prev: object         # discrete Laplacian closures
    A_next: object
    overlay_dofs: int = 0  # free dofs of the degree-p space on the overlay


@dataclass
class Trajectory:
    """Initial field plus the ordered time slabs of a run."""

    u0: object
    slabs: list = dfield(default_factory=list)

    @property
    def times(self):
        return [0.0 if not self.slabs else self.slabs[0].t_prev] + \
            [s.t_next for s in self.slabs]

    @property
    def final_time(self):
        return self.slabs[-1].t_next if self.slabs else 0.0


def project_initial(problem, space):
    """Elliptic projection of the initial data onto the space."""
    Xq, Yq, _ = space.quadrature_points()
    rhs = -np.asarray(problem.lap_u0(Xq, Yq), dtype=float)
    b = load_vector(space, rhs)
    S = assemble_stiffness(space, 1.0)
    return fe.Field.from_free(space, solve_spd(S, b))


def imex_step(problem, u_prev, space_next, k, t_prev):
    """One IMEX step; returns (U_next, U_hat).

    U_hat is the nodal transfer of u_prev onto space_next (identical to
    u_prev when the space is unchanged).
    """
    if k <= 0:
        raise ValueError("time step must be positive")
    same_space = u_prev.space is space_next
    u_hat = u_prev if same_space else fe.interpolate(u_prev, space_next)
    M = assemble_mass(space_next)
    S = assemble_stiffness(space_next, problem.a)
    Xq, Yq, _ = space_next.quadrature_points()
    if same_space:
        upq = u_prev.coeffs[space_next.dofmap] @ \
            space_next.tensor_basis("quad", 0, 0).T
    else:
        upq = fe.evaluate_multi([u_prev], Xq.ravel(), Yq.ravel(),
                                [(0, 0)])[0].reshape(Xq.shape)
    fq = np.asarray(problem.f(Xq, Yq, t_prev, upq), dtype=float)
    b = (M @ u_hat.free_values) / k + load_vector(space_next, fq)
    A = (M / k + S).tocsr()
    x = solve_spd(A, b, x0=u_hat.free_values)
    return fe.Field.from_free(space_next, x), u_hat


def make_slab(problem, m, t_prev, k, u_prev, u_next, u_hat):
    """Assemble a TimeSlab with its discrete-Laplacian closures."""
    if m == 1:
        A_prev = InitialLaplacian(problem.a, problem.lap_u0)
    else:
        A_prev = None  # filled by the caller from the previous slab
    A_next = DiscreteLaplacian(problem.f, t_prev, k, u_prev, u_next, u_hat)
    return TimeSlab(m=m, t_prev=t_prev, t_next=t_prev + k, k=k,
                    space_prev=u_prev.space, space_next=u_next.space,
                    u_prev=u_prev, u_next=u_next, u_hat=u_hat,
                    A_prev=A_prev, A_next=A_next)


def discrete_laplacian(slab, which):
    """The pointwise-evaluable driving term at either slab endpoint."""
    if which == "prev":
        return slab.A_prev
    if which == "next":
        return slab.A_next
    raise ValueError("which must be 'prev' or 'next'")


class TimeInterpolant:
    """Linear-in-time blend of the two endpoint fields of a slab."""

    def __init__(self, u_a, u_b, w_a, w_b):
        self.u_a = u_a
        self.u_b = u_b
        self.w_a = w_a
        self.w_b = w_b

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = x.shape
        xf, yf = x.ravel(), y.ravel()
        if self.w_b == 0.0:
            vals = self.w_a * fe.evaluate_multi(
                [self.u_a], xf, yf, [(0, 0)])[0]
        elif self.w_a == 0.0:
            vals = self.w_b * fe.evaluate_multi(
                [self.u_b], xf, yf, [(0, 0)])[0]
        elif self.u_a.space is self.u_b.space:
            va, vb = fe.evaluate_multi([self.u_a, self.u_b], xf, yf,
                                       [(0, 0), (0, 0)])
            vals = self.w_a * va + self.w_b * vb
        else:
            va = fe.evaluate_multi([self.u_a], xf, yf, [(0, 0)])[0]
            vb = fe.evaluate_multi([self.u_b], xf, yf, [(0, 0)])[0]
            vals = self.w_a * va + self.w_b * vb
        return vals.reshape(shape)


def interpolant_at(traj, t):
    """The numerical solution at time t as a pointwise-evaluable function."""
    times = traj.times
    if not traj.slabs:
        if t != times[0]:
            raise ValueError("time outside the computed range")
        return TimeInterpolant(traj.u0, traj.u0, 1.0, 0.0)
    if t < times[0] - 1e-14 or t > times[-1] + 1e-14:
        raise ValueError("time outside the computed range")
    for slab in traj.slabs:
        if t <= slab.t_next or slab is traj.slabs[-1]:
            la = (slab.t_next - t) / slab.k
            lb = (t - slab.t_prev) / slab.k
            return TimeInterpolant(slab.u_prev, slab.u_next,
                                   float(la), float(lb))
    raise AssertionError("unreachable")
