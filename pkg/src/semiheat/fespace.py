"""Continuous tensor-product Lagrange elements on quadtree meshes.

Degree-p spaces use Gauss-Lobatto nodes per direction, hanging-node
constraints keep functions H1-conforming across level jumps, and the
boundary trace is fixed to zero.  Pointwise maxima (the working
replacement for true sup-norms) are taken over a per-cell tensor grid of
Gauss-Lobatto points of order p+3; integrals use tensor Gauss quadrature
of order p+2, exact for polynomials of degree 2p+3 per direction.
"""

import numpy as np
from numpy.polynomial import legendre as npleg

from .mesh import LMAX, face_set

_DIRS = ("E", "W", "N", "S")


def gauss_lobatto(n):
    """n Gauss-Lobatto points on [0, 1] with exact endpoints."""
    if n < 2:
        raise ValueError("need at least 2 points")
    if n == 2:
        return np.array([0.0, 1.0])
    c = np.zeros(n)
    c[n - 1] = 1.0
    interior = npleg.Legendre(c).deriv().roots().real
    pts = 0.5 * (np.sort(interior) + 1.0)
    return np.concatenate(([0.0], pts, [1.0]))


def gauss_legendre(n):
    """n-point Gauss rule on [0, 1]: (points, weights)."""
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


class _Ref1D:
    """Cardinal Lagrange basis on the degree-p Gauss-Lobatto nodes.

    Basis polynomials are stored as Legendre series for stable evaluation
    of values and derivatives at arbitrary points of [0, 1].
    """

    def __init__(self, p):
        self.p = p
        self.nodes = gauss_lobatto(p + 1)
        V = npleg.legvander(2.0 * self.nodes - 1.0, p)
        self.coeffs = np.linalg.inv(V)  # column k: series of cardinal k
        self._dcoeffs = {0: self.coeffs}
        self.sample1d = gauss_lobatto(p + 3)
        self.quad1d, self.quadw1d = gauss_legendre(p + 2)
        gB0 = self.eval(self.quad1d, 0)
        gB1 = self.eval(self.quad1d, 1)
        W = self.quadw1d[:, None]
        self.mass1 = gB0.T @ (W * gB0)
        self.stiff1 = gB1.T @ (W * gB1)
        # Coarse-edge trace weights at the two dyadic half-edges.
        self.half_trace = {
            off: self.eval((off + self.nodes) / 2.0, 0) for off in (0, 1)}

    def eval(self, pts, deriv=0):
        """(npts, p+1) matrix of cardinal values/derivatives at pts."""
        pts = np.asarray(pts, dtype=float).ravel()
        if deriv not in self._dcoeffs:
            self._dcoeffs[deriv] = npleg.legder(self.coeffs, deriv)
        vals = npleg.legval(2.0 * pts - 1.0, self._dcoeffs[deriv],
                            tensor=True)
        return vals.T * (2.0 ** deriv)


_REF_CACHE = {}


def _ref(p):
    if p not in _REF_CACHE:
        _REF_CACHE[p] = _Ref1D(p)
    return _REF_CACHE[p]


class SampleRule:
    """Per-cell sampling and quadrature layout for degree p."""

    def __init__(self, p):
        ref = _ref(p)
        self.degree = p
        self.sample1d = ref.sample1d
        self.quad1d = ref.quad1d
        self.quadw1d = ref.quadw1d
        self.n_sample = len(self.sample1d) ** 2
        self.n_quad = len(self.quad1d) ** 2


class Space:
    """Degree-p conforming space on a quadtree mesh with zero boundary trace."""

    def __init__(self, mesh, degree):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        self.mesh = mesh
        self.degree = int(degree)
        self.ref = _ref(self.degree)
        self.rule = SampleRule(self.degree)
        self._build_dofs()
        self._build_constraints()
        self._tensor_cache = {}
        self._grid_cache = {}
        self._mass_free = None
        self._stiff_free_unit = None
        self._mass_full = None

    # -- enumeration --------------------------------------------------------

    def _build_dofs(self):
        p = self.degree
        mesh = self.mesh
        nloc = (p + 1) ** 2
        ncells = len(mesh)
        nodes = self.ref.nodes
        SB = 1 << LMAX
        gid_of = {}
        dofmap = np.empty((ncells, nloc), dtype=np.int64)
        coords = []
        boundary = []

        for ci, key in enumerate(mesh.leaves):
            l, ix, iy = key
            s = 1 << (LMAX - l)
            X0, Y0 = ix * s, iy * s
            x0, y0, hx, hy = mesh.cell_box(ci)
            for j in range(p + 1):
                yb = 0 if j == 0 else (2 if j == p else 1)
                for i in range(p + 1):
                    xb = 0 if i == 0 else (2 if i == p else 1)
                    if xb != 1 and yb != 1:
                        X = X0 + (s if xb == 2 else 0)
                        Y = Y0 + (s if yb == 2 else 0)
                        ekey = ("v", X, Y)
                        bnd = X == 0 or X == SB or Y == 0 or Y == SB
                    elif yb != 1:
                        Y = Y0 + (s if yb == 2 else 0)
                        ekey = ("h", X0, Y, s, i)
                        bnd = Y == 0 or Y == SB
                    elif xb != 1:
                        X = X0 + (s if xb == 2 else 0)
                        ekey = ("u", X, Y0, s, j)
                        bnd = X == 0 or X == SB
                    else:
                        ekey = ("c", l, ix, iy, i, j)
                        bnd = False
                    gid = gid_of.get(ekey)
                    if gid is None:
                        gid = len(gid_of)
                        gid_of[ekey] = gid
                        coords.append((x0 + hx * nodes[i], y0 + hy * nodes[j]))
                        boundary.append(bnd)
                    dofmap[ci, j * (p + 1) + i] = gid
        self.dofmap = dofmap
        self.n_global = len(gid_of)
        self.node_coords = np.array(coords, dtype=float)
        self.is_boundary = np.array(boundary, dtype=bool)

    def _build_constraints(self):
        p = self.degree
        mesh = self.mesh
        dofmap = self.dofmap
        W = self.ref.half_trace
        raw = {}

        def edge_gids(ci, d):
            base = np.arange(p + 1)
            if d == "E":
                return dofmap[ci, base * (p + 1) + p]
            if d == "W":
                return dofmap[ci, base * (p + 1)]
            if d == "N":
                return dofmap[ci, p * (p + 1) + base]
            return dofmap[ci, base]

        opposite = {"E": "W", "W": "E", "N": "S", "S": "N"}
        for ci, key in enumerate(mesh.leaves):
            l, ix, iy = key
            for d in _DIRS:
                nbs = mesh.neighbors(key, d)
                if len(nbs) != 1 or nbs[0][0] != l - 1:
                    continue
                nci = mesh.index_of(nbs[0])
                slaves = edge_gids(ci, d)
                masters = edge_gids(nci, opposite[d])
                off = (iy if d in ("E", "W") else ix) & 1
                trace = W[off]
                skip = 0 if off == 0 else p
                for j in range(p + 1):
                    if j == skip:
                        continue
                    g = int(slaves[j])
                    if g in raw:
                        continue
                    raw[g] = [(int(masters[k]), trace[j, k])
                              for k in range(p + 1) if trace[j, k] != 0.0]

        # Resolve chains: masters of a constrained dof must end up free
        # or on the boundary.
        for _ in range(60):
            changed = False
            for g, terms in raw.items():
                if any(m in raw for m, _ in terms):
                    acc = {}
                    for m, w in terms:
                        if m in raw:
                            for mm, ww in raw[m]:
                                acc[mm] = acc.get(mm, 0.0) + w * ww
                        else:
                            acc[m] = acc.get(m, 0.0) + w
                    raw[g] = list(acc.items())
                    changed = True
            if not changed:
                break
        else:
            raise RuntimeError("hanging-node constraint chains did not close")

        self.constraints = raw
        is_slave = np.zeros(self.n_global, dtype=bool)
        for g in raw:
            if self.is_boundary[g]:
                raise RuntimeError("constrained dof on the boundary")
            is_slave[g] = True
        self.is_slave = is_slave
        free_mask = ~(self.is_boundary | is_slave)
        self.free_gids = np.flatnonzero(free_mask)
        self.n_free = len(self.free_gids)
        self.free_index = np.full(self.n_global, -1, dtype=np.int64)
        self.free_index[self.free_gids] = np.arange(self.n_free)

        rows, cols, vals = [], [], []
        rows.extend(self.free_gids)
        cols.extend(range(self.n_free))
        vals.extend([1.0] * self.n_free)
        for g, terms in raw.items():
            for m, w in terms:
                if self.is_boundary[m]:
                    continue
                fi = self.free_index[m]
                if fi < 0:
                    raise RuntimeError("unresolved constraint master")
                rows.append(g)
                cols.append(fi)
                vals.append(w)
        from scipy.sparse import csr_matrix
        self.P = csr_matrix((vals, (rows, cols)),
                            shape=(self.n_global, self.n_free))
        # Slave resolution against all masters (boundary ones included),
        # for nodal interpolation of functions with nonzero trace.
        srows, scols, svals = [], [], []
        for g, terms in raw.items():
            for m, w in terms:
                srows.append(g)
                scols.append(m)
                svals.append(w)
        self._slave_gids = np.array(sorted(raw), dtype=np.int64)
        self._slave_mat = csr_matrix((svals, (srows, scols)),
                                     shape=(self.n_global, self.n_global))

    # -- dimension bookkeeping ------------------------------------------------

    @property
    def dim(self):
        """Number of free (unconstrained interior) degrees of freedom."""
        return self.n_free

    def conform(self, raw_values):
        """Nodal values -> coefficients with zero boundary trace.

        Keeps the free entries, zeros the boundary and recomputes every
        constrained entry from its masters.
        """
        return self.P @ np.asarray(raw_values, dtype=float)[self.free_gids]

    def resolve(self, raw_values):
        """Nodal values -> continuous coefficients, boundary values kept.

        Only the hanging entries change: each is recomputed as the trace of
        the coarse neighbor at its node position.
        """
        out = np.array(raw_values, dtype=float)
        if len(self._slave_gids):
            out[self._slave_gids] = (self._slave_mat @ out)[self._slave_gids]
        return out

    # -- tensor bases -----------------------------------------------------------

    def _pts1d(self, kind):
        return self.rule.sample1d if kind == "sample" else self.rule.quad1d

    def tensor_basis(self, kind, dx, dy):
        """Basis matrix on the reference tensor grid.

        Rows run over grid points (y-major), columns over local dofs
        (y-major), entries l_i^(dx)(xi) * l_j^(dy)(eta).
        """
        key = (kind, dx, dy)
        if key not in self._tensor_cache:
            t = self._pts1d(kind)
            Bx = self.ref.eval(t, dx)
            By = self.ref.eval(t, dy)
            self._tensor_cache[key] = np.kron(By, Bx)
        return self._tensor_cache[key]

    def _grid(self, kind):
        """Physical coordinates of the per-cell tensor grid (ncells, npts)."""
        if kind not in self._grid_cache:
            t = self._pts1d(kind)
            n = len(t)
            tx = np.tile(t, n)
            ty = np.repeat(t, n)
            X = self.mesh.x0[:, None] + self.mesh.hx[:, None] * tx[None, :]
            Y = self.mesh.y0[:, None] + self.mesh.hy[:, None] * ty[None, :]
            self._grid_cache[kind] = (X, Y)
        return self._grid_cache[kind]

    def sample_points(self):
        return self._grid("sample")

    def quadrature_points(self):
        """(X, Y, W) with W the physical quadrature weights per cell."""
        X, Y = self._grid("quad")
        w = self.rule.quadw1d
        wflat = np.kron(w, w)
        W = (self.mesh.hx * self.mesh.hy)[:, None] * wflat[None, :]
        return X, Y, W

    def integrate(self, values):
        """Integrate per-quadrature-point values (ncells, n_quad) over the mesh."""
        _, _, W = self.quadrature_points()
        return float((values * W).sum())

    def cell_max_abs(self, fn):
        """Per-cell max of |fn| over the sample grid; fn(x, y) vectorized."""
        X, Y = self.sample_points()
        return np.abs(np.asarray(fn(X, Y), dtype=float)).max(axis=1)

    def cell_linf(self, fn, cell):
        """Sampled max of |fn| over one cell (index or key)."""
        if not isinstance(cell, (int, np.integer)):
            cell = self.mesh.index_of(cell)
        X, Y = self.sample_points()
        return float(np.abs(np.asarray(fn(X[cell], Y[cell]), dtype=float)).max())


class Field:
    """Finite element function: a Space plus one coefficient per global dof."""

    def __init__(self, space, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape != (space.n_global,):
            raise ValueError("coefficient vector has wrong length")
        self.space = space
        self.coeffs = coeffs
        self._sample_cache = {}
        self._jump_cache = None

    @classmethod
    def zeros(cls, space):
        return cls(space, np.zeros(space.n_global))

    @classmethod
    def from_free(cls, space, free_values):
        free_values = np.asarray(free_values, dtype=float)
        if free_values.shape != (space.n_free,):
            raise ValueError("free vector has wrong length")
        return cls(space, space.P @ free_values)

    @classmethod
    def from_callable(cls, space, fn):
        """Nodal interpolant of fn with hanging constraints resolved.

        Boundary node values are kept as sampled; use from_free for fields
        of the homogeneous solution space.
        """
        xy = space.node_coords
        vals = np.asarray(fn(xy[:, 0], xy[:, 1]), dtype=float)
        return cls(space, space.resolve(vals))

    @property
    def free_values(self):
        return self.coeffs[self.space.free_gids]

    # -- structured evaluation on the cell sample grid -----------------------

    def sample_values(self, deriv="val"):
        """Values (or derivatives) on the per-cell sample grid (ncells, npts)."""
        if deriv not in self._sample_cache:
            sp = self.space
            C = self.coeffs[sp.dofmap]
            if deriv == "val":
                V = C @ sp.tensor_basis("sample", 0, 0).T
            elif deriv == "dx":
                V = (C @ sp.tensor_basis("sample", 1, 0).T) / sp.mesh.hx[:, None]
            elif deriv == "dy":
                V = (C @ sp.tensor_basis("sample", 0, 1).T) / sp.mesh.hy[:, None]
            elif deriv == "lap":
                V = (C @ sp.tensor_basis("sample", 2, 0).T) / (sp.mesh.hx ** 2)[:, None] \
                    + (C @ sp.tensor_basis("sample", 0, 2).T) / (sp.mesh.hy ** 2)[:, None]
            else:
                raise ValueError("unknown derivative kind %r" % deriv)
            self._sample_cache[deriv] = V
        return self._sample_cache[deriv]

    def linf_norm(self):
        """Sampled max of |u| over all cells (approximate sup norm)."""
        return float(np.abs(self.sample_values("val")).max())

    # -- pointwise evaluation ---------------------------------------------------

    def eval(self, x, y, deriv=(0, 0)):
        """Evaluate at arbitrary points inside the closed rectangle."""
        out = evaluate_multi([self], np.asarray(x, dtype=float),
                             np.asarray(y, dtype=float), [deriv])[0]
        if np.isscalar(x) or np.ndim(x) == 0:
            return float(out[0])
        return out

    def __call__(self, x, y):
        return self.eval(x, y)

    def jump_max_per_cell(self):
        """Per-cell max of |[[grad u]] . n| over interior faces."""
        if self._jump_cache is None:
            self._jump_cache = _own_face_jumps(self)
        return self._jump_cache

    def jump_linf(self, cell):
        """Sampled max gradient jump on the interior faces of one cell."""
        if not isinstance(cell, (int, np.integer)):
            cell = self.space.mesh.index_of(cell)
        return float(self.jump_max_per_cell()[cell])


def linf_norm(field):
    return field.linf_norm()


# -- scattered evaluation -------------------------------------------------------


def evaluate_in_cells(fields, cells, x, y, derivs):
    """Evaluate fields of one space at points with known containing cells.

    fields: list of Field on the same space; cells, x, y: flat arrays;
    derivs: list of (dx, dy) or 'lap' matching fields.  Returns one value
    array per field.  Fully vectorized: one 1-D basis evaluation per
    derivative order over all points, then per-point contractions.
    """
    space = fields[0].space
    mesh = space.mesh
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    cells = np.asarray(cells, dtype=np.int64).ravel()
    p = space.degree
    ref = space.ref
    hx = mesh.hx[cells]
    hy = mesh.hy[cells]
    xi = np.clip((x - mesh.x0[cells]) / hx, 0.0, 1.0)
    eta = np.clip((y - mesh.y0[cells]) / hy, 0.0, 1.0)
    orders = set()
    for d in derivs:
        if d == "lap":
            orders.update((0, 2))
        else:
            orders.update(d)
    BX = {o: ref.eval(xi, o) for o in orders}
    BY = {o: ref.eval(eta, o) for o in orders}
    local = space.dofmap[cells]
    outs = []
    cached = {}
    for fld, dv in zip(fields, derivs):
        C = cached.get(id(fld))
        if C is None:
            C = fld.coeffs[local].reshape(len(x), p + 1, p + 1)
            cached[id(fld)] = C
        if dv == "lap":
            v = np.einsum("pji,pj,pi->p", C, BY[0], BX[2]) / (hx * hx) \
                + np.einsum("pji,pj,pi->p", C, BY[2], BX[0]) / (hy * hy)
        else:
            dx, dy = dv
            v = np.einsum("pji,pj,pi->p", C, BY[dy], BX[dx])
            if dx:
                v = v / hx ** dx
            if dy:
                v = v / hy ** dy
        outs.append(v)
    return outs


def evaluate_multi(fields, x, y, derivs):
    """Evaluate fields of one space at arbitrary points (with location)."""
    space = fields[0].space
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    cells = space.mesh.locate(x, y)
    return evaluate_in_cells(fields, cells, x, y, derivs)


def _own_face_jumps(field):
    """Max |[[grad u]] . n| per cell over the mesh's own interior faces."""
    space = field.space
    mesh = space.mesh
    fs = face_set(mesh)
    out = np.zeros(len(mesh))
    if fs.nfaces == 0:
        return out
    t = space.rule.sample1d
    ns = len(t)
    seg = fs.lo[:, None] + (fs.hi - fs.lo)[:, None] * t[None, :]
    for o, dv in ((0, (1, 0)), (1, (0, 1))):
        sel = np.flatnonzero(fs.orient == o)
        if len(sel) == 0:
            continue
        if o == 0:
            xpt = np.repeat(fs.coord[sel], ns)
            ypt = seg[sel].ravel()
        else:
            xpt = seg[sel].ravel()
            ypt = np.repeat(fs.coord[sel], ns)
        lcells = np.repeat(fs.left[sel], ns)
        rcells = np.repeat(fs.right[sel], ns)
        gl = evaluate_in_cells([field], lcells, xpt, ypt, [dv])[0]
        gr = evaluate_in_cells([field], rcells, xpt, ypt, [dv])[0]
        fmax = np.abs(gl - gr).reshape(len(sel), ns).max(axis=1)
        np.maximum.at(out, fs.left[sel], fmax)
        np.maximum.at(out, fs.right[sel], fmax)
    return out


# -- inter-mesh transfer ------------------------------------------------------


def _subcell_matrix(ref, dl, off, pts):
    """1-D cardinal values at (off + pts) / 2**dl."""
    return ref.eval((off + pts) / float(1 << dl), 0)


def interpolate(field, target_space):
    """Nodal interpolation onto another space over the same rectangle.

    Exact (pointwise) when the target mesh refines the source mesh at equal
    degree; on coarsened regions only nodal values are preserved.
    """
    src = field.space
    tgt = target_space
    if src.mesh.rect != tgt.mesh.rect:
        raise ValueError("spaces live on different rectangles")
    if tgt is src:
        return Field(tgt, field.coeffs.copy())

    p = tgt.degree
    same_p = src.degree == p
    raw = np.zeros(tgt.n_global)
    smesh, tmesh = src.mesh, tgt.mesh
    centers_x = tmesh.x0 + 0.5 * tmesh.hx
    centers_y = tmesh.y0 + 0.5 * tmesh.hy
    host = smesh.locate(centers_x, centers_y)
    sub_cache = {}
    scatter_cells = []

    for ci, key in enumerate(tmesh.leaves):
        si = int(host[ci])
        skey = smesh.leaves[si]
        dl = key[0] - skey[0]
        if dl < 0:
            scatter_cells.append(ci)
            continue
        if dl == 0 and same_p:
            raw[tgt.dofmap[ci]] = field.coeffs[src.dofmap[si]]
            continue
        offx = key[1] - (skey[1] << dl)
        offy = key[2] - (skey[2] << dl)
        ck = (dl, offx, offy)
        if ck not in sub_cache:
            Bx = _subcell_matrix(src.ref, dl, offx, tgt.ref.nodes)
            By = _subcell_matrix(src.ref, dl, offy, tgt.ref.nodes)
            sub_cache[ck] = (Bx, By)
        Bx, By = sub_cache[ck]
        C2 = field.coeffs[src.dofmap[si]].reshape(src.degree + 1, src.degree + 1)
        raw[tgt.dofmap[ci]] = (By @ C2 @ Bx.T).ravel()

    if scatter_cells:
        # Target cell coarser than the source: evaluate node by node.
        gids = np.unique(tgt.dofmap[scatter_cells])
        xy = tgt.node_coords[gids]
        raw[gids] = evaluate_multi([field], xy[:, 0], xy[:, 1], [(0, 0)])[0]
    return Field(tgt, tgt.resolve(raw))
