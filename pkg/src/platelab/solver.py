"""Pure-Neumann Reissner-Mindlin plate solver on quadrilateral meshes.

Unknowns are two rotations and the transverse deflection at each node, in
node-major dof order (phi1_i, phi2_i, w_i) -> (3i, 3i+1, 3i+2). The bilinear
form couples curvature through the bending matrix and the shear strain
phi + grad w through the shear matrix. The shear term uses an assumed strain
interpolation (covariant components tied at edge midpoints) to avoid locking;
a fully integrated variant stays available for comparison studies.

The traction-only problem is singular with the three dimensional kernel
(phi = e1, w = -x1), (phi = e2, w = -x2), (w = 1); solving goes through a
saddle system that pins the mean of phi and w to zero. A dense
eigendecomposition path provides an independent oracle on small meshes.
"""

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .geometry import shape_q4

_TINY = 1e-300


class SolveError(RuntimeError):
    pass


class CompatibilityError(SolveError):
    """Load violates the closed-boundary equilibrium identities."""

    def __init__(self, message, force_residual=None, moment_residual=None):
        super().__init__(message)
        self.force_residual = force_residual
        self.moment_residual = moment_residual


def gauss_rule(order):
    """Tensor-product Gauss points on the reference square, row-major in s."""
    x, w = np.polynomial.legendre.leggauss(order)
    pts = np.array([(r, s) for s in x for r in x])
    wts = np.array([wr * ws for ws in w for wr in w])
    return pts, wts


# tying points for the assumed shear field: r-component sampled on the
# horizontal edge midpoints, s-component on the vertical ones
_TIE_R = ((0.0, -1.0), (0.0, 1.0))
_TIE_S = ((-1.0, 0.0), (1.0, 0.0))


def _covariant_row(xy, r, s, comp):
    # row of the covariant shear strain at (r, s) over the 12 element dofs:
    # gamma_c = phi . dx/dc + dw/dc for c in {r, s}
    n, dn = shape_q4(r, s)
    j = dn @ xy
    row = np.zeros(12)
    row[0::3] = n * j[comp, 0]
    row[1::3] = n * j[comp, 1]
    row[2::3] = dn[comp]
    return row


def _element_tables(xy, pts, assumed):
    """Strain-displacement tables for one element geometry.

    Returns bending rows (G, 3, 12), shear rows (G, 2, 12), and the
    Jacobian determinants (G,). Translation invariant, so congruent
    elements can share one set of tables.
    """
    g = len(pts)
    bb = np.zeros((g, 3, 12))
    bs = np.zeros((g, 2, 12))
    det = np.zeros(g)
    shap = np.zeros((g, 4))
    if assumed:
        tie_r = [_covariant_row(xy, r, s, 0) for r, s in _TIE_R]
        tie_s = [_covariant_row(xy, r, s, 1) for r, s in _TIE_S]
    for k, (r, s) in enumerate(pts):
        n, dn = shape_q4(r, s)
        j = dn @ xy
        det[k] = np.linalg.det(j)
        if det[k] <= 0.0:
            raise SolveError("element Jacobian is not positive")
        jinv = np.linalg.inv(j)
        dnx = jinv @ dn
        shap[k] = n
        bb[k, 0, 0::3] = dnx[0]
        bb[k, 1, 1::3] = dnx[1]
        bb[k, 2, 0::3] = dnx[1]
        bb[k, 2, 1::3] = dnx[0]
        if assumed:
            cov = np.vstack([
                0.5 * (1.0 - s) * tie_r[0] + 0.5 * (1.0 + s) * tie_r[1],
                0.5 * (1.0 - r) * tie_s[0] + 0.5 * (1.0 + r) * tie_s[1],
            ])
            bs[k] = jinv @ cov
        else:
            bs[k, 0, 0::3] = n
            bs[k, 0, 2::3] = dnx[0]
            bs[k, 1, 1::3] = n
            bs[k, 1, 2::3] = dnx[1]
    return bb, bs, det, shap


@dataclass
class _Group:
    idx: np.ndarray     # element indices sharing this geometry
    bb: np.ndarray      # (G, 3, 12)
    bs: np.ndarray      # (G, 2, 12)
    detw: np.ndarray    # (G,) Jacobian determinant times Gauss weight
    shape: np.ndarray   # (G, 4)
    int_shape: np.ndarray  # (4,) integral of each shape function


class ElementOps:
    """Per-element strain operators, grouped by congruent geometry."""

    def __init__(self, mesh, order=2, assumed=True):
        self.mesh = mesh
        self.order = order
        self.assumed = assumed
        self.pts, wts = gauss_rule(order)
        quads = mesh.nodes[mesh.elements]
        local = quads - quads[:, :1, :]
        keys = local.round(12)
        groups = {}
        for e in range(mesh.n_elements):
            groups.setdefault(keys[e].tobytes(), []).append(e)
        self.groups = []
        self.group_of = np.zeros(mesh.n_elements, dtype=int)
        for gi, (key, elems) in enumerate(sorted(groups.items())):
            idx = np.array(elems, dtype=int)
            bb, bs, det, shap = _element_tables(local[idx[0]], self.pts, assumed)
            detw = det * wts
            self.groups.append(_Group(idx, bb, bs, detw, shap, shap.T @ detw))
            self.group_of[idx] = gi

    def dof_indices(self):
        el = self.mesh.elements
        base = (3 * el)[:, :, None] + np.arange(3)[None, None, :]
        return base.reshape(self.mesh.n_elements, 12)

    def element_vectors(self, u):
        return u[self.dof_indices()]

    def stiffness_blocks(self, bend, shear):
        """Element matrices (ne, 12, 12) for per-element bend (ne,3,3) and
        shear (ne,2,2) coefficient matrices."""
        out = np.zeros((self.mesh.n_elements, 12, 12))
        for g in self.groups:
            bbw = g.bb * g.detw[:, None, None]
            bsw = g.bs * g.detw[:, None, None]
            ke = np.einsum("gai,eab,gbj->eij", bbw, bend[g.idx], g.bb,
                           optimize=True)
            ke += np.einsum("gai,eab,gbj->eij", bsw, shear[g.idx], g.bs,
                            optimize=True)
            out[g.idx] = 0.5 * (ke + np.swapaxes(ke, 1, 2))
        return out

    def curvatures(self, u):
        """(ne, G, 3) curvature vectors (k11, k22, k12_eng) of a dof vector."""
        ue = self.element_vectors(u)
        out = np.zeros((self.mesh.n_elements, len(self.pts), 3))
        for g in self.groups:
            out[g.idx] = np.einsum("gai,ei->ega", g.bb, ue[g.idx])
        return out

    def shears(self, u):
        """(ne, G, 2) shear strain phi + grad w (assumed field if enabled)."""
        ue = self.element_vectors(u)
        out = np.zeros((self.mesh.n_elements, len(self.pts), 2))
        for g in self.groups:
            out[g.idx] = np.einsum("gai,ei->ega", g.bs, ue[g.idx])
        return out

    def scalar_values(self, nodal):
        vals = nodal[self.mesh.elements]
        out = np.zeros((self.mesh.n_elements, len(self.pts)))
        for g in self.groups:
            out[g.idx] = vals[g.idx] @ g.shape.T
        return out

    def scalar_grads(self, nodal):
        # gradients need per-point Jacobians; recover them from the bending
        # rows, whose first row holds d/dx and second d/dy of the shapes
        vals = nodal[self.mesh.elements]
        out = np.zeros((self.mesh.n_elements, len(self.pts), 2))
        for g in self.groups:
            dx = g.bb[:, 0, 0::3]
            dy = g.bb[:, 1, 1::3]
            out[g.idx, :, 0] = np.einsum("gi,ei->eg", dx, vals[g.idx])
            out[g.idx, :, 1] = np.einsum("gi,ei->eg", dy, vals[g.idx])
        return out

    def point_weights(self):
        out = np.zeros((self.mesh.n_elements, len(self.pts)))
        for g in self.groups:
            out[g.idx] = g.detw
        return out

    def point_positions(self):
        quads = self.mesh.nodes[self.mesh.elements]
        out = np.zeros((self.mesh.n_elements, len(self.pts), 2))
        for g in self.groups:
            out[g.idx] = np.einsum("gi,eic->egc", g.shape, quads[g.idx])
        return out

    def shape_integrals(self):
        out = np.zeros((self.mesh.n_elements, 4))
        for g in self.groups:
            out[g.idx] = g.int_shape
        return out


def element_operators(mesh, order=2, assumed=True):
    cache = mesh.__dict__.setdefault("_element_ops", {})
    key = (order, assumed)
    if key not in cache:
        cache[key] = ElementOps(mesh, order, assumed)
    return cache[key]


def kernel_basis(mesh):
    """The three traction-free motions as dof vectors, rows of (3, ndof)."""
    n = mesh.n_nodes
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    k = np.zeros((3, 3 * n))
    k[0, 0::3] = 1.0
    k[0, 2::3] = -x
    k[1, 1::3] = 1.0
    k[1, 2::3] = -y
    k[2, 2::3] = 1.0
    return k


@dataclass
class LinearSystem:
    """Assembled stiffness with the three mean-value constraint rows.

    rhs stays None until a load is attached with with_load; constraints has
    rows (integral of phi1, integral of phi2, integral of w).
    """

    stiffness: sp.csr_matrix
    constraints: np.ndarray
    mesh: object
    assumed_shear: bool
    rhs: np.ndarray | None = None
    load: object | None = None

    @property
    def n_dof(self):
        return self.stiffness.shape[0]

    def with_load(self, rhs, load=None):
        return replace(self, rhs=np.asarray(rhs, dtype=float), load=load)


def _coefficient_fields(mesh, material, indicator, inclusion):
    from .material import bending_voigt, derive_plate_tensors, shear_matrix

    ne = mesh.n_elements
    tens = derive_plate_tensors(material)
    bend = bending_voigt(tens, ne).copy()
    shear = shear_matrix(tens, ne).copy()
    if indicator is not None and not indicator.empty:
        if inclusion is None:
            raise ValueError("flagged elements need an inclusion override")
        fl = indicator.flags
        if inclusion.scalar:
            bend[fl] *= inclusion.kappa
            shear[fl] *= inclusion.kappa
        else:
            st = np.asarray(inclusion.stilde, dtype=float)
            pt = np.asarray(inclusion.ptilde, dtype=float)
            st = np.broadcast_to(st, (ne, 2, 2)) if st.ndim == 2 else st
            pt = np.broadcast_to(pt, (ne, 3, 3)) if pt.ndim == 2 else pt
            if len(st) != ne or len(pt) != ne:
                raise ValueError("override tables do not match the element count")
            if np.isnan(st[fl]).any() or np.isnan(pt[fl]).any():
                bad = np.where(fl & (np.isnan(st).any(axis=(1, 2))
                                     | np.isnan(pt).any(axis=(1, 2))))[0][0]
                raise ValueError(f"override tables miss flagged element {bad}")
            shear[fl] = st[fl]
            bend[fl] = pt[fl]
    return bend, shear


def assemble_stiffness(mesh, material, indicator=None, inclusion=None,
                       assumed_shear=True, order=2):
    """Stiffness and constraint rows for the composite plate."""
    from .material import validate_on_mesh

    validate_on_mesh(material, mesh)
    bend, shear = _coefficient_fields(mesh, material, indicator, inclusion)
    ops = element_operators(mesh, order, assumed_shear)
    ke = ops.stiffness_blocks(bend, shear)
    dofs = ops.dof_indices()
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    n = 3 * mesh.n_nodes
    k = sp.coo_matrix((ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()

    intn = ops.shape_integrals()
    nodal = np.zeros(mesh.n_nodes)
    np.add.at(nodal, mesh.elements.ravel(), intn.ravel())
    c = np.zeros((3, n))
    c[0, 0::3] = nodal
    c[1, 1::3] = nodal
    c[2, 2::3] = nodal
    return LinearSystem(k, c, mesh, assumed_shear)


# ---------------------------------------------------------------------------
# boundary loads

_EDGE_T = np.array([-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0)])


@dataclass
class BoundaryLoad:
    """Per-edge Gauss samples of the transverse force q and couple m.

    q has shape (n_edges, 2) and m (n_edges, 2, 2): two Gauss points per
    edge at parameters -1/sqrt(3), 1/sqrt(3). An analytic generator, when
    present, re-evaluates the load at arbitrary edge points; otherwise
    resampling extends the two samples linearly. nodal_q / nodal_m carry
    boundary-node samples for spectral diagnostics (corner values average
    the two adjacent edges).
    """

    mesh: object
    q: np.ndarray
    m: np.ndarray
    family: str | None = None
    generator: object = None
    nodal_q: np.ndarray | None = None
    nodal_m: np.ndarray | None = None

    def edge_points(self, tpts=_EDGE_T):
        a = self.mesh.nodes[self.mesh.boundary_edges[:, 0]]
        b = self.mesh.nodes[self.mesh.boundary_edges[:, 1]]
        t = np.asarray(tpts)
        return (0.5 * (1.0 - t)[None, :, None] * a[:, None, :]
                + 0.5 * (1.0 + t)[None, :, None] * b[:, None, :])

    def edge_lengths(self):
        a = self.mesh.nodes[self.mesh.boundary_edges[:, 0]]
        b = self.mesh.nodes[self.mesh.boundary_edges[:, 1]]
        return np.linalg.norm(b - a, axis=1)

    def resample(self, order):
        """Samples (q, m, tpts, wts) at an order-point edge Gauss rule."""
        t, w = np.polynomial.legendre.leggauss(order)
        if self.generator is not None:
            pts = self.edge_points(t)
            normals = self.mesh.boundary_normals
            q = np.zeros((len(pts), order))
            m = np.zeros((len(pts), order, 2))
            for k in range(order):
                q[:, k], m[:, k, :] = self.generator(pts[:, k, :], normals)
            return q, m, t, w
        # linear extension through the two stored samples
        mid_q = 0.5 * (self.q[:, 0] + self.q[:, 1])
        slope_q = (self.q[:, 1] - self.q[:, 0]) / (_EDGE_T[1] - _EDGE_T[0])
        mid_m = 0.5 * (self.m[:, 0] + self.m[:, 1])
        slope_m = (self.m[:, 1] - self.m[:, 0]) / (_EDGE_T[1] - _EDGE_T[0])
        q = mid_q[:, None] + slope_q[:, None] * t[None, :]
        m = mid_m[:, None, :] + slope_m[:, None, :] * t[None, :, None]
        return q, m, t, w

    def compatibility_residuals(self):
        """(net force, net moment 2-vector, load scale) by edge quadrature."""
        L = self.edge_lengths()
        w = 0.5 * L  # each of the two Gauss weights on an edge
        pts = self.edge_points()
        int_q = float(np.sum(w[:, None] * self.q))
        int_mx = np.einsum("eg,eg,egc->c", w[:, None] * np.ones_like(self.q),
                           self.q, pts) - np.einsum("eg,egc->c", w[:, None] * np.ones_like(self.q), self.m)
        diam = self.mesh.domain.diameter
        scale = float(np.sum(w[:, None] * np.abs(self.q)) * diam
                      + np.sum(w[:, None] * np.linalg.norm(self.m, axis=2)))
        return int_q, int_mx, scale

    def norm(self):
        """L2 boundary norms (of q, of m)."""
        w = 0.5 * self.edge_lengths()
        nq = float(np.sqrt(np.sum(w[:, None] * self.q ** 2)))
        nm = float(np.sqrt(np.sum(w[:, None] * np.sum(self.m ** 2, axis=2))))
        return nq, nm

    @property
    def is_zero(self):
        return not (np.any(self.q) or np.any(self.m))


def _nodal_from_edges(mesh, q_edge_fn, m_edge_fn):
    # evaluate per-edge at the two endpoints and average around each node
    loop = mesh.boundary_edges[:, 0]
    nl = len(loop)
    nq = np.zeros(nl)
    nm = np.zeros((nl, 2))
    pos = {int(n): i for i, n in enumerate(loop)}
    counts = np.zeros(nl)
    for e, (a, b) in enumerate(mesh.boundary_edges):
        n = mesh.boundary_normals[e]
        for node in (int(a), int(b)):
            i = pos[node]
            x = mesh.nodes[node]
            nq[i] += q_edge_fn(x, n)
            nm[i] += m_edge_fn(x, n)
            counts[i] += 1.0
    return nq / counts, nm / counts[:, None]


def load_from_family(mesh, family, material=None):
    """Analytic load families.

    'pure_bending a=<v>': couple rigidity*a*(1+nu) along the outward normal,
        whose exact solution is phi = a x, w = -a |x|^2 / 2.
    'edge_moment c=<v>': couple c along the outward normal.
    'twist a=<v>': couple rigidity*a*(1-nu)*(n2, n1), exact solution
        phi = a (x2, x1), w = -a x1 x2.
    """
    name, params = _parse_family(family)
    if name in ("pure_bending", "twist"):
        if material is None:
            raise ValueError(f"family '{name}' needs the background material")
        from .material import derive_plate_tensors
        if not material.uniform:
            raise ValueError("analytic load families need a uniform material")
        t = derive_plate_tensors(material)
    if name == "pure_bending":
        a = params.get("a", 1.0)
        c = t.rigidity * a * (1.0 + t.nu)

        def gen(points, normals):
            return np.zeros(len(points)), c * normals
    elif name == "edge_moment":
        c = params.get("c", 1.0)

        def gen(points, normals):
            return np.zeros(len(points)), c * normals
    elif name == "twist":
        a = params.get("a", 1.0)
        c = t.rigidity * a * (1.0 - t.nu)

        def gen(points, normals):
            return np.zeros(len(points)), c * normals[:, ::-1]
    else:
        raise ValueError(f"unknown load family '{name}'")

    pts = None
    nb = len(mesh.boundary_edges)
    q = np.zeros((nb, 2))
    m = np.zeros((nb, 2, 2))
    load = BoundaryLoad(mesh, q, m, family=family, generator=gen)
    pts = load.edge_points()
    for k in range(2):
        q[:, k], m[:, k, :] = gen(pts[:, k, :], mesh.boundary_normals)
    nodal_q, nodal_m = _nodal_from_edges(
        mesh,
        lambda x, n: gen(x[None, :], n[None, :])[0][0],
        lambda x, n: gen(x[None, :], n[None, :])[1][0],
    )
    load.nodal_q = nodal_q
    load.nodal_m = nodal_m
    return load


def _parse_family(spec):
    parts = spec.split()
    if not parts:
        raise ValueError("empty load family")
    params = {}
    for tok in parts[1:]:
        if "=" not in tok:
            raise ValueError(f"bad family parameter '{tok}'")
        key, val = tok.split("=", 1)
        params[key] = float(val)
    return parts[0], params


def load_to_csv(load, path):
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["edge_id", "gauss_index", "q", "m1", "m2"])
        for e in range(len(load.q)):
            for g in range(2):
                w.writerow([e, g, repr(float(load.q[e, g])),
                            repr(float(load.m[e, g, 0])),
                            repr(float(load.m[e, g, 1]))])


def load_from_csv(mesh, path):
    import csv

    nb = len(mesh.boundary_edges)
    q = np.zeros((nb, 2))
    m = np.zeros((nb, 2, 2))
    seen = np.zeros((nb, 2), dtype=bool)
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "edge_id":
                continue
            e, g = int(row[0]), int(row[1])
            q[e, g] = float(row[2])
            m[e, g] = (float(row[3]), float(row[4]))
            seen[e, g] = True
    if not seen.all():
        raise ValueError("load table does not cover every boundary edge")
    return BoundaryLoad(mesh, q, m)


def assemble_load(mesh, load, tol=1e-9, order=2, check=True):
    """Consistent load vector by edge-wise Gauss quadrature.

    check=True enforces the closed-boundary equilibrium identities (zero
    net transverse force, zero net moment) within tol relative to the load
    magnitude.
    """
    if load.mesh is not mesh:
        raise ValueError("load was sampled on a different mesh")
    if check:
        int_q, int_mx, scale = load.compatibility_residuals()
        bound = tol * scale + _TINY
        diam = mesh.domain.diameter
        if abs(int_q) * diam > bound or np.linalg.norm(int_mx) > bound:
            raise CompatibilityError(
                f"incompatible load: net force {int_q:.3e}, "
                f"net moment {int_mx}",
                force_residual=int_q, moment_residual=int_mx)
    if order == 2:
        q, m = load.q, load.m
        t, w = _EDGE_T, np.array([1.0, 1.0])
    else:
        q, m, t, w = load.resample(order)
    L = load.edge_lengths()
    f = np.zeros(3 * mesh.n_nodes)
    na = 0.5 * (1.0 - t)
    nb_ = 0.5 * (1.0 + t)
    for gi in range(len(t)):
        wq = 0.5 * L * w[gi]
        for side, shape in ((0, na[gi]), (1, nb_[gi])):
            nodes = mesh.boundary_edges[:, side]
            np.add.at(f, 3 * nodes + 2, wq * shape * q[:, gi])
            np.add.at(f, 3 * nodes, wq * shape * m[:, gi, 0])
            np.add.at(f, 3 * nodes + 1, wq * shape * m[:, gi, 1])
    return f


# ---------------------------------------------------------------------------
# solving


@dataclass
class PlateState:
    """Solved dof vector with solve diagnostics."""

    u: np.ndarray
    mesh: object
    residual: float                 # ||K u - f + C^T lambda|| / ||f||
    normalization: np.ndarray       # (3,) constraint values, should be ~0
    multipliers: np.ndarray
    stability_ratio: float
    assumed_shear: bool = True

    @property
    def phi1(self):
        return self.u[0::3]

    @property
    def phi2(self):
        return self.u[1::3]

    @property
    def w(self):
        return self.u[2::3]


def _check_kernel_compatibility(mesh, f, tol):
    fn = np.linalg.norm(f)
    for i, k in enumerate(kernel_basis(mesh)):
        if abs(f @ k) > tol * fn * np.linalg.norm(k) + _TINY:
            raise CompatibilityError(
                f"load has a component on rigid motion {i}: {f @ k:.3e}")


def _stability_ratio(mesh, u, load, rho0, assumed):
    if load is None:
        return float("nan")
    ops = element_operators(mesh, 2, assumed)
    wts = ops.point_weights()

    def h1(nodal):
        vals = ops.scalar_values(nodal)
        grads = ops.scalar_grads(nodal)
        return float(np.sum(wts * vals ** 2)
                     + rho0 ** 2 * np.sum(wts[..., None] * grads ** 2))

    phi_sq = h1(u[0::3]) + h1(u[1::3])
    w_sq = h1(u[2::3])
    nq, nm = load.norm()
    denom = nm + rho0 * nq
    if denom == 0.0:
        return float("nan")
    return (np.sqrt(phi_sq) + np.sqrt(w_sq) / rho0) / denom


def solve(system, tol=1e-9):
    """Solve the saddle system enforcing zero-mean rotations and deflection."""
    if system.rhs is None:
        raise ValueError("system has no load attached; use with_load first")
    f = system.rhs
    mesh = system.mesh
    _check_kernel_compatibility(mesh, f, tol)
    k = system.stiffness
    c = sp.csr_matrix(system.constraints)
    n = system.n_dof
    a = sp.bmat([[k, c.T], [c, None]], format="csc")
    b = np.concatenate([f, np.zeros(3)])
    x = spla.spsolve(a, b)
    if not np.all(np.isfinite(x)):
        raise SolveError("sparse factorization produced non-finite values")
    u, mult = x[:n], x[n:]
    fn = np.linalg.norm(f)
    res = np.linalg.norm(k @ u + c.T @ mult - f) / (fn + _TINY)
    rho0 = mesh.domain.apriori.rho0
    ratio = _stability_ratio(mesh, u, system.load, rho0, system.assumed_shear)
    return PlateState(u, mesh, float(res), system.constraints @ u, mult,
                      ratio, system.assumed_shear)


def dense_oracle_solve(system, cap=600, tol=1e-9, kernel_cut=1e-10):
    """Dense eigendecomposition solve, independent of the sparse path.

    Verifies that exactly three eigenvalues fall below kernel_cut times the
    largest one, inverts on the complement, then shifts by kernel motions to
    meet the zero-mean constraints exactly.
    """
    if system.rhs is None:
        raise ValueError("system has no load attached; use with_load first")
    n = system.n_dof
    if n > cap:
        raise SolveError(f"dense oracle capped at {cap} dof, system has {n}")
    f = system.rhs
    kd = system.stiffness.toarray()
    kd = 0.5 * (kd + kd.T)
    w, v = np.linalg.eigh(kd)
    wmax = w[-1]
    null = w < kernel_cut * wmax
    if int(null.sum()) != 3:
        raise SolveError(f"stiffness kernel has dimension {int(null.sum())}, expected 3")
    vk = v[:, null]
    fn = np.linalg.norm(f)
    comp = vk.T @ f
    if np.any(np.abs(comp) > tol * fn + _TINY):
        raise CompatibilityError(
            f"load has kernel components {comp} beyond tolerance")
    vp = v[:, ~null]
    u = vp @ ((vp.T @ f) / w[~null])
    c = system.constraints
    alpha = np.linalg.solve(c @ vk, c @ u)
    u = u - vk @ alpha
    res = np.linalg.norm(kd @ u - f) / (fn + _TINY)
    mesh = system.mesh
    rho0 = mesh.domain.apriori.rho0
    ratio = _stability_ratio(mesh, u, system.load, rho0, system.assumed_shear)
    return PlateState(u, mesh, float(res), c @ u, np.zeros(3), ratio,
                      system.assumed_shear)


def residual_check(state, mesh, material, load, indicator=None, inclusion=None):
    """Weak residual of a state against an enriched (3x3, 3-point) quadrature.

    Returns (max_element_residual, relative_norm, worst_element).
    """
    bend, shear = _coefficient_fields(mesh, material, indicator, inclusion)
    ops = element_operators(mesh, 3, state.assumed_shear)
    ke = ops.stiffness_blocks(bend, shear)
    dofs = ops.dof_indices()
    ue = state.u[dofs]
    re = np.einsum("eij,ej->ei", ke, ue)
    r = np.zeros(3 * mesh.n_nodes)
    np.add.at(r, dofs.ravel(), re.ravel())
    f = assemble_load(mesh, load, order=3, check=False)
    r -= f
    per_elem = np.linalg.norm(r[dofs], axis=1)
    worst = int(np.argmax(per_elem))
    rel = float(np.linalg.norm(r) / (np.linalg.norm(f) + _TINY))
    return float(per_elem[worst]), rel, worst
