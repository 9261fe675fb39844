"""Boundary work, strain energy fields, region integrals, spectral norms.

The scalar strain energy measure used throughout is
    E^2 = |sym grad phi|^2 + rho0^-2 |phi + grad w|^2,
evaluated at element quadrature points with the same strain operators the
stiffness assembly uses, so discrete work identities hold to round-off.

Boundary load norms of negative order are defined spectrally through the
P1 Laplace-Beltrami eigenpairs of the closed boundary polyline, with modal
weights (1 + rho0^2 lambda)^s; the oscillation ratio compares the order
-1/2 and order -1 norms.
"""

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

from .solver import BoundaryLoad, _EDGE_T, element_operators

_TINY = 1e-300


@dataclass(frozen=True)
class WorkReport:
    work: float            # with the override region, W
    work_reference: float  # reference plate, W0
    gap: float             # W0 - W
    relative_gap: float


class Disk(NamedTuple):
    center: tuple
    radius: float


@dataclass(frozen=True)
class EnergyField:
    """Quadrature-point samples of the strain energy measure."""

    x: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    e2: np.ndarray
    element_id: np.ndarray
    bend_sq: np.ndarray    # |sym grad phi|^2
    shear_sq: np.ndarray   # |phi + grad w|^2
    mesh: object
    rho0: float

    @property
    def total(self):
        return float(self.weight @ self.e2)


@dataclass(frozen=True)
class FrequencyReport:
    norm_half: float   # combined order -1/2 load norm
    norm_one: float    # combined order -1 load norm
    ratio: float       # norm_half / norm_one, >= 1


def boundary_work(load, state):
    """Work of the boundary load against a state, by edge quadrature.

    Uses the same two point edge rule as the load assembly, so the value
    equals rhs . u exactly for states on the same mesh.
    """
    mesh = load.mesh
    if mesh is not state.mesh:
        raise ValueError("load and state live on different meshes")
    edges = mesh.boundary_edges
    L = load.edge_lengths()
    na = 0.5 * (1.0 - _EDGE_T)
    nb = 0.5 * (1.0 + _EDGE_T)
    w_nodal = state.w
    phi1, phi2 = state.phi1, state.phi2
    total = 0.0
    for g in range(2):
        wq = 0.5 * L
        wg = na[g] * w_nodal[edges[:, 0]] + nb[g] * w_nodal[edges[:, 1]]
        p1 = na[g] * phi1[edges[:, 0]] + nb[g] * phi1[edges[:, 1]]
        p2 = na[g] * phi2[edges[:, 0]] + nb[g] * phi2[edges[:, 1]]
        total += float(np.sum(wq * (load.q[:, g] * wg
                                    + load.m[:, g, 0] * p1
                                    + load.m[:, g, 1] * p2)))
    return total


def work_report(load, state, state_reference):
    w = boundary_work(load, state)
    w0 = boundary_work(load, state_reference)
    rel = (w0 - w) / w0 if w0 != 0.0 else float("nan")
    return WorkReport(w, w0, w0 - w, rel)


def strain_energy_density(state, rho0=None, order=2):
    """EnergyField of a state at an order x order Gauss rule per element."""
    mesh = state.mesh
    if rho0 is None:
        rho0 = mesh.domain.apriori.rho0
    ops = element_operators(mesh, order, state.assumed_shear)
    curv = ops.curvatures(state.u)
    shear = ops.shears(state.u)
    bend_sq = curv[..., 0] ** 2 + curv[..., 1] ** 2 + 0.5 * curv[..., 2] ** 2
    shear_sq = shear[..., 0] ** 2 + shear[..., 1] ** 2
    e2 = bend_sq + shear_sq / rho0 ** 2
    pos = ops.point_positions()
    wts = ops.point_weights()
    ne, g = wts.shape
    eid = np.repeat(np.arange(ne), g)
    return EnergyField(
        x=pos[..., 0].ravel(), y=pos[..., 1].ravel(), weight=wts.ravel(),
        e2=e2.ravel(), element_id=eid, bend_sq=bend_sq.ravel(),
        shear_sq=shear_sq.ravel(), mesh=mesh, rho0=float(rho0))


def region_energy(field, region):
    """Weighted sum of E^2 over a region (element mask or disk)."""
    if isinstance(region, Disk):
        cx, cy = region.center
        inside = (field.x - cx) ** 2 + (field.y - cy) ** 2 <= region.radius ** 2
    else:
        inside = np.asarray(region.flags)[field.element_id]
    if not np.any(inside):
        warnings.warn("region contains no quadrature points")
        return 0.0
    return float(field.weight[inside] @ field.e2[inside])


class KornRatio(NamedTuple):
    value: float
    degenerate: bool


def korn_ratio(state, order=2):
    """Full-gradient to symmetric-gradient-plus-shear ratio of a state."""
    mesh = state.mesh
    rho0 = mesh.domain.apriori.rho0
    ops = element_operators(mesh, order, state.assumed_shear)
    wts = ops.point_weights()
    g1 = ops.scalar_grads(state.phi1)
    g2 = ops.scalar_grads(state.phi2)
    num_sq = float(np.sum(wts[..., None] * (g1 ** 2 + g2 ** 2)))
    curv = ops.curvatures(state.u)
    shear = ops.shears(state.u)
    bend_sq = float(np.sum(wts * (curv[..., 0] ** 2 + curv[..., 1] ** 2
                                  + 0.5 * curv[..., 2] ** 2)))
    shear_sq = float(np.sum(wts * (shear[..., 0] ** 2 + shear[..., 1] ** 2)))
    den = np.sqrt(bend_sq) + np.sqrt(shear_sq) / rho0
    scale = np.sqrt(np.sum(wts) * max(np.abs(state.u).max(initial=0.0), 1.0))
    if den <= 1e-14 * scale:
        return KornRatio(float("nan"), True)
    return KornRatio(float(np.sqrt(num_sq) / den), False)


class PoincareRatio(NamedTuple):
    value: float
    degenerate: bool


def poincare_ratio(mesh, nodal, rho0=None, order=2):
    """Mean-free L2 norm over rho0 times the gradient norm, for a nodal field."""
    if rho0 is None:
        rho0 = mesh.domain.apriori.rho0
    nodal = np.asarray(nodal, dtype=float)
    ops = element_operators(mesh, order, True)
    wts = ops.point_weights()
    vals = ops.scalar_values(nodal)
    grads = ops.scalar_grads(nodal)
    area = float(np.sum(wts))
    mean = float(np.sum(wts * vals)) / area
    var = float(np.sum(wts * (vals - mean) ** 2))
    grad_sq = float(np.sum(wts[..., None] * grads ** 2))
    scale = max(np.abs(nodal).max(initial=0.0), 1.0)
    if grad_sq <= (1e-14 * scale) ** 2 * area:
        return PoincareRatio(float("nan"), True)
    return PoincareRatio(float(np.sqrt(var) / (rho0 * np.sqrt(grad_sq))), False)


# ---------------------------------------------------------------------------
# spectral boundary norms

_spectrum_cache = {}


def closed_boundary_polyline(mesh):
    """Boundary node coordinates in loop order, first point repeated last."""
    loop = mesh.boundary_loop()
    pts = mesh.nodes[loop]
    return np.vstack([pts, pts[:1]])


def _loop_spectrum(polyline):
    key = polyline.tobytes()
    if key in _spectrum_cache:
        return _spectrum_cache[key]
    if not np.array_equal(polyline[0], polyline[-1]):
        raise ValueError("polyline is open; spectral boundary norms need a closed loop")
    pts = polyline[:-1]
    n = len(pts)
    if n < 3:
        raise ValueError("closed polyline needs at least 3 distinct nodes")
    seg = polyline[1:] - polyline[:-1]
    ell = np.linalg.norm(seg, axis=1)
    if np.any(ell == 0.0):
        raise ValueError("polyline has a zero-length segment")
    t = np.zeros((n, n))
    m = np.zeros((n, n))
    for i in range(n):
        j = (i + 1) % n
        li = ell[i]
        t[i, i] += 1.0 / li
        t[j, j] += 1.0 / li
        t[i, j] -= 1.0 / li
        t[j, i] -= 1.0 / li
        m[i, i] += li / 3.0
        m[j, j] += li / 3.0
        m[i, j] += li / 6.0
        m[j, i] += li / 6.0
    lam, vec = scipy.linalg.eigh(t, m)
    lam = np.clip(lam, 0.0, None)
    out = (lam, vec, m, ell)
    _spectrum_cache[key] = out
    return out


def _nodal_samples(g, n):
    g = np.asarray(g, dtype=float)
    if len(g) == n + 1:
        if not np.allclose(g[0], g[-1]):
            raise ValueError("wrapped samples must repeat the first value last")
        g = g[:-1]
    if len(g) != n:
        raise ValueError(f"expected {n} boundary samples, got {len(g)}")
    return g


def boundary_fractional_norm(g, s, polyline, rho0):
    """Spectral norm of boundary samples at order s (s = -1/2 or -1).

    norm^2 = sum_k (1 + rho0^2 lambda_k)^s <g, v_k>^2 over the closed-loop
    eigenpairs; vector-valued samples combine components root-sum-square.
    """
    lam, vec, m, _ = _loop_spectrum(np.asarray(polyline, dtype=float))
    n = len(lam)
    g = np.asarray(g, dtype=float)
    if g.ndim == 2:
        comps = [boundary_fractional_norm(g[:, c], s, polyline, rho0)
                 for c in range(g.shape[1])]
        return float(np.sqrt(sum(v ** 2 for v in comps)))
    g = _nodal_samples(g, n)
    coef = vec.T @ (m @ g)
    weights = (1.0 + rho0 ** 2 * lam) ** s
    return float(np.sqrt(np.sum(weights * coef ** 2)))


def frequency(load, polyline=None, rho0=None):
    """Oscillation measure of a boundary load.

    Combines couple and force norms as (|m|_{-1/2} + rho0 |q|_{-1/2}) over
    the same combination at order -1; modal weight monotonicity makes the
    ratio at least 1.
    """
    if load.is_zero:
        raise ValueError("frequency of the zero load is undefined")
    mesh = load.mesh
    if polyline is None:
        polyline = closed_boundary_polyline(mesh)
    if rho0 is None:
        rho0 = mesh.domain.apriori.rho0
    nq, nm = _load_nodal_samples(load)
    m_half = boundary_fractional_norm(nm, -0.5, polyline, rho0)
    m_one = boundary_fractional_norm(nm, -1.0, polyline, rho0)
    q_half = boundary_fractional_norm(nq, -0.5, polyline, rho0)
    q_one = boundary_fractional_norm(nq, -1.0, polyline, rho0)
    num = m_half + rho0 * q_half
    den = m_one + rho0 * q_one
    return FrequencyReport(num, den, num / den)


def _load_nodal_samples(load):
    if load.nodal_q is not None and load.nodal_m is not None:
        return load.nodal_q, load.nodal_m
    # extrapolate the two Gauss samples of each edge to its endpoints and
    # average the two edges meeting at every node
    mesh = load.mesh
    loop = mesh.boundary_loop()
    pos = {int(nid): i for i, nid in enumerate(loop)}
    nq = np.zeros(len(loop))
    nm = np.zeros((len(loop), 2))
    count = np.zeros(len(loop))
    span = _EDGE_T[1] - _EDGE_T[0]
    for e, (a, b) in enumerate(mesh.boundary_edges):
        mid_q = 0.5 * (load.q[e, 0] + load.q[e, 1])
        slope_q = (load.q[e, 1] - load.q[e, 0]) / span
        mid_m = 0.5 * (load.m[e, 0] + load.m[e, 1])
        slope_m = (load.m[e, 1] - load.m[e, 0]) / span
        for node, tt in ((int(a), -1.0), (int(b), 1.0)):
            i = pos[node]
            nq[i] += mid_q + slope_q * tt
            nm[i] += mid_m + slope_m * tt
            count[i] += 1.0
    return nq / count, nm / count[:, None]


def boundary_mode(mesh, k):
    """k-th Laplace-Beltrami eigenpair of the boundary loop.

    Returns (eigenvalue, nodal values in loop order). Mode 0 is constant.
    """
    lam, vec, _, _ = _loop_spectrum(closed_boundary_polyline(mesh))
    if not 0 <= k < len(lam):
        raise ValueError(f"mode index {k} out of range")
    return float(lam[k]), vec[:, k].copy()


def mode_load(mesh, k, amplitude=1.0, compensate=True):
    """Transverse force given by a boundary eigenmode.

    The mode is interpolated linearly along each edge; with compensate, a
    constant couple is added so the net-moment identity holds exactly and
    the load is solvable.
    """
    if k < 1:
        raise ValueError("mode loads need k >= 1; mode 0 is not equilibrated")
    lam, v = boundary_mode(mesh, k)
    loop = mesh.boundary_loop()
    pos = {int(nid): i for i, nid in enumerate(loop)}
    edges = mesh.boundary_edges
    nb = len(edges)
    q = np.zeros((nb, 2))
    m = np.zeros((nb, 2, 2))
    na = 0.5 * (1.0 - _EDGE_T)
    nb_ = 0.5 * (1.0 + _EDGE_T)
    va = amplitude * np.array([v[pos[int(a)]] for a, _ in edges])
    vb = amplitude * np.array([v[pos[int(b)]] for _, b in edges])
    for g in range(2):
        q[:, g] = na[g] * va + nb_[g] * vb
    load = BoundaryLoad(mesh, q, m, family=f"mode k={k}")
    if compensate:
        L = load.edge_lengths()
        pts = load.edge_points()
        int_qx = np.einsum("eg,egc->c", 0.5 * L[:, None] * q, pts)
        const_m = int_qx / float(L.sum())
        m[:] = const_m[None, None, :]
    load.nodal_q = amplitude * v
    load.nodal_m = np.broadcast_to(m[0, 0], (len(loop), 2)).copy() if compensate \
        else np.zeros((len(loop), 2))
    return load
