"""Isotropic plate material and the derived stiffness tensors.

The background material is isotropic with Lame fields lam, mu (scalar or one
value per element) and thickness h. Derived quantities: transverse shear
stiffness S = h*mu and bending rigidity B = E h^3 / (12 (1 - nu^2)) acting as
    P A = B [ (1-nu) sym(A) + nu tr(A) I ].
Quadratic forms over symmetric 2x2 matrices are represented in a 3-vector
convention (A11, A22, 2*A12), so the isotropic bending matrix is
    B * [[1, nu, 0], [nu, 1, 0], [0, 0, (1-nu)/2]]
and a general bending tensor is the symmetric matrix
    [[P1111, P1122, P1112], [P1122, P2222, P2212], [P1112, P2212, P1212]].

A contrasting region can override both tensors, either by a scalar factor
kappa or by explicit per-element tables; jump_bounds extracts the tightest
two-sided spectral comparison (eta, delta) between override and background.
"""

import csv
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import scipy.linalg

_REL = 1e-12


def _as_field(x, name):
    if np.ndim(x) == 0:
        return float(x)
    arr = np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be scalar or a 1d per-element array")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _worst(values, reverse=False):
    # index of the extreme entry, 0 for scalars
    if np.ndim(values) == 0:
        return 0
    return int(np.argmax(values) if reverse else np.argmin(values))


@dataclass(frozen=True)
class IsotropicMaterial:
    """Background Lame fields with declared ellipticity window.

    alpha0 and gamma0 are the declared floors (mu >= alpha0,
    2 mu + 3 lam >= gamma0); alpha1 caps |lam| and mu and doubles as the
    regularity budget for cross-element variation (see validate_on_mesh).
    """

    lam: object
    mu: object
    h: float
    alpha0: float = 1.0
    gamma0: float = 5.0
    alpha1: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "lam", _as_field(self.lam, "lam"))
        object.__setattr__(self, "mu", _as_field(self.mu, "mu"))
        if not self.h > 0:
            raise ValueError("h must be positive")
        for name in ("alpha0", "gamma0", "alpha1"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        lam, mu = np.asarray(self.lam), np.asarray(self.mu)
        if lam.shape != mu.shape and lam.ndim and mu.ndim:
            raise ValueError("lam and mu fields must have matching length")
        if np.any(mu < self.alpha0):
            e = _worst(mu - self.alpha0)
            raise ValueError(f"mu violates the floor alpha0 at element {e}")
        if np.any(2.0 * mu + 3.0 * lam < self.gamma0):
            e = _worst(2.0 * mu + 3.0 * lam - self.gamma0)
            raise ValueError(f"2*mu + 3*lam violates the floor gamma0 at element {e}")
        if np.any(mu > self.alpha1) or np.any(np.abs(lam) > self.alpha1):
            e = _worst(np.maximum(mu, np.abs(lam)), reverse=True)
            raise ValueError(f"Lame moduli exceed the cap alpha1 at element {e}")

    @property
    def uniform(self):
        return np.ndim(self.lam) == 0 and np.ndim(self.mu) == 0


class PlateTensors(NamedTuple):
    """Per-element derived coefficients (scalars when fields are uniform)."""

    shear: object      # S = h * mu
    young: object      # E
    nu: object
    rigidity: object   # B
    h: float


def derive_plate_tensors(mat):
    """Shear stiffness, Young modulus, Poisson ratio, bending rigidity."""
    lam, mu, h = mat.lam, mat.mu, mat.h
    young = mu * (2.0 * mu + 3.0 * lam) / (mu + lam)
    nu = lam / (2.0 * (mu + lam))
    rigidity = young * h ** 3 / (12.0 * (1.0 - nu ** 2))
    return PlateTensors(h * mu, young, nu, rigidity, h)


def bending_voigt(tensors, n_elements=None):
    """Bending quadratic form as a 3x3 matrix per element.

    Acts on (A11, A22, 2*A12). Returns (3, 3) for uniform coefficients and
    n_elements None, else (n_elements, 3, 3).
    """
    b = np.broadcast_to(np.asarray(tensors.rigidity, dtype=float),
                        () if n_elements is None else (n_elements,))
    nu = np.broadcast_to(np.asarray(tensors.nu, dtype=float), b.shape)
    out = np.zeros(b.shape + (3, 3))
    out[..., 0, 0] = b
    out[..., 1, 1] = b
    out[..., 0, 1] = b * nu
    out[..., 1, 0] = b * nu
    out[..., 2, 2] = 0.5 * b * (1.0 - nu)
    return out


def shear_matrix(tensors, n_elements=None):
    """Shear quadratic form S*I2 per element."""
    s = np.broadcast_to(np.asarray(tensors.shear, dtype=float),
                        () if n_elements is None else (n_elements,))
    out = np.zeros(s.shape + (2, 2))
    out[..., 0, 0] = s
    out[..., 1, 1] = s
    return out


def bending_apply(mat, element, a):
    """Apply the bending tensor of one element to a 2x2 matrix."""
    t = derive_plate_tensors(mat)
    b = t.rigidity if np.ndim(t.rigidity) == 0 else t.rigidity[element]
    nu = t.nu if np.ndim(t.nu) == 0 else t.nu[element]
    a = np.asarray(a, dtype=float)
    sym = 0.5 * (a + a.T)
    return b * ((1.0 - nu) * sym + nu * np.trace(a) * np.eye(2))


@dataclass(frozen=True)
class EllipticityConstants:
    sigma0: float
    sigma1: float
    xi0: float
    xi1: float


# orthonormal basis of symmetric 2x2 matrices, used for spectral checks
_SYM_BASIS = np.array([
    [[1.0, 0.0], [0.0, 0.0]],
    [[0.0, 0.0], [0.0, 1.0]],
    [[0.0, 1.0 / np.sqrt(2.0)], [1.0 / np.sqrt(2.0), 0.0]],
])


def _bending_gram(rigidity, nu):
    # Gram matrix of the bending form on _SYM_BASIS; eigenvalues are
    # B(1-nu) twice and B(1+nu)
    b = np.asarray(rigidity, dtype=float)
    nu = np.broadcast_to(np.asarray(nu, dtype=float), b.shape)
    g = np.zeros(b.shape + (3, 3))
    g[..., 0, 0] = b
    g[..., 1, 1] = b
    g[..., 0, 1] = b * nu
    g[..., 1, 0] = b * nu
    g[..., 2, 2] = b * (1.0 - nu)
    return g


def ellipticity_constants(mat):
    """Derived shear/bending spectral window, verified against the fields.

    The window is sigma0 = alpha0, sigma1 = alpha1, xi0 = min(2 alpha0,
    gamma0), xi1 = 2 alpha1; the shear tensor must sit in h*[sigma0, sigma1]
    and the bending form spectrum in (h^3/12)*[xi0, xi1] at every element.
    """
    ec = EllipticityConstants(
        sigma0=mat.alpha0,
        sigma1=mat.alpha1,
        xi0=min(2.0 * mat.alpha0, mat.gamma0),
        xi1=2.0 * mat.alpha1,
    )
    t = derive_plate_tensors(mat)
    mu = np.atleast_1d(np.asarray(mat.mu, dtype=float))
    slack = _REL * mat.h * ec.sigma1
    if np.any(mat.h * mu < mat.h * ec.sigma0 - slack) or \
       np.any(mat.h * mu > mat.h * ec.sigma1 + slack):
        raise ValueError(f"shear sandwich fails at element {_worst(mu)}")
    gram = _bending_gram(np.atleast_1d(np.asarray(t.rigidity, dtype=float)),
                         np.asarray(t.nu, dtype=float))
    eigs = np.linalg.eigvalsh(gram)
    lo = mat.h ** 3 / 12.0 * ec.xi0
    hi = mat.h ** 3 / 12.0 * ec.xi1
    slack = _REL * hi
    if np.any(eigs[..., 0] < lo - slack):
        raise ValueError(
            f"bending sandwich fails from below at element {_worst(eigs[..., 0])}")
    if np.any(eigs[..., -1] > hi + slack):
        raise ValueError(
            f"bending sandwich fails from above at element {_worst(eigs[..., -1], reverse=True)}")
    return ec


@dataclass(frozen=True)
class InclusionMaterial:
    """Tensor override on the flagged region.

    Either a scalar contrast kappa (override = kappa * background for both
    tensors) or explicit tables: stilde as (2, 2) or (n_elements, 2, 2)
    shear tensors, ptilde as (3, 3) or (n_elements, 3, 3) bending matrices
    in the (A11, A22, 2*A12) convention. Rows may be NaN for elements the
    override never touches.
    """

    kappa: float | None = None
    stilde: np.ndarray | None = None
    ptilde: np.ndarray | None = None

    def __post_init__(self):
        if self.kappa is not None:
            if self.stilde is not None or self.ptilde is not None:
                raise ValueError("give either kappa or explicit tensor tables, not both")
            if not self.kappa > 0:
                raise ValueError("kappa must be positive")
            if self.kappa == 1.0:
                raise ValueError("kappa = 1 gives no contrast")
            return
        if self.stilde is None or self.ptilde is None:
            raise ValueError("explicit override needs both stilde and ptilde")
        st = np.asarray(self.stilde, dtype=float)
        pt = np.asarray(self.ptilde, dtype=float)
        if st.shape[-2:] != (2, 2) or pt.shape[-2:] != (3, 3):
            raise ValueError("stilde must be (..,2,2) and ptilde (..,3,3)")
        ok = ~np.isnan(st).any(axis=(-2, -1))
        if np.any(np.abs(st - np.swapaxes(st, -1, -2))[ok] > _REL * (1 + np.abs(st[ok]).max(initial=0))):
            raise ValueError("stilde must be symmetric")
        ok = ~np.isnan(pt).any(axis=(-2, -1))
        if np.any(np.abs(pt - np.swapaxes(pt, -1, -2))[ok] > _REL * (1 + np.abs(pt[ok]).max(initial=0))):
            raise ValueError("ptilde must be symmetric (major symmetry)")
        st, pt = st.copy(), pt.copy()
        st.setflags(write=False)
        pt.setflags(write=False)
        object.__setattr__(self, "stilde", st)
        object.__setattr__(self, "ptilde", pt)

    @property
    def scalar(self):
        return self.kappa is not None


@dataclass(frozen=True)
class JumpBounds:
    """Two-sided spectral contrast between override and background.

    stiff: (1 + eta) C <= C~ <= delta C with delta > 1;
    soft:  delta C <= C~ <= (1 - eta) C with 0 < delta < 1.
    """

    eta: float
    delta: float
    sign: str

    def __post_init__(self):
        if self.sign not in ("stiff", "soft"):
            raise ValueError("sign must be 'stiff' or 'soft'")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.sign == "stiff":
            if not self.delta > 1.0:
                raise ValueError("stiff contrast needs delta > 1")
            if self.eta > self.delta - 1.0 + _REL:
                raise ValueError("stiff bounds need eta <= delta - 1")
        else:
            if not 0.0 < self.delta < 1.0:
                raise ValueError("soft contrast needs delta in (0, 1)")
            if self.eta > 1.0 - self.delta + _REL:
                raise ValueError("soft bounds need eta <= 1 - delta")


def _override_spectrum(mat, incl):
    # generalized eigenvalues of (override, background), elementwise, for
    # both the shear pair and the bending pair
    t = derive_plate_tensors(mat)
    st = np.asarray(incl.stilde, dtype=float)
    pt = np.asarray(incl.ptilde, dtype=float)
    if st.ndim == 2:
        st = st[None]
    if pt.ndim == 2:
        pt = pt[None]
    ne = max(len(st), len(pt))
    smat = shear_matrix(t, ne)
    bmat = bending_voigt(t, ne)
    vals, elems = [], []
    for e in range(ne):
        se = st[min(e, len(st) - 1)]
        pe = pt[min(e, len(pt) - 1)]
        if np.isnan(se).any() or np.isnan(pe).any():
            continue
        w1 = scipy.linalg.eigh(se, smat[e], eigvals_only=True)
        w2 = scipy.linalg.eigh(pe, bmat[e], eigvals_only=True)
        vals.append(np.concatenate([w1, w2]))
        elems.append(e)
    if not vals:
        raise ValueError("override tables contain no usable rows")
    return np.array(vals), np.array(elems)


def jump_bounds(mat, incl):
    """Tightest (eta, delta) pair comparing override against background.

    Scalar contrast maps directly: kappa > 1 gives (kappa - 1, kappa) stiff,
    kappa < 1 gives (1 - kappa, kappa) soft. Explicit tables go through the
    elementwise generalized eigenvalues of both tensor pairs; if the global
    spectrum straddles 1 the contrast is indefinite and no regime applies.
    """
    if incl.scalar:
        k = incl.kappa
        if k > 1.0:
            return JumpBounds(k - 1.0, k, "stiff")
        return JumpBounds(1.0 - k, k, "soft")
    vals, elems = _override_spectrum(mat, incl)
    lo = float(vals.min())
    hi = float(vals.max())
    if lo > 1.0:
        return JumpBounds(lo - 1.0, hi, "stiff")
    if hi < 1.0:
        if lo <= 0.0:
            e = elems[_worst(vals.min(axis=1))]
            raise ValueError(f"override is not positive definite at element {e}")
        return JumpBounds(1.0 - hi, lo, "soft")
    e_lo = elems[_worst(vals.min(axis=1))]
    e_hi = elems[_worst(vals.max(axis=1), reverse=True)]
    raise ValueError(
        "indefinite contrast: spectrum straddles 1 "
        f"(min at element {e_lo}, max at element {e_hi})")


def validate_on_mesh(mat, mesh, rtol=1e-9):
    """Check per-element fields against the mesh.

    Field lengths must match the element count, and values on elements that
    share an edge may differ by at most alpha1 * centroid distance / rho0,
    the discrete stand-in for a Lipschitz bound with budget alpha1.
    """
    if mat.uniform:
        return
    ne = mesh.n_elements
    for name in ("lam", "mu"):
        field = getattr(mat, name)
        if np.ndim(field) and len(field) != ne:
            raise ValueError(f"{name} has {len(field)} entries for {ne} elements")
    rho0 = mesh.domain.apriori.rho0
    pairs = _shared_edge_pairs(mesh.elements)
    cent = mesh.element_centroids
    gap = np.linalg.norm(cent[pairs[:, 0]] - cent[pairs[:, 1]], axis=1)
    budget = mat.alpha1 * gap / rho0 * (1.0 + rtol) + _REL * mat.alpha1
    for name in ("lam", "mu"):
        field = np.broadcast_to(np.asarray(getattr(mat, name), dtype=float), (ne,))
        diff = np.abs(field[pairs[:, 0]] - field[pairs[:, 1]])
        bad = diff > budget
        if np.any(bad):
            i = int(np.argmax(diff - budget))
            raise ValueError(
                f"{name} jumps by {diff[i]:.3g} between elements "
                f"{pairs[i, 0]} and {pairs[i, 1]}, over the regularity budget "
                f"{budget[i]:.3g}")


def _shared_edge_pairs(elements):
    owner = {}
    pairs = []
    for e, quad in enumerate(elements):
        for k in range(4):
            a, b = int(quad[k]), int(quad[(k + 1) % 4])
            key = (min(a, b), max(a, b))
            if key in owner:
                pairs.append((owner[key], e))
            else:
                owner[key] = e
    if not pairs:
        return np.zeros((0, 2), dtype=int)
    return np.array(pairs, dtype=int)


# ---------------------------------------------------------------------------
# external interfaces

_SHEAR_COLS = ["element_id", "s11", "s12", "s22"]
_BEND_COLS = ["element_id", "p1111", "p1122", "p1112", "p2222", "p2212", "p1212"]


def write_shear_table(path, element_ids, stilde):
    st = np.asarray(stilde, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_SHEAR_COLS)
        for i, e in enumerate(element_ids):
            w.writerow([int(e), repr(float(st[i, 0, 0])),
                        repr(float(st[i, 0, 1])), repr(float(st[i, 1, 1]))])


def write_bending_table(path, element_ids, ptilde):
    pt = np.asarray(ptilde, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(_BEND_COLS)
        for i, e in enumerate(element_ids):
            m = pt[i]
            w.writerow([int(e)] + [repr(float(v)) for v in
                                   (m[0, 0], m[0, 1], m[0, 2], m[1, 1], m[1, 2], m[2, 2])])


def _read_table(path, cols):
    ids, rows = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        for raw in reader:
            if not raw or raw[0].startswith("#"):
                continue
            if raw == cols:
                continue
            ids.append(int(raw[0]))
            rows.append([float(v) for v in raw[1:]])
    if not ids:
        raise ValueError(f"no rows in {path}")
    return np.array(ids, dtype=int), np.array(rows, dtype=float)


def inclusion_from_tables(shear_path, bending_path, n_elements):
    """Build an explicit override from CSV tables keyed by element id.

    Unlisted elements get NaN rows; the assembly refuses to use those, so
    the tables must cover every flagged element.
    """
    sid, svals = _read_table(shear_path, _SHEAR_COLS)
    bid, bvals = _read_table(bending_path, _BEND_COLS)
    if svals.shape[1] != 3 or bvals.shape[1] != 6:
        raise ValueError("unexpected column count in tensor tables")
    st = np.full((n_elements, 2, 2), np.nan)
    st[sid, 0, 0] = svals[:, 0]
    st[sid, 0, 1] = svals[:, 1]
    st[sid, 1, 0] = svals[:, 1]
    st[sid, 1, 1] = svals[:, 2]
    pt = np.full((n_elements, 3, 3), np.nan)
    p1111, p1122, p1112, p2222, p2212, p1212 = bvals.T
    pt[bid, 0, 0] = p1111
    pt[bid, 0, 1] = pt[bid, 1, 0] = p1122
    pt[bid, 0, 2] = pt[bid, 2, 0] = p1112
    pt[bid, 1, 1] = p2222
    pt[bid, 1, 2] = pt[bid, 2, 1] = p2212
    pt[bid, 2, 2] = p1212
    return InclusionMaterial(stilde=st, ptilde=pt)


def material_from_config(cfg):
    """IsotropicMaterial from a flat key-value mapping (strings or numbers)."""
    def get(key, default=None):
        if key in cfg:
            return float(cfg[key])
        if default is None:
            raise ValueError(f"material config is missing '{key}'")
        return default

    return IsotropicMaterial(
        lam=get("lambda"),
        mu=get("mu"),
        h=get("h"),
        alpha0=get("alpha0", 1.0),
        gamma0=get("gamma0", 5.0),
        alpha1=get("alpha1", 2.0),
    )
