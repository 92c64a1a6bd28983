"""Spin operators, Liouville-space superoperators, second-rank Wigner
matrices and the irreducible spherical decomposition of spin Hamiltonians.

Conventions
-----------
* Density matrices are vectorised row-major: ``vec(rho) = rho.reshape(-1)``,
  so ``vec(A rho B) = kron(A, B.T) @ vec(rho)`` and the commutation
  superoperator is ``kron(H, 1) - kron(1, H.T)``.
* Rotations are active, z-y-z Euler angles ``R = Rz(alpha) Ry(beta) Rz(gamma)``.
  Wigner matrices follow Varshalovich: ``D[m, m'] = <m| exp(-i alpha Jz)
  exp(-i beta Jy) exp(-i gamma Jz) |m'>``, rows and columns ordered
  ``m = 2, 1, 0, -1, -2``.
* A Cartesian interaction tensor ``A`` rotated to ``R A R^T`` has rank-2
  spherical components transforming as ``A'_m = sum_m' D[m, m'] A_m'``; the
  Hamiltonian at orientation ``R`` is then ``h0 + sum_km D[k, m] q[k, m]``.
* Every Hamiltonian quantity is in angular frequency units (rad/s).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from itertools import product

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from . import constants as C
from .sparse import csparse, identity, kron

RANKS = (2, 1, 0, -1, -2)


# --------------------------------------------------------------------------
# angular momentum

@lru_cache(maxsize=None)
def _spin_matrices(mult: int):
    s = (mult - 1) / 2
    m = s - np.arange(mult)
    sp_ = np.zeros((mult, mult))
    for i in range(1, mult):
        sp_[i - 1, i] = np.sqrt(s * (s + 1) - m[i] * (m[i] + 1))
    sz = np.diag(m)
    return sz, sp_


def spin_operators(multiplicity: int) -> dict:
    """Angular momentum matrices for a spin of the given multiplicity.

    Returns a dict with keys ``"x", "y", "z", "+", "-"`` holding sparse
    matrices in the ``|s>, |s-1>, ..., |-s>`` basis.
    """
    if int(multiplicity) != multiplicity or multiplicity < 2:
        raise ValueError(f"multiplicity must be an integer >= 2, got {multiplicity}")
    sz, splus = _spin_matrices(int(multiplicity))
    sminus = splus.T
    return {
        "x": csparse((splus + sminus) / 2),
        "y": csparse((splus - sminus) / 2j),
        "z": csparse(sz),
        "+": csparse(splus),
        "-": csparse(sminus),
    }


def comm_superop(h) -> sp.csr_matrix:
    """Commutation superoperator ``rho -> h rho - rho h`` (row-major vec)."""
    h = csparse(h)
    if h.shape[0] != h.shape[1]:
        raise ValueError(f"commutation superoperator needs a square matrix, got {h.shape}")
    one = identity(h.shape[0])
    return csparse(kron(h, one) - kron(one, h.T))


def left_right_superop(a, b) -> sp.csr_matrix:
    """Superoperator of ``rho -> a rho b``."""
    return kron(csparse(a), csparse(b).T)


def vec(rho) -> np.ndarray:
    if sp.issparse(rho):
        rho = rho.toarray()
    return np.asarray(rho, dtype=complex).reshape(-1)


def unvec(v) -> np.ndarray:
    v = np.asarray(v)
    n = int(round(np.sqrt(v.size)))
    if n * n != v.size:
        raise ValueError(f"vector of length {v.size} is not a vectorised square matrix")
    return v.reshape(n, n)


# --------------------------------------------------------------------------
# rotations

@dataclass(frozen=True)
class Rotation:
    """An active rotation given by z-y-z Euler angles or by angle and axis."""

    euler: tuple | None = None
    axis: tuple | None = None
    angle: float = 0.0

    def __post_init__(self):
        if (self.euler is None) == (self.axis is None):
            raise ValueError("give either Euler angles or an axis with an angle")
        if self.axis is not None:
            n = np.asarray(self.axis, dtype=float)
            norm = np.linalg.norm(n)
            if n.shape != (3,) or norm == 0:
                raise ValueError(f"rotation axis must be a non-zero 3-vector, got {self.axis}")
            object.__setattr__(self, "axis", tuple(n / norm))
        else:
            e = tuple(float(x) for x in self.euler)
            if len(e) != 3:
                raise ValueError("Euler angles need three values")
            object.__setattr__(self, "euler", e)

    @classmethod
    def identity(cls):
        return cls(euler=(0.0, 0.0, 0.0))

    @classmethod
    def about_z(cls, phi):
        return cls(euler=(float(phi), 0.0, 0.0))

    @classmethod
    def z_to(cls, direction):
        """Rotation taking the z axis onto ``direction``."""
        n = np.asarray(direction, dtype=float)
        n = n / np.linalg.norm(n)
        beta = np.arctan2(np.hypot(n[0], n[1]), n[2])
        alpha = np.arctan2(n[1], n[0]) if np.hypot(n[0], n[1]) > 1e-15 else 0.0
        return cls(euler=(alpha, beta, 0.0))

    @classmethod
    def from_matrix(cls, r):
        return cls(euler=euler_from_matrix(r))

    def matrix(self) -> np.ndarray:
        if self.euler is not None:
            a, b, g = self.euler
            return _rz(a) @ _ry(b) @ _rz(g)
        n = np.asarray(self.axis)
        k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
        return np.eye(3) + np.sin(self.angle) * k + (1 - np.cos(self.angle)) * (k @ k)

    def inverse(self):
        return Rotation.from_matrix(self.matrix().T)

    def then(self, other):
        """Composite rotation: ``self`` applied first, ``other`` second."""
        return Rotation.from_matrix(other.matrix() @ self.matrix())


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _ry(b):
    c, s = np.cos(b), np.sin(b)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def euler_from_matrix(r) -> tuple:
    r = np.asarray(r, dtype=float)
    # atan2 keeps full precision near beta = 0 and pi, where arccos does not
    sb = np.hypot(r[0, 2], r[1, 2])
    beta = np.arctan2(sb, r[2, 2])
    if sb > 1e-12:
        alpha = np.arctan2(r[1, 2], r[0, 2])
        gamma = np.arctan2(r[2, 1], -r[2, 0])
    elif r[2, 2] > 0:
        alpha, gamma = np.arctan2(r[1, 0], r[0, 0]), 0.0
    else:
        alpha, gamma = np.arctan2(-r[1, 0], -r[0, 0]), 0.0
    return (float(alpha), float(beta), float(gamma))


def _small_d2(beta: float) -> np.ndarray:
    c, s = np.cos(beta), np.sin(beta)
    d = np.empty((5, 5))
    # rows/cols m = 2, 1, 0, -1, -2
    d22 = ((1 + c) / 2) ** 2
    d21 = -(1 + c) * s / 2
    d20 = np.sqrt(3 / 8) * s * s
    d2m1 = -(1 - c) * s / 2
    d2m2 = ((1 - c) / 2) ** 2
    d11 = (1 + c) * (2 * c - 1) / 2
    d10 = -np.sqrt(3 / 2) * s * c
    d1m1 = (1 - c) * (2 * c + 1) / 2
    d00 = (3 * c * c - 1) / 2
    top = {(2, 2): d22, (2, 1): d21, (2, 0): d20, (2, -1): d2m1, (2, -2): d2m2,
           (1, 1): d11, (1, 0): d10, (1, -1): d1m1, (0, 0): d00}
    for (m, mp), val in list(top.items()):
        top[(mp, m)] = (-1) ** (m - mp) * val
        top[(-m, -mp)] = (-1) ** (m - mp) * val
        top[(-mp, -m)] = val
    for i, m in enumerate(RANKS):
        for j, mp in enumerate(RANKS):
            d[i, j] = top[(m, mp)]
    return d


@lru_cache(maxsize=None)
def _rank2_generators():
    ops = spin_operators(5)
    return ops["x"].toarray(), ops["y"].toarray(), ops["z"].toarray()


def wigner_d2(rot: Rotation) -> np.ndarray:
    """Second-rank Wigner matrix of a rotation (rows/cols ``m = 2..-2``)."""
    if rot.euler is not None:
        a, b, g = rot.euler
        m = np.array(RANKS, dtype=float)
        return np.exp(-1j * m * a)[:, None] * _small_d2(b) * np.exp(-1j * m * g)[None, :]
    jx, jy, jz = _rank2_generators()
    n = rot.axis
    return scipy.linalg.expm(-1j * rot.angle * (n[0] * jx + n[1] * jy + n[2] * jz))


# --------------------------------------------------------------------------
# Cartesian <-> spherical rank-2 tensors

_E = {
    1: -np.array([1.0, 1j, 0.0]) / np.sqrt(2),
    0: np.array([0.0, 0.0, 1.0], dtype=complex),
    -1: np.array([1.0, -1j, 0.0]) / np.sqrt(2),
}
_CG_11_2 = {
    (1, 1, 2): 1.0,
    (1, 0, 1): 1 / np.sqrt(2), (0, 1, 1): 1 / np.sqrt(2),
    (1, -1, 0): 1 / np.sqrt(6), (-1, 1, 0): 1 / np.sqrt(6), (0, 0, 0): np.sqrt(2 / 3),
    (0, -1, -1): 1 / np.sqrt(2), (-1, 0, -1): 1 / np.sqrt(2),
    (-1, -1, -2): 1.0,
}


@lru_cache(maxsize=None)
def rank2_basis() -> np.ndarray:
    """Five orthonormal 3x3 basis tensors ``B_m`` (``m = 2..-2``) spanning the
    symmetric traceless tensors, with ``A = sum_m A_m B_m``."""
    basis = np.zeros((5, 3, 3), dtype=complex)
    for (q1, q2, m), c in _CG_11_2.items():
        basis[RANKS.index(m)] += c * np.outer(_E[q1], _E[q2])
    return basis


def rank2_components(a) -> np.ndarray:
    """Rank-2 spherical components ``A_m`` (``m = 2..-2``) of a 3x3 tensor."""
    a = np.asarray(a, dtype=float)
    return np.einsum("mij,ij->m", rank2_basis().conj(), a)


def symmetric_traceless(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    s = (a + a.T) / 2
    return s - np.eye(3) * np.trace(s) / 3


# --------------------------------------------------------------------------
# spin systems

@dataclass(frozen=True)
class Spin:
    label: str
    multiplicity: int
    gamma: float

    def __post_init__(self):
        if self.multiplicity < 2:
            raise ValueError(f"spin {self.label}: multiplicity must be >= 2")


def spin(label: str) -> Spin:
    """Spin of a named isotope (``"1H"``, ``"14N"``, ``"E"`` for an electron, ...)."""
    try:
        mult, gamma = C.ISOTOPES[label]
    except KeyError:
        raise ValueError(f"unknown isotope {label!r}") from None
    return Spin(label, mult, gamma)


@dataclass
class SpinSystem:
    """Spins in a magnet, with their interactions.

    ``zeeman[k]`` is the Zeeman tensor ``Z`` of spin ``k`` in rad/s/T
    (``H = S.Z.B``); ``frame[k]`` is the rotating-frame reference frequency
    subtracted from spin ``k`` (``None`` keeps it in the laboratory frame).
    ``couplings[(i, j)]`` are 3x3 tensors in rad/s (``H = S_i.A.S_j``),
    ``j_couplings[(i, j)]`` scalar couplings in Hz, and
    ``quadrupolar[k]`` traceless symmetric tensors in rad/s (``H = S.Q.S``).
    Antisymmetric (rank-1) tensor parts are discarded.
    """

    spins: list
    field: float = 0.0
    zeeman: dict = dc_field(default_factory=dict)
    frame: dict = dc_field(default_factory=dict)
    couplings: dict = dc_field(default_factory=dict)
    j_couplings: dict = dc_field(default_factory=dict)
    quadrupolar: dict = dc_field(default_factory=dict)
    secular: bool = True

    def __post_init__(self):
        self.spins = [spin(s) if isinstance(s, str) else s for s in self.spins]
        for k, s in enumerate(self.spins):
            self.zeeman.setdefault(k, -s.gamma * np.eye(3))
            self.frame.setdefault(k, -s.gamma * self.field)
        self.validate()

    # -- construction helpers ------------------------------------------------

    @property
    def dims(self) -> tuple:
        return tuple(s.multiplicity for s in self.spins)

    @property
    def hilbert_dim(self) -> int:
        return int(np.prod(self.dims))

    @property
    def liouville_dim(self) -> int:
        return self.hilbert_dim ** 2

    def set_shift(self, k, iso_ppm=0.0, aniso_ppm=0.0, eta=0.0, euler=(0.0, 0.0, 0.0)):
        """Chemical shift tensor of a nucleus, in ppm.

        ``aniso_ppm`` is the reduced anisotropy ``delta_zz - delta_iso``.
        """
        g = self.spins[k].gamma
        principal = np.array([-(1 + eta) / 2, -(1 - eta) / 2, 1.0]) * aniso_ppm + iso_ppm
        delta = _orient(np.diag(principal), euler)
        self.zeeman[k] = -g * (np.eye(3) + 1e-6 * delta)

    def set_offset(self, k, omega, aniso=0.0, eta=0.0, euler=(0.0, 0.0, 0.0)):
        """Rotating-frame offset tensor of spin ``k`` in rad/s: isotropic
        offset ``omega`` plus reduced anisotropy ``aniso`` (``zz - iso``)
        with asymmetry ``eta`` in a frame given by z-y-z Euler angles."""
        if not self.field or self.frame.get(k) is None:
            raise ValueError("offsets need a non-zero field and a rotating frame for the spin")
        principal = np.array([-(1 + eta) / 2, -(1 - eta) / 2, 1.0]) * aniso
        tensor = omega * np.eye(3) + _orient(np.diag(principal), euler)
        self.zeeman[k] = (self.frame[k] * np.eye(3) + tensor) / self.field

    def set_g(self, k, principal, euler=(0.0, 0.0, 0.0)):
        """Electron g-tensor from principal values and z-y-z Euler angles."""
        g = _orient(np.diag(np.asarray(principal, dtype=float)), euler)
        self.zeeman[k] = g * C.BOHR_MAGNETON / C.HBAR

    def set_quadrupole(self, k, cq_hz, eta=0.0, euler=(0.0, 0.0, 0.0)):
        mult = self.spins[k].multiplicity
        if mult < 3:
            raise ValueError(f"spin {k} ({self.spins[k].label}) cannot carry a quadrupolar tensor")
        s = (mult - 1) / 2
        scale = 2 * np.pi * cq_hz / (2 * s * (2 * s - 1))
        q = np.diag([(-1 + eta) / 2, (-1 - eta) / 2, 1.0]) * scale
        self.quadrupolar[k] = _orient(q, euler)

    def set_j(self, i, j, hz):
        self.j_couplings[_pair(i, j)] = float(hz)

    def set_dipolar(self, i, j, distance_m, direction=(0.0, 0.0, 1.0)):
        """Point-dipole coupling between spins ``i`` and ``j``."""
        n = np.asarray(direction, dtype=float)
        n = n / np.linalg.norm(n)
        d = dipolar_constant(self.spins[i].gamma, self.spins[j].gamma, distance_m)
        self.couplings[_pair(i, j)] = d * (np.eye(3) - 3 * np.outer(n, n))

    def validate(self):
        n = len(self.spins)
        if n == 0:
            raise ValueError("spin system has no spins")
        for k in self.quadrupolar:
            if not 0 <= k < n:
                raise ValueError(f"quadrupolar entry for missing spin {k}")
            if self.spins[k].multiplicity < 3:
                raise ValueError(
                    f"spin {k} ({self.spins[k].label}) is spin-1/2 and cannot carry a quadrupolar tensor"
                )
        for (i, j) in list(self.couplings) + list(self.j_couplings):
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"coupling indexes invalid spin pair ({i}, {j})")


def _pair(i, j):
    return (min(i, j), max(i, j))


def _orient(principal_tensor, euler):
    r = Rotation(euler=tuple(euler)).matrix()
    return r @ principal_tensor @ r.T


def dipolar_constant(gamma1, gamma2, distance_m) -> float:
    """Point-dipole coupling constant in rad/s."""
    return C.MU0 / (4 * np.pi) * gamma1 * gamma2 * C.HBAR / distance_m ** 3


# --------------------------------------------------------------------------
# Hilbert-space building blocks

def _embed(ops_list, dims):
    out = sp.identity(1, dtype=complex, format="csr")
    for op, d in zip(ops_list, dims):
        out = kron(out, identity(d) if op is None else op)
    return out


def spin_operator(sys_or_dims, k, which) -> sp.csr_matrix:
    """Hilbert-space operator ``S_which`` of spin ``k`` in the full system."""
    dims = sys_or_dims.dims if isinstance(sys_or_dims, SpinSystem) else tuple(sys_or_dims)
    slots = [None] * len(dims)
    slots[k] = spin_operators(dims[k])[which]
    return _embed(slots, dims)


def _secular_mask(sys: SpinSystem) -> np.ndarray | None:
    """Boolean mask of matrix elements kept by the secular approximation.

    Spins in a rotating frame are grouped by isotope label; elements that
    change the total magnetic quantum number of any such group are dropped.
    """
    groups = {}
    for k, s in enumerate(sys.spins):
        if sys.frame.get(k) is not None:
            groups.setdefault(s.label, []).append(k)
    if not groups or not sys.secular:
        return None
    dims = sys.dims
    mvals = [((d - 1) / 2 - np.arange(d)) for d in dims]
    states = list(product(*[range(d) for d in dims]))
    keys = np.array([[sum(mvals[k][st[k]] for k in members) for members in groups.values()]
                     for st in states])
    return np.all(keys[:, None, :] == keys[None, :, :], axis=-1)


def _truncate(op, mask):
    if mask is None:
        return csparse(op)
    dense = op.toarray() if sp.issparse(op) else np.asarray(op)
    return csparse(np.where(mask, dense, 0.0))


@dataclass
class _Terms:
    """Hilbert-space isotropic operator and rank-2 (coefficients, operators)."""

    iso: np.ndarray
    aniso: list = dc_field(default_factory=list)  # (A_m[5], T_m[5 x (n,n)])


def _interaction_terms(sys: SpinSystem) -> _Terms:
    n = sys.hilbert_dim
    dims = sys.dims
    S = [[spin_operator(dims, k, w).toarray() for w in "xyz"] for k in range(len(dims))]
    basis = rank2_basis()
    terms = _Terms(iso=np.zeros((n, n), dtype=complex))
    bz = np.array([0.0, 0.0, sys.field])

    for k, z in sys.zeeman.items():
        z = np.asarray(z, dtype=float)
        iso = np.trace(z) / 3
        terms.iso += iso * sys.field * S[k][2]
        if sys.frame.get(k) is not None:
            terms.iso -= sys.frame[k] * S[k][2]
        a2 = rank2_components(symmetric_traceless(z))
        if np.any(np.abs(a2) > 0):
            ops = [sum(S[k][i] * (basis[m] @ bz)[i] for i in range(3)) for m in range(5)]
            terms.aniso.append((a2, ops))

    def bilinear(si, sj, tensor):
        iso = np.trace(tensor) / 3
        terms.iso += iso * sum(si[i] @ sj[i] for i in range(3))
        a2 = rank2_components(symmetric_traceless(tensor))
        if np.any(np.abs(a2) > 0):
            ops = [sum(basis[m][i, j] * (si[i] @ sj[j]) for i in range(3) for j in range(3))
                   for m in range(5)]
            terms.aniso.append((a2, ops))

    for (i, j), tensor in sys.couplings.items():
        bilinear(S[i], S[j], np.asarray(tensor, dtype=float))
    for (i, j), hz in sys.j_couplings.items():
        terms.iso += 2 * np.pi * hz * sum(S[i][a] @ S[j][a] for a in range(3))
    for k, q in sys.quadrupolar.items():
        bilinear(S[k], S[k], np.asarray(q, dtype=float))
    return terms


def hamiltonian(sys: SpinSystem, rotation: Rotation | None = None) -> sp.csr_matrix:
    """Hilbert-space Hamiltonian at an orientation, built from rotated
    Cartesian tensors (independent of the spherical decomposition)."""
    r = np.eye(3) if rotation is None else rotation.matrix()
    rot_sys = SpinSystem(
        spins=list(sys.spins), field=sys.field, secular=sys.secular,
        frame=dict(sys.frame),
        zeeman={k: _rot_sym(z, r) for k, z in sys.zeeman.items()},
        couplings={p: _rot_sym(a, r) for p, a in sys.couplings.items()},
        j_couplings=dict(sys.j_couplings),
        quadrupolar={k: _rot_sym(q, r) for k, q in sys.quadrupolar.items()},
    )
    h = _interaction_terms(rot_sys)
    total = h.iso.copy()
    for a2, ops in h.aniso:
        total += sum(a2[m] * ops[m] for m in range(5))
    return _truncate(total, _secular_mask(sys))


def _rot_sym(a, r):
    a = np.asarray(a, dtype=float)
    s = (a + a.T) / 2
    return r @ s @ r.T


@dataclass
class IrreducibleComponents:
    """Isotropic superoperator ``h0`` and the 25 rank-2 components ``q``.

    ``q[i][j]`` holds the component ``Q_km`` with ``k = RANKS[i]``,
    ``m = RANKS[j]``.
    """

    h0: sp.csr_matrix
    q: list

    def __post_init__(self):
        n = self.h0.shape
        if len(self.q) != 5 or any(len(row) != 5 for row in self.q):
            raise ValueError("q must be a 5x5 array of superoperators")
        for row in self.q:
            for m in row:
                if m.shape != n:
                    raise ValueError("dimension mismatch between irreducible components")
        self._pattern = None

    @property
    def dim(self) -> int:
        return self.h0.shape[0]

    def component(self, k: int, m: int) -> sp.csr_matrix:
        return self.q[RANKS.index(k)][RANKS.index(m)]

    def is_isotropic(self) -> bool:
        return all(m.nnz == 0 for row in self.q for m in row)

    def pattern(self):
        """Union sparsity pattern ``(rows, cols, h0_values, q_values[25, nnz])``."""
        if self._pattern is None:
            mats = [self.h0] + [m for row in self.q for m in row]
            union = sum((abs(m) for m in mats), csparse(sp.csr_matrix(self.h0.shape)))
            union = union.tocoo()
            rows, cols = union.row, union.col
            if rows.size == 0:
                vals = np.zeros((len(mats), 0), dtype=complex)
            else:
                vals = np.array([np.asarray(m[rows, cols]).ravel() for m in mats])
            self._pattern = (rows, cols, vals[0], vals[1:])
        return self._pattern


@dataclass
class HilbertComponents:
    """Hilbert-space counterpart of ``IrreducibleComponents``: ``h0`` and
    ``q`` (shape ``(5, 5, n, n)``) with ``H = h0 + sum_km D[k, m] q[k, m]``."""

    h0: np.ndarray
    q: np.ndarray

    def hamiltonian(self, d) -> np.ndarray:
        """Hamiltonian for one Wigner matrix ``(5, 5)`` or a stack ``(B, 5, 5)``."""
        d = np.asarray(d)
        return self.h0 + np.tensordot(d, self.q, axes=([-2, -1], [0, 1]))


def hilbert_components(sys: SpinSystem) -> HilbertComponents:
    """Secular-truncated isotropic Hamiltonian and rank-2 components."""
    sys.validate()
    mask = _secular_mask(sys)
    terms = _interaction_terms(sys)
    n = sys.hilbert_dim
    q = np.zeros((5, 5, n, n), dtype=complex)
    for a2, ops in terms.aniso:
        for i in range(5):
            for j in range(5):
                if a2[j] != 0:
                    q[i, j] += a2[j] * ops[i]
    if mask is not None:
        q = np.where(mask, q, 0.0)
    h0 = _truncate(terms.iso, mask).toarray()
    return HilbertComponents(h0=h0, q=q)


def build_components(sys: SpinSystem) -> IrreducibleComponents:
    """Decompose the spin Hamiltonian into ``h0`` and 25 ``Q_km``
    commutation superoperators."""
    hc = hilbert_components(sys)
    h0 = comm_superop(hc.h0)
    n = h0.shape[0]
    q = [[comm_superop(hc.q[i, j]) if np.any(hc.q[i, j])
          else csparse(sp.csr_matrix((n, n))) for j in range(5)] for i in range(5)]
    return IrreducibleComponents(h0=h0, q=q)


def composite_d2(rots) -> np.ndarray:
    """Wigner matrix of a rotation sequence, first element applied first."""
    rots = list(rots)
    if not rots:
        raise ValueError("rotation list is empty")
    d = np.eye(5, dtype=complex)
    for r in rots:
        d = wigner_d2(r) @ d
    return d


def rotate_components(ic: IrreducibleComponents, rots) -> sp.csr_matrix:
    """Superoperator at the orientation reached by applying ``rots`` in the
    listed order (crystal first, laboratory frame last):
    ``h0 + sum_km [D(r_n) ... D(r_1)]_km Q_km``."""
    d = composite_d2(rots)
    return rotate_with_wigner(ic, d)


def rotate_with_wigner(ic: IrreducibleComponents, d) -> sp.csr_matrix:
    rows, cols, h0v, qv = ic.pattern()
    vals = h0v + np.asarray(d).reshape(-1) @ qv
    return csparse((rows, cols, vals), shape=ic.h0.shape)


# --------------------------------------------------------------------------
# relaxation and kinetics

@dataclass
class RelaxKin:
    r: sp.csr_matrix
    k: sp.csr_matrix

    @property
    def total(self) -> sp.csr_matrix:
        return csparse(self.r + self.k)


def relax_kin(sys: SpinSystem, t1=None, t2=None, r=None, k=None) -> RelaxKin:
    """Relaxation and kinetics superoperators.

    Either pass user matrices ``r``/``k`` (validated, passed through), or
    phenomenological per-spin ``t1``/``t2`` times in seconds (scalars or
    sequences; ``None`` or ``inf`` disables a channel). Transverse elements of
    each spin decay at ``1/T2`` and its population deviations from the
    uniform distribution at ``1/T1``.
    """
    n = sys.liouville_dim
    zero = csparse(sp.csr_matrix((n, n)))
    if r is not None:
        r = r if sp.issparse(r) else csparse(r)
        if r.shape != (n, n):
            raise ValueError(f"relaxation superoperator shape {r.shape} does not match ({n}, {n})")
    else:
        r = _phenomenological(sys, t1, t2)
    if k is not None:
        k = k if sp.issparse(k) else csparse(k)
        if k.shape != (n, n):
            raise ValueError(f"kinetics superoperator shape {k.shape} does not match ({n}, {n})")
    else:
        k = zero
    return RelaxKin(r=r, k=k)


def _rates(values, nspins, name):
    if values is None:
        return [0.0] * nspins
    values = np.broadcast_to(np.asarray(values, dtype=float), (nspins,))
    if np.any(values <= 0):
        raise ValueError(f"{name} times must be positive")
    return [0.0 if np.isinf(v) else 1.0 / v for v in values]


def _phenomenological(sys, t1, t2):
    dims = sys.dims
    n = sys.liouville_dim
    out = csparse(sp.csr_matrix((n, n)))
    for kk, (r1, r2) in enumerate(zip(_rates(t1, len(dims), "T1"), _rates(t2, len(dims), "T2"))):
        if r1 == 0 and r2 == 0:
            continue
        d = dims[kk]
        proj = [_embed_single(dims, kk, _unit(d, m, m)) for m in range(d)]
        diag_part = sum(left_right_superop(p, p) for p in proj)
        one = identity(n)
        term = -r2 * (one - diag_part)
        if r1:
            flips = sum(left_right_superop(_embed_single(dims, kk, _unit(d, a, b)),
                                           _embed_single(dims, kk, _unit(d, b, a)))
                        for a in range(d) for b in range(d)) / d
            term = term - r1 * (diag_part - flips)
        out = out + term
    return csparse(out)


def _unit(d, a, b):
    m = np.zeros((d, d))
    m[a, b] = 1.0
    return csparse(m)


def _embed_single(dims, k, op):
    slots = [None] * len(dims)
    slots[k] = op
    return _embed(slots, dims)


def state(sys: SpinSystem, k, which) -> np.ndarray:
    """Vectorised single-spin operator, e.g. ``state(sys, 0, "+")``."""
    return vec(spin_operator(sys, k, which))


def unit_state(sys: SpinSystem) -> np.ndarray:
    return vec(identity(sys.hilbert_dim))
