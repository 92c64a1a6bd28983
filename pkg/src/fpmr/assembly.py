"""Fokker-Planck generator assembly.

A generator ``G`` acts on the joint space ``phase factors x coordinate
factors x spin Liouville space`` (first factor slowest) and evolves states
as ``d rho / dt = G rho``, i.e. ``G = -i F`` with ``F = L + i M``. Each point
of the spatial grid owns a block ``-i L_j`` of the spin Liouvillian; phase
and coordinate derivative terms couple the blocks.

Phase coordinates come in two roles. Rotor phases start uniformly
distributed (this performs gamma-averaging); radiofrequency and microwave
phases start concentrated at ``phi = 0`` so that the pulse has a definite
initial phase.

Phase transport convention: ``exp(omega D t)`` maps ``f(phi)`` to
``f(phi + omega t)``, so the phase seen by a packet decreases as
``phi(t) = phi(0) - omega t``. A pulse at carrier offset ``delta`` (rad/s,
same sign convention as the spin offsets) therefore has phase rate
``omega = -delta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.sparse as sp

from .sparse import csparse, identity, kron_all, zeros
from .spatial import CoordinateGrid, PhaseGrid, motion_generator, phase_diff
from .spin import (
    IrreducibleComponents, RelaxKin, Rotation, SpinSystem, comm_superop,
    RANKS, composite_d2, rotate_with_wigner, spin_operator, wigner_d2,
)

KINDS = ("phase", "coordinate", "spin")
MAGIC_ANGLE = float(np.arccos(1 / np.sqrt(3)))
MAS_AXIS = (1 / np.sqrt(3),) * 3
OVERTONE_ROTOR_AXIS = (np.sqrt(2 / 3), 0.0, np.sqrt(1 / 3))


@dataclass(frozen=True)
class Factor:
    name: str
    dim: int
    kind: str
    role: str = ""  # "rotor" or "rf" for phase factors
    initial: str = "uniform"  # "uniform" or "delta"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"factor kind must be one of {KINDS}, got {self.kind!r}")
        if self.dim < 1:
            raise ValueError(f"factor {self.name!r} has non-positive dimension")
        if self.initial not in ("uniform", "delta"):
            raise ValueError(f"unknown initial distribution {self.initial!r}")


@dataclass(frozen=True)
class FPLayout:
    """Ordered Kronecker factors: phases, then coordinates, then the spin
    Liouville space."""

    factors: tuple

    def __post_init__(self):
        factors = tuple(self.factors)
        object.__setattr__(self, "factors", factors)
        kinds = [f.kind for f in factors]
        if not kinds or kinds[-1] != "spin" or kinds.count("spin") != 1:
            raise ValueError("layout must end with exactly one spin factor")
        order = [KINDS.index(k) for k in kinds]
        if order != sorted(order):
            raise ValueError("phase factors must precede coordinate factors, which precede the spin factor")
        names = [f.name for f in factors]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate factor names in layout: {names}")

    @classmethod
    def spin_only(cls, dim):
        return cls((Factor("spin", dim, "spin"),))

    @property
    def total_dim(self) -> int:
        return int(np.prod([f.dim for f in self.factors]))

    @property
    def spin_dim(self) -> int:
        return self.factors[-1].dim

    @property
    def spatial_dim(self) -> int:
        return self.total_dim // self.spin_dim

    @property
    def spatial_factors(self) -> tuple:
        return self.factors[:-1]

    def index(self, slot) -> int:
        if isinstance(slot, int):
            if not 0 <= slot < len(self.factors):
                raise KeyError(f"slot {slot} out of range")
            return slot
        for i, f in enumerate(self.factors):
            if f.name == slot:
                return i
        raise KeyError(f"unknown layout slot {slot!r}; have {[f.name for f in self.factors]}")

    def factor(self, slot) -> Factor:
        return self.factors[self.index(slot)]


def lift(op, layout: FPLayout, slot) -> sp.csr_matrix:
    """Embed ``op`` into the named slot with identities elsewhere."""
    i = layout.index(slot)
    op = csparse(op)
    d = layout.factors[i].dim
    if op.shape != (d, d):
        raise ValueError(f"operator of shape {op.shape} does not fit slot {layout.factors[i].name!r} of dimension {d}")
    left = int(np.prod([f.dim for f in layout.factors[:i]]))
    right = int(np.prod([f.dim for f in layout.factors[i + 1:]]))
    return kron_all(identity(left), op, identity(right))


@dataclass
class Generator:
    """``G = constant + sum_j c_j(t) G_j`` on a layout.

    ``blocks`` keeps the block-diagonal spin part and ``spatial`` the
    derivative terms, whose sum is ``constant``.
    """

    constant: sp.csr_matrix
    layout: FPLayout
    channels: list = dc_field(default_factory=list)
    blocks: sp.csr_matrix | None = None
    spatial: sp.csr_matrix | None = None

    def __post_init__(self):
        n = self.layout.total_dim
        if self.constant.shape != (n, n):
            raise ValueError(f"generator shape {self.constant.shape} does not match layout dimension {n}")
        for label, m in self.channels:
            if m.shape != (n, n):
                raise ValueError(f"channel {label!r} has shape {m.shape}, expected ({n}, {n})")

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    @property
    def labels(self) -> list:
        return [label for label, _ in self.channels]

    def channel(self, label) -> sp.csr_matrix:
        for name, m in self.channels:
            if name == label:
                return m
        raise KeyError(f"generator has no channel {label!r}; channels are {self.labels}")

    def frozen(self, coefficients: dict) -> sp.csr_matrix:
        """Generator with the channel coefficients held fixed."""
        out = self.constant
        for label, c in coefficients.items():
            m = self.channel(label)
            if c != 0:
                out = out + c * m
        return csparse(out)

    def block(self, j: int) -> sp.csr_matrix:
        """Spin block ``j`` of the block-diagonal part."""
        d = self.layout.spin_dim
        src = self.blocks if self.blocks is not None else self.constant
        return csparse(src[j * d:(j + 1) * d, j * d:(j + 1) * d])


@dataclass
class Waveform:
    """Piecewise-constant channel coefficients: ``slices`` is a list of
    ``(duration, {label: coefficient})``."""

    slices: list

    def __post_init__(self):
        clean = []
        for dur, coeffs in self.slices:
            if not dur > 0:
                raise ValueError(f"waveform slice durations must be positive, got {dur}")
            clean.append((float(dur), dict(coeffs)))
        self.slices = clean

    @property
    def duration(self) -> float:
        return sum(d for d, _ in self.slices)

    @property
    def labels(self) -> set:
        return {k for _, c in self.slices for k in c}

    def refined(self, factor: int = 2):
        """Each slice split into ``factor`` equal pieces."""
        return Waveform([(d / factor, c) for d, c in self.slices for _ in range(factor)])


@dataclass
class FPState:
    vector: np.ndarray
    layout: FPLayout

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=complex).ravel()
        if self.vector.size != self.layout.total_dim:
            raise ValueError(
                f"state of length {self.vector.size} does not match layout dimension {self.layout.total_dim}"
            )

    def blocks(self) -> np.ndarray:
        return self.vector.reshape(self.layout.spatial_dim, self.layout.spin_dim)


# --------------------------------------------------------------------------
# helpers

def _rotation(x) -> Rotation:
    if isinstance(x, Rotation):
        return x
    if x is None:
        return Rotation.identity()
    return Rotation(euler=tuple(x))


def _lab2rot(axis) -> Rotation:
    """Rotor-to-laboratory rotation for a spinning axis (vector or Rotation)."""
    if isinstance(axis, Rotation):
        return axis
    return Rotation.z_to(axis)


def _check_phase_grid(grid: PhaseGrid, allow_single=False):
    if grid.n < 3 and not (allow_single and grid.n == 1):
        raise ValueError(
            f"phase grid of {grid.n} points is too small; use at least 3 and increase until converged"
        )


def _relax(rk: RelaxKin | None, dim: int) -> sp.csr_matrix:
    if rk is None:
        return zeros(dim)
    total = rk.total
    if total.shape != (dim, dim):
        raise ValueError(f"relaxation/kinetics shape {total.shape} does not match spin space ({dim}, {dim})")
    return total


def _block_generator(hamiltonians, rk, layout, spatial, channels=()):
    """``-i blockdiag(H_j) + blockdiag(R + K) + spatial``."""
    d = layout.spin_dim
    rel = _relax(rk, d)
    blocks = [csparse(-1j * h + rel) for h in hamiltonians]
    if len(blocks) != layout.spatial_dim:
        raise ValueError("number of blocks does not match the spatial grid size")
    bd = csparse(sp.block_diag(blocks, format="csr")) if len(blocks) > 1 else blocks[0]
    return Generator(constant=csparse(bd + spatial), layout=layout, channels=list(channels),
                     blocks=bd, spatial=csparse(spatial))


def _control_channels(controls, layout):
    out = []
    for label, op in (controls or {}).items():
        sup = comm_superop(op)
        out.append((label, csparse(-1j * lift(sup, layout, "spin"))))
    return out


def _phase_projectors(grid: PhaseGrid):
    phi = grid.points
    return sp.diags(np.cos(phi)), sp.diags(np.sin(phi))


def rf_superops(sys: SpinSystem, spins) -> tuple:
    """Commutation superoperators of ``sum S_x`` and ``sum S_y`` over ``spins``."""
    sx = sum(spin_operator(sys, k, "x") for k in spins)
    sy = sum(spin_operator(sys, k, "y") for k in spins)
    return comm_superop(sx), comm_superop(sy)


def irradiated_spins(sys: SpinSystem, spins=None):
    """Default RF target: every spin in a rotating frame."""
    if spins is None:
        spins = [k for k in range(len(sys.spins)) if sys.frame.get(k) is not None]
    spins = list(spins)
    if not spins:
        raise ValueError("no spins selected for irradiation")
    return spins


# --------------------------------------------------------------------------
# assemblers

def rotor_d2(crystal, axis, phi) -> np.ndarray:
    """Wigner matrix of ``lab2rot(axis) rotor(phi) crystal``."""
    return composite_d2([_rotation(crystal), Rotation.about_z(phi), _lab2rot(axis)])


def _zphase(phis):
    m = np.array(RANKS, dtype=float)
    return np.exp(-1j * np.multiply.outer(np.asarray(phis, dtype=float), m))


def rotor_d2_stack(crystal, axis, phis) -> np.ndarray:
    """``rotor_d2`` for an array of rotor phases, shape ``(len(phis), 5, 5)``."""
    dl = wigner_d2(_lab2rot(axis))
    dc = wigner_d2(_rotation(crystal))
    return np.einsum("ij,pj,jk->pik", dl, _zphase(phis), dc)


def dor_d2_stack(crystal, n0, n1, phi0s, phi1s) -> np.ndarray:
    """``dor_d2`` for paired arrays of outer and inner rotor phases."""
    d0 = wigner_d2(_lab2rot(n0))
    d1 = wigner_d2(_lab2rot(n1))
    dc = wigner_d2(_rotation(crystal))
    inner = np.einsum("ij,pj,jk->pik", d1, _zphase(phi1s), dc)
    return np.einsum("ij,pj,pjk->pik", d0, _zphase(phi0s), inner)


def assemble_singlerot(ic: IrreducibleComponents, axis=MAS_AXIS, rate: float = 0.0,
                       grid: PhaseGrid | None = None, orientation=None,
                       rk: RelaxKin | None = None, controls: dict | None = None) -> Generator:
    """Magic-angle (or any single-axis) spinning generator.

    ``rate`` is in rad/s; ``controls`` maps channel labels to Hilbert-space
    operators added identically to every block.
    """
    grid = grid or PhaseGrid(16)
    _check_phase_grid(grid)
    layout = FPLayout((Factor("rotor", grid.n, "phase", role="rotor"), Factor("spin", ic.dim, "spin")))
    hs = [rotate_with_wigner(ic, d) for d in rotor_d2_stack(orientation, axis, grid.points)]
    spatial = float(rate) * lift(phase_diff(grid.n), layout, "rotor")
    return _block_generator(hs, rk, layout, spatial, _control_channels(controls, layout))


def dor_d2(crystal, n0, n1, phi0, phi1) -> np.ndarray:
    """Wigner matrix of ``out2lab(n0) rotor(phi0) inn2out(n1) rotor(phi1) crystal``."""
    return composite_d2([_rotation(crystal), Rotation.about_z(phi1), _lab2rot(n1),
                         Rotation.about_z(phi0), _lab2rot(n0)])


def assemble_doublerot(ic: IrreducibleComponents, n0, n1, rate0: float, rate1: float,
                       grid0: PhaseGrid, grid1: PhaseGrid, orientation=None,
                       rk: RelaxKin | None = None) -> Generator:
    """Double rotation generator; the inner rotor phase index varies fastest."""
    _check_phase_grid(grid0)
    _check_phase_grid(grid1, allow_single=True)
    layout = FPLayout((
        Factor("outer", grid0.n, "phase", role="rotor"),
        Factor("inner", grid1.n, "phase", role="rotor"),
        Factor("spin", ic.dim, "spin"),
    ))
    p0, p1 = (x.ravel() for x in np.meshgrid(grid0.points, grid1.points, indexing="ij"))
    hs = [rotate_with_wigner(ic, d) for d in dor_d2_stack(orientation, n0, n1, p0, p1)]
    spatial = (float(rate0) * lift(phase_diff(grid0.n), layout, "outer")
               + float(rate1) * lift(phase_diff(grid1.n), layout, "inner"))
    return _block_generator(hs, rk, layout, spatial)


def assemble_spatiotemporal(ic: IrreducibleComponents, sys: SpinSystem, zgrid: CoordinateGrid,
                            phase_grid: PhaseGrid | None = None, diffusion: float = 0.0,
                            flow=0.0, rk: RelaxKin | None = None, rf_spins=None,
                            orientation=None, stencil: int = 5) -> Generator:
    """Gradients, diffusion, flow and phase-modulated RF on a z grid.

    ``flow`` is a scalar velocity or per-point velocity samples. Channels:
    ``rf_amplitude_x``/``rf_amplitude_y`` (coefficients ``a cos phi0`` and
    ``a sin phi0`` in rad/s), ``rf_frequency`` (phase rate, rad/s; only with
    a phase grid) and ``gradient`` (T/m).
    """
    factors = []
    if phase_grid is not None:
        _check_phase_grid(phase_grid)
        factors.append(Factor("rf", phase_grid.n, "phase", role="rf", initial="delta"))
    factors += [Factor("z", zgrid.n, "coordinate"), Factor("spin", ic.dim, "spin")]
    layout = FPLayout(tuple(factors))

    h = rotate_with_wigner(ic, composite_d2([_rotation(orientation)]))
    h_lift = lift(h, layout, "spin")
    rel = lift(_relax(rk, ic.dim), layout, "spin")
    blocks = csparse(-1j * h_lift + rel)

    spatial = zeros(layout.total_dim)
    if diffusion:
        spatial = spatial + lift(motion_generator(zgrid, "diffusion", diffusion, stencil), layout, "z")
    if np.ndim(flow) == 0:
        if flow:
            spatial = spatial + lift(motion_generator(zgrid, "flow", flow, stencil), layout, "z")
    else:
        spatial = spatial + lift(motion_generator(zgrid, "velocity_field", flow, stencil), layout, "z")
    spatial = csparse(spatial)

    spins = irradiated_spins(sys, rf_spins)
    sx, sy = rf_superops(sys, spins)
    channels = []
    if phase_grid is not None:
        cos_p, sin_p = _phase_projectors(phase_grid)
        ax = lift(cos_p, layout, "rf") @ lift(sx, layout, "spin") + lift(sin_p, layout, "rf") @ lift(sy, layout, "spin")
        ay = lift(sin_p, layout, "rf") @ lift(-sx, layout, "spin") + lift(cos_p, layout, "rf") @ lift(sy, layout, "spin")
        channels += [("rf_amplitude_x", csparse(-1j * ax)), ("rf_amplitude_y", csparse(-1j * ay)),
                     ("rf_frequency", lift(phase_diff(phase_grid.n), layout, "rf"))]
    else:
        channels += [("rf_amplitude_x", csparse(-1j * lift(sx, layout, "spin"))),
                     ("rf_amplitude_y", csparse(-1j * lift(sy, layout, "spin")))]
    gz = sum(sys.spins[k].gamma * spin_operator(sys, k, "z") for k in range(len(sys.spins)))
    grad = lift(sp.diags(zgrid.points), layout, "z") @ lift(comm_superop(gz), layout, "spin")
    channels.append(("gradient", csparse(-1j * grad)))
    return Generator(constant=csparse(blocks + spatial), layout=layout, channels=channels,
                     blocks=blocks, spatial=spatial)


@dataclass(frozen=True)
class Pulse:
    """Rectangular pulse: amplitude and carrier offset in rad/s, phase in rad."""

    amplitude: float
    offset: float = 0.0
    phase: float = 0.0

    @property
    def phase_rate(self) -> float:
        return -self.offset


def assemble_deer(ic: IrreducibleComponents, sys: SpinSystem, pulse: Pulse, grid: PhaseGrid,
                  orientation=None, rk: RelaxKin | None = None, spins=None) -> Generator:
    """Microwave pulse generator with a phase coordinate (time-independent)."""
    _check_phase_grid(grid, allow_single=True)
    layout = FPLayout((Factor("mw", grid.n, "phase", role="rf", initial="delta"),
                       Factor("spin", ic.dim, "spin")))
    h0 = rotate_with_wigner(ic, composite_d2([_rotation(orientation)]))
    sx, sy = rf_superops(sys, irradiated_spins(sys, spins))
    a = float(pulse.amplitude)
    hs = [h0 + a * (np.cos(p + pulse.phase) * sx + np.sin(p + pulse.phase) * sy) for p in grid.points]
    spatial = pulse.phase_rate * lift(phase_diff(grid.n), layout, "mw")
    return _block_generator(hs, rk, layout, spatial)


def assemble_overtone(ic: IrreducibleComponents, sys: SpinSystem, rate: float, mas_grid: PhaseGrid,
                      rf: dict | None = None, rf_grid: PhaseGrid | None = None, orientation=None,
                      rk: RelaxKin | None = None, nucleus: int | None = None,
                      source: int | None = None) -> Generator:
    """Overtone cross-polarisation (with ``rf``) or free evolution generator
    under magic-angle spinning.

    The rotor orientation and phase use the angle-axis rotation about
    ``(sqrt(2/3), 0, sqrt(1/3))`` by the rotor phase. ``rf`` holds
    ``n_amplitude``, ``n_offset`` (rad/s) and ``h_amplitude`` (rad/s).
    """
    nucleus = _quadrupolar_spin(sys, nucleus)
    _check_phase_grid(mas_grid)
    crystal = _rotation(orientation)
    d_list = [composite_d2([crystal, Rotation(axis=OVERTONE_ROTOR_AXIS, angle=p)]) for p in mas_grid.points]
    h_mas = [rotate_with_wigner(ic, d) for d in d_list]
    if rf is None:
        layout = FPLayout((Factor("rotor", mas_grid.n, "phase", role="rotor"), Factor("spin", ic.dim, "spin")))
        spatial = float(rate) * lift(phase_diff(mas_grid.n), layout, "rotor")
        return _block_generator(h_mas, rk, layout, spatial)

    rf_grid = rf_grid or PhaseGrid(5)
    _check_phase_grid(rf_grid)
    if source is None:
        source = next((k for k in range(len(sys.spins)) if k != nucleus), None)
    layout = FPLayout((
        Factor("rotor", mas_grid.n, "phase", role="rotor"),
        Factor("rf", rf_grid.n, "phase", role="rf", initial="delta"),
        Factor("spin", ic.dim, "spin"),
    ))
    c, s = np.cos(MAGIC_ANGLE), np.sin(MAGIC_ANGLE)
    nx, ny, nz = (comm_superop(spin_operator(sys, nucleus, w)) for w in "xyz")
    a_n = float(rf.get("n_amplitude", 0.0))
    h_rf = []
    for p in rf_grid.points:
        h_rf.append(a_n * (c * nz + s * (np.cos(p) * nx + np.sin(p) * ny)))
    h_h = zeros(ic.dim)
    a_h = float(rf.get("h_amplitude", 0.0))
    if a_h:
        if source is None:
            raise ValueError("proton RF requested but the system has no polarisation source spin")
        hz = comm_superop(spin_operator(sys, source, "z"))
        hx = comm_superop(spin_operator(sys, source, "x"))
        h_h = a_h * (c * hz + s * hx)
    hs = [hm + hr + h_h for hm in h_mas for hr in h_rf]
    spatial = (float(rate) * lift(phase_diff(mas_grid.n), layout, "rotor")
               - float(rf.get("n_offset", 0.0)) * lift(phase_diff(rf_grid.n), layout, "rf"))
    return _block_generator(hs, rk, layout, spatial)


def _quadrupolar_spin(sys: SpinSystem, nucleus):
    if nucleus is None:
        nucleus = next(iter(sys.quadrupolar), None)
    if nucleus is None or nucleus not in sys.quadrupolar:
        raise ValueError("overtone assembly needs a quadrupolar tensor on the overtone nucleus")
    return nucleus


def build_fa_controls(layout: FPLayout, spin_ops) -> list:
    """Frequency-amplitude control operators.

    ``spin_ops`` maps each phase slot name to a pair ``(Sx, Sy)`` of spin
    superoperators. For every channel returns ``(amplitude, frequency)`` with
    ``amplitude = lift(cos(Phi) x Sx + sin(Phi) x Sy)`` and
    ``frequency = lift(d/dphi)`` on that slot.
    """
    out = []
    for slot, (sx, sy) in dict(spin_ops).items():
        f = layout.factor(slot)
        if f.kind != "phase":
            raise ValueError(f"control channel {slot!r} is not a phase factor")
        phi = PhaseGrid(f.dim).points
        amp = (lift(sp.diags(np.cos(phi)), layout, slot) @ lift(sx, layout, "spin")
               + lift(sp.diags(np.sin(phi)), layout, slot) @ lift(sy, layout, "spin"))
        out.append((csparse(amp), lift(phase_diff(f.dim), layout, slot)))
    return out
