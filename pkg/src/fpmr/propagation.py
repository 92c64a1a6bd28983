"""Time propagation, the time-sliced Liouville-von Neumann reference,
spatial averaging and time/frequency domain detection.

Detection uses ``<coil|rho> = sum conj(coil) * rho``. With a generator
``G = -i F`` the signal is ``s(t) = <coil| exp(G t) |rho0>`` and the
frequency-domain spectrum is

    f(omega) = int_0^inf s(t) exp(-i omega t) dt = -i <coil| (F + omega)^-1 |rho0>,

so a coherence precessing as ``exp(-i w0 t)`` gives a line at ``omega = -w0``
on both routes (the discrete Fourier transform of an FID uses the same sign).
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg

from .assembly import FPLayout, FPState, Generator, Waveform
from .sparse import EXPMV_TOL, expm, expmv, shifted_solve

log = logging.getLogger(__name__)

DENSE_STEP_CAP = 2048


@dataclass
class Trajectory:
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must increase")


@dataclass
class Spectrum:
    """Spectrum on an angular frequency axis (rad/s)."""

    axis: np.ndarray
    values: np.ndarray
    metadata: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        self.values = np.asarray(self.values)
        if self.axis.size > 1 and np.any(np.diff(self.axis) <= 0):
            raise ValueError("spectrum axis must increase")
        self.metadata.setdefault("axis_unit", "rad/s")
        self.metadata.setdefault("hz_per_rad_s", 1 / (2 * np.pi))

    @property
    def axis_hz(self) -> np.ndarray:
        return self.axis / (2 * np.pi)


# --------------------------------------------------------------------------
# states

def factor_weights(layout: FPLayout, weights: dict | None = None) -> list:
    """Initial weights of every spatial factor.

    Defaults: ``uniform`` factors get ``1/N``; ``delta`` factors (pulse
    phases) put all weight on ``phi = 0``.
    """
    weights = dict(weights or {})
    out = []
    for f in layout.spatial_factors:
        if f.name in weights:
            w = np.asarray(weights.pop(f.name), dtype=float).ravel()
            if w.size != f.dim:
                raise ValueError(f"weights for {f.name!r} have {w.size} entries, expected {f.dim}")
            if abs(w.sum() - 1) > 1e-12:
                raise ValueError(f"weights for {f.name!r} sum to {w.sum():.15g}, not 1")
        elif f.initial == "delta":
            w = np.zeros(f.dim)
            w[0] = 1.0
        else:
            w = np.full(f.dim, 1.0 / f.dim)
        out.append(w)
    if weights:
        raise KeyError(f"weights given for unknown factors {sorted(weights)}")
    return out


def distribute_state(rho0, layout: FPLayout, weights: dict | None = None) -> FPState:
    """Place ``w_j rho0`` in every spatial block ``j``."""
    rho0 = np.asarray(rho0, dtype=complex).ravel()
    if rho0.size != layout.spin_dim:
        raise ValueError(f"spin state of length {rho0.size} does not match spin dimension {layout.spin_dim}")
    w = np.ones(1)
    for fw in factor_weights(layout, weights):
        w = np.kron(w, fw)
    return FPState(np.kron(w, rho0), layout)


def spatial_average(state: FPState) -> np.ndarray:
    """Sum of all spatial blocks."""
    return state.blocks().sum(axis=0)


def lifted_coil(coil, layout: FPLayout, weights=None) -> np.ndarray:
    """Coil replicated over the spatial blocks (adjoint of ``spatial_average``).

    ``weights`` optionally scales each block, e.g. quadrature weights of a
    non-uniform grid multiplied by the number of points.
    """
    coil = np.asarray(coil, dtype=complex).ravel()
    if coil.size != layout.spin_dim:
        raise ValueError(f"coil of length {coil.size} does not match spin dimension {layout.spin_dim}")
    w = np.ones(layout.spatial_dim) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.size != layout.spatial_dim:
        raise ValueError("coil weights must have one entry per spatial block")
    return np.kron(w, coil)


# --------------------------------------------------------------------------
# propagation

def _require_static(gen: Generator, what: str):
    if gen.channels:
        raise ValueError(f"{what} needs a generator without channels; use evolve_schedule "
                         f"(channels: {gen.labels})")


def evolve(gen: Generator, state: FPState, t: float, tol: float = EXPMV_TOL) -> FPState:
    """``exp(G t) state`` for a time-independent generator."""
    _require_static(gen, "evolve")
    if t < 0:
        raise ValueError("evolution time must be non-negative")
    _check_layout(gen, state)
    return FPState(expmv(gen.constant, state.vector, t, tol), gen.layout)


def evolve_schedule(gen: Generator, wf: Waveform, state: FPState, tol: float = EXPMV_TOL) -> FPState:
    """Sequential propagation over piecewise-constant waveform slices."""
    _check_layout(gen, state)
    unknown = wf.labels - set(gen.labels)
    if unknown:
        raise KeyError(f"waveform uses unknown channels {sorted(unknown)}; generator has {gen.labels}")
    cache = {}
    v = state.vector
    for dur, coeffs in wf.slices:
        key = tuple(sorted(coeffs.items()))
        if key not in cache:
            cache[key] = gen.frozen(coeffs)
        v = expmv(cache[key], v, dur, tol)
    return FPState(v, gen.layout)


def _check_layout(gen, state):
    if state.layout.total_dim != gen.layout.total_dim:
        raise ValueError("state and generator layouts differ")


def lvn_oracle(sampler, rho0, dt: float, n: int, coil=None, t0: float = 0.0) -> Trajectory:
    """Time-sliced reference ``rho_{k+1} = exp(-i H(t_k + dt/2) dt) rho_k exp(+i ...)``.

    ``sampler(t)`` returns a Hilbert-space Hamiltonian (rad/s), or a stack of
    them of shape ``(B, d, d)`` to propagate ``B`` copies at once (``rho0``
    then has shape ``(B, d, d)`` or ``(d, d)``). With ``coil`` the trajectory
    records ``<coil|rho_k>`` (summed over the batch) instead of the states.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    rho = np.array(rho0, dtype=complex)
    times = t0 + dt * np.arange(n + 1)
    record = []

    def observe(r):
        if coil is None:
            return r.copy()
        return np.vdot(np.broadcast_to(coil, r.shape), r) if r.ndim == 3 else np.vdot(coil, r)

    record.append(observe(rho))
    for k in range(n):
        h = np.asarray(sampler(t0 + (k + 0.5) * dt), dtype=complex)
        u = _unitary(h, dt)
        if h.ndim == 3 and rho.ndim == 2:
            rho = np.broadcast_to(rho, h.shape).copy()
        rho = u @ rho @ np.conj(np.swapaxes(u, -1, -2))
        record.append(observe(rho))
    return Trajectory(times, np.array(record))


def _unitary(h, dt):
    if np.allclose(h, np.conj(np.swapaxes(h, -1, -2)), atol=1e-12 * max(1.0, np.abs(h).max())):
        w, v = np.linalg.eigh(h)
        return (v * np.exp(-1j * dt * w)[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    if h.ndim == 3:
        return np.array([scipy.linalg.expm(-1j * dt * x) for x in h])
    return scipy.linalg.expm(-1j * dt * h)


# --------------------------------------------------------------------------
# detection

def acquire_fid(gen: Generator, state: FPState, coil, dwell: float, n: int,
                coil_weights=None, tol: float = EXPMV_TOL) -> Trajectory:
    """``s_k = <coil| spatial_average(exp(G k dwell) state)>`` for ``k < n``."""
    _require_static(gen, "acquire_fid")
    if not dwell > 0:
        raise ValueError("dwell must be positive")
    _check_layout(gen, state)
    c = lifted_coil(coil, gen.layout, coil_weights)
    v = state.vector
    out = np.empty(n, dtype=complex)
    step = expm(gen.constant * dwell) if gen.dim <= DENSE_STEP_CAP else None
    for k in range(n):
        out[k] = np.vdot(c, v)
        if k + 1 < n:
            v = step @ v if step is not None else expmv(gen.constant, v, dwell, tol)
    return Trajectory(dwell * np.arange(n), out)


def fid_spectrum(signal, dwell: float) -> Spectrum:
    """Discrete ``int s(t) exp(-i omega t) dt`` of a sampled FID (trapezoid
    weight on the first point), on an increasing axis."""
    s = np.array(signal, dtype=complex)
    s[0] /= 2
    n = s.size
    vals = dwell * np.fft.fftshift(np.fft.fft(s))
    axis = 2 * np.pi * np.fft.fftshift(np.fft.fftfreq(n, dwell))
    return Spectrum(axis, vals, {"dwell_s": dwell, "points": n, "method": "fft"})


def detect_fd(gen: Generator, state: FPState, coil, omegas, coil_weights=None,
              threads: int = 1) -> Spectrum:
    """Resolvent spectrum ``-i <coil| (F + omega)^-1 |state>`` with ``F = i G``."""
    _require_static(gen, "detect_fd")
    _check_layout(gen, state)
    c = lifted_coil(coil, gen.layout, coil_weights)
    f = 1j * gen.constant
    omegas = np.asarray(omegas, dtype=float)

    def one(w):
        return -1j * np.vdot(c, shifted_solve(f, float(w), state.vector))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            vals = list(pool.map(one, omegas))
    else:
        vals = [one(w) for w in omegas]
    return Spectrum(omegas, np.array(vals), {"method": "resolvent", "points": omegas.size})


def powder_average(runner, grid, threads: int = 1):
    """Weighted average of ``runner(orientation)`` over a spherical grid.

    Orientations are evaluated independently (concurrently when
    ``threads > 1``) and combined in grid order.
    """
    orients = [tuple(o) for o in grid.orientations]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(runner, orients))
    else:
        results = [runner(o) for o in orients]
    first = results[0]
    vals = [r.values if isinstance(r, (Spectrum, Trajectory)) else np.asarray(r) for r in results]
    total = np.zeros_like(np.asarray(vals[0], dtype=complex))
    for w, v in zip(grid.weights, vals):
        total = total + w * v
    if isinstance(first, Spectrum):
        return Spectrum(first.axis, total, dict(first.metadata, orientations=len(orients)))
    if isinstance(first, Trajectory):
        return Trajectory(first.times, total)
    return total
