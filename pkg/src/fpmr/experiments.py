"""Experiment runners: turn a validated configuration into spin systems,
generators, propagation and detection, with optional grid convergence.

Every runner returns a ``Result``: named tables of equal-length columns
plus scalar metadata, and a ``primary`` array used by convergence mode.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
from . import assembly as A
from .config import ExperimentConfig, OperatorModel, PowderModel
from .propagation import (
    DENSE_STEP_CAP, FPState, Trajectory, acquire_fid, lifted_coil, detect_fd, distribute_state, evolve, evolve_schedule,
    fid_spectrum, lvn_oracle, powder_average, spatial_average,
)
from .spatial import CoordinateGrid, PhaseGrid, spherical_grid
from .sparse import NumericalError, expm, expmv
from .spin import (
    Rotation, SpinSystem, build_components, hilbert_components, relax_kin, rotate_components,
    spin_operator, state,
)

log = logging.getLogger(__name__)


class ExperimentError(RuntimeError):
    """A numerical failure annotated with the stage where it happened."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class Result:
    tables: dict
    metadata: dict = dc_field(default_factory=dict)
    primary: np.ndarray | None = None


@dataclass
class RunReport:
    result: Result
    outputs: list = dc_field(default_factory=list)
    wall_time_s: float = 0.0
    convergence: list = dc_field(default_factory=list)
    converged: bool | None = None


# --------------------------------------------------------------------------
# spin system ingestion

def build_spin_system(model) -> tuple:
    """``(SpinSystem, RelaxKin or None)`` from a ``SpinSystemModel``."""
    labels = [s.isotope for s in model.spins]
    sys = SpinSystem(spins=labels, field=model.field_t, secular=model.secular)
    for k, s in enumerate(model.spins):
        gamma = sys.spins[k].gamma
        if s.frame == "lab":
            sys.frame[k] = None
        elif s.frame_hz is not None:
            sys.frame[k] = -np.sign(gamma) * 2 * np.pi * s.frame_hz
        if s.g is not None:
            sys.set_g(k, s.g.principal, np.radians(s.g.euler_deg))
        csa = s.csa
        if s.shift_ppm is not None or (csa is not None and csa.aniso_ppm):
            sys.set_shift(k, s.shift_ppm or 0.0, csa.aniso_ppm if csa else 0.0,
                          csa.eta if csa else 0.0, np.radians(csa.euler_deg) if csa else (0, 0, 0))
        aniso_hz = csa.aniso_hz if csa is not None and csa.aniso_hz is not None else 0.0
        if s.offset_hz or aniso_hz:
            if not model.field_t:
                raise ValueError(f"spin {k}: offsets need a non-zero field")
            principal = np.array([-(1 + csa.eta) / 2, -(1 - csa.eta) / 2, 1.0]) * aniso_hz if aniso_hz else np.zeros(3)
            r = Rotation(euler=tuple(np.radians(csa.euler_deg))).matrix() if aniso_hz else np.eye(3)
            tensor = 2 * np.pi * (s.offset_hz * np.eye(3) + r @ np.diag(principal) @ r.T)
            sys.zeeman[k] = sys.zeeman[k] + tensor / model.field_t
        if s.quadrupole is not None:
            q = s.quadrupole
            sys.set_quadrupole(k, q.cq_hz, q.eta, np.radians(q.euler_deg))
    for c in model.couplings:
        i, j = c.spins
        if c.j_hz:
            sys.set_j(i, j, c.j_hz)
        if c.dipolar is not None:
            sys.set_dipolar(i, j, c.dipolar.distance_m, c.dipolar.direction)
        if c.tensor_hz is not None:
            pair = (min(i, j), max(i, j))
            extra = 2 * np.pi * np.asarray(c.tensor_hz, dtype=float)
            sys.couplings[pair] = sys.couplings.get(pair, np.zeros((3, 3))) + extra
    sys.validate()
    rk = None
    if model.relaxation is not None:
        rk = relax_kin(sys, t1=model.relaxation.t1_s, t2=model.relaxation.t2_s)
    return sys, rk


def select_spins(sys: SpinSystem, op: OperatorModel) -> list:
    if op.spins is not None:
        bad = [k for k in op.spins if not 0 <= k < len(sys.spins)]
        if bad:
            raise ValueError(f"operator refers to missing spins {bad}")
        return list(op.spins)
    if op.isotope is not None:
        ks = [k for k, s in enumerate(sys.spins) if s.label == op.isotope]
        if not ks:
            raise ValueError(f"no {op.isotope} spins in the system")
        return ks
    ks = [k for k in range(len(sys.spins)) if sys.frame.get(k) is not None]
    return ks or list(range(len(sys.spins)))


def operator_vector(sys: SpinSystem, op: OperatorModel) -> np.ndarray:
    return sum(state(sys, k, op.operator) for k in select_spins(sys, op))


def operator_matrix(sys: SpinSystem, op: OperatorModel) -> np.ndarray:
    return sum(spin_operator(sys, k, op.operator).toarray() for k in select_spins(sys, op))


def make_powder(p: PowderModel, single_deg=(0.0, 0.0, 0.0)):
    if p.scheme == "single":
        return spherical_grid("user_list", orientations=[np.radians(single_deg)])
    if p.scheme == "user_list":
        if not p.orientations_deg:
            raise ValueError("user_list powder needs orientations_deg")
        return spherical_grid("user_list", orientations=np.radians(p.orientations_deg), weights=p.weights)
    return spherical_grid("two_angle_spiral", p.points)


def _axis_from_angle(deg):
    t = np.radians(deg)
    return (np.sin(t), 0.0, np.cos(t))


def _two_pi(x):
    return 2 * np.pi * x


# --------------------------------------------------------------------------
# detection helpers shared by rotating experiments

def _detect(gen, st, coil, det, threads):
    if det.domain == "time":
        return acquire_fid(gen, st, coil, det.dwell_s, det.points)
    sw = det.sweep
    omegas = _two_pi(np.linspace(sw.center_hz - sw.width_hz / 2, sw.center_hz + sw.width_hz / 2, sw.points))
    return detect_fd(gen, st, coil, omegas, threads=threads)


def _detection_result(avg, det, extra_meta=None) -> Result:
    meta = dict(extra_meta or {})
    if det.domain == "time":
        spec = fid_spectrum(avg.values, det.dwell_s)
        tables = {
            "fid": {"time_s": avg.times, "real": avg.values.real, "imag": avg.values.imag},
            "spectrum": {"frequency_hz": spec.axis_hz, "real": spec.values.real, "imag": spec.values.imag},
        }
        return Result(tables, meta, primary=avg.values)
    tables = {"spectrum": {"frequency_hz": avg.axis_hz, "real": avg.values.real, "imag": avg.values.imag}}
    meta["hz_per_rad_s"] = 1 / (2 * np.pi)
    return Result(tables, meta, primary=avg.values)


# --------------------------------------------------------------------------
# runners

def run_mas(cfg: ExperimentConfig, threads=1, oracle=False) -> Result:
    ex, det = cfg.experiment, cfg.detection
    sys, rk = build_spin_system(cfg.spin_system)
    ic = build_components(sys)
    rate = _two_pi(ex.rate_hz)
    grid = PhaseGrid(ex.rotor_points)
    rho0 = operator_vector(sys, ex.initial)
    coil = operator_vector(sys, det.coil)

    if oracle:
        return _oracle_rotating(cfg, sys, rk, lambda o, phis, t: A.rotor_d2_stack(o, ex.axis, phis - rate * t),
                                ex.rotor_points, threads)

    def runner(orient):
        gen = A.assemble_singlerot(ic, ex.axis, rate, grid, Rotation(euler=orient), rk)
        st = distribute_state(rho0, gen.layout)
        return _detect(gen, st, coil, det, 1)

    avg = powder_average(runner, make_powder(ex.powder, ex.orientation_deg), threads)
    return _detection_result(avg, det, {"kind": ex.kind, "rate_hz": ex.rate_hz, "rotor_points": ex.rotor_points})


def run_dor(cfg: ExperimentConfig, threads=1, oracle=False) -> Result:
    ex, det = cfg.experiment, cfg.detection
    sys, rk = build_spin_system(cfg.spin_system)
    ic = build_components(sys)
    r0, r1 = _two_pi(ex.outer_rate_hz), _two_pi(ex.inner_rate_hz)
    n0, n1 = _axis_from_angle(ex.outer_angle_deg), _axis_from_angle(ex.inner_angle_deg)
    rho0 = operator_vector(sys, ex.initial)
    coil = operator_vector(sys, det.coil)

    if oracle:
        m = cfg.oracle.phase_points or ex.outer_points
        inner = ex.inner_points

        def sampler(o, phis, t):
            p0, p1 = phis
            return A.dor_d2_stack(o, n0, n1, p0 - r0 * t, p1 - r1 * t)

        return _oracle_rotating(cfg, sys, rk, sampler, (m, inner), threads)

    g0, g1 = PhaseGrid(ex.outer_points), PhaseGrid(ex.inner_points)

    def runner(orient):
        gen = A.assemble_doublerot(ic, n0, n1, r0, r1, g0, g1, Rotation(euler=orient), rk)
        st = distribute_state(rho0, gen.layout)
        return _detect(gen, st, coil, det, 1)

    avg = powder_average(runner, make_powder(ex.powder, ex.orientation_deg), threads)
    return _detection_result(avg, det, {"kind": "dor", "grid": [ex.outer_points, ex.inner_points]})


def _oracle_rotating(cfg, sys, rk, d_stack, points, threads) -> Result:
    """Time-sliced reference for spinning experiments: the initial rotor
    phases are averaged explicitly."""
    ex, det = cfg.experiment, cfg.detection
    if det.domain != "time":
        raise ValueError("the time-sliced reference only produces time-domain output")
    if rk is not None:
        raise ValueError("the time-sliced reference does not include relaxation")
    hc = hilbert_components(sys)
    if isinstance(points, tuple):
        p0, p1 = (x.ravel() for x in np.meshgrid(PhaseGrid(points[0]).points, PhaseGrid(points[1]).points,
                                                  indexing="ij"))
        phis = (p0, p1)
        count = p0.size
    else:
        n = cfg.oracle.phase_points or points
        phis = PhaseGrid(n).points
        count = n
    dt = cfg.oracle.dt_s
    per = int(round(det.dwell_s / dt))
    if per < 1 or abs(per * dt - det.dwell_s) > 1e-9 * det.dwell_s:
        raise ValueError("oracle dt_s must divide the dwell time")
    rho0 = operator_matrix(sys, ex.initial)
    coil = operator_matrix(sys, det.coil)

    def runner(orient):
        o = Rotation(euler=orient)
        tr = lvn_oracle(lambda t: hc.hamiltonian(d_stack(o, phis, t)),
                        np.broadcast_to(rho0, (count,) + rho0.shape) / count, dt,
                        (det.points - 1) * per, coil=coil)
        return tr.values[::per]

    vals = powder_average(runner, make_powder(ex.powder, ex.orientation_deg), threads)
    avg = Trajectory(det.dwell_s * np.arange(det.points), vals)
    return _detection_result(avg, det, {"kind": ex.kind, "method": "time-sliced reference"})


def stejskal_tanner(gamma, g, delta, big_delta, d):
    return float(np.exp(-(gamma * g * delta) ** 2 * d * (big_delta - delta / 3)))


def _coordinate_grid(g) -> CoordinateGrid:
    return CoordinateGrid.uniform(g.length_m, g.points, g.boundary)


def run_pgse(cfg: ExperimentConfig, threads=1, oracle=False) -> Result:
    ex = cfg.experiment
    sys, rk = build_spin_system(cfg.spin_system)
    ic = build_components(sys)
    zgrid = _coordinate_grid(ex.grid)
    rho0 = operator_vector(sys, ex.initial)
    coil = operator_vector(sys, OperatorModel(operator="+", spins=select_spins(sys, ex.initial)))
    wf = A.Waveform([
        (ex.delta_s, {"gradient": ex.gradient_t_per_m}),
        *([(ex.big_delta_s - ex.delta_s, {})] if ex.big_delta_s > ex.delta_s else []),
        (ex.delta_s, {"gradient": -ex.gradient_t_per_m}),
    ])

    def echo(diffusion):
        gen = A.assemble_spatiotemporal(ic, sys, zgrid, None, diffusion, 0.0, rk, stencil=ex.grid.stencil)
        st = distribute_state(rho0, gen.layout)
        out = evolve_schedule(gen, wf, st)
        return np.vdot(coil, spatial_average(out))

    s_d = echo(ex.diffusion_m2_s)
    s_0 = echo(0.0)
    att = abs(s_d) / abs(s_0)
    gammas = {sys.spins[k].gamma for k in select_spins(sys, ex.initial)}
    analytic = stejskal_tanner(next(iter(gammas)), ex.gradient_t_per_m, ex.delta_s, ex.big_delta_s,
                               ex.diffusion_m2_s) if len(gammas) == 1 else float("nan")
    tables = {"echo": {
        "gradient_t_per_m": np.array([ex.gradient_t_per_m]),
        "attenuation": np.array([att]),
        "stejskal_tanner": np.array([analytic]),
        "echo_real": np.array([s_d.real]), "echo_imag": np.array([s_d.imag]),
    }}
    return Result(tables, {"kind": "pgse", "attenuation": att, "stejskal_tanner": analytic},
                  primary=np.array([att]))


# -- spatiotemporal ---------------------------------------------------------

def wurst_amplitude(t, duration, smoothing):
    return 1 - np.abs(np.cos(np.pi * t / duration)) ** smoothing


def event_slices(events, phase_grid: bool) -> list:
    """Piecewise-constant channel coefficients for a list of events.

    The pulse phase ``psi`` accumulates ``2 pi offset`` over RF events. On a
    phase grid this is produced by the ``rf_frequency`` channel (phase rate
    ``-offset``); otherwise it is written into Cartesian amplitudes.
    """
    slices = []
    psi = 0.0  # accumulated phase from carrier offsets
    for ev in events:
        n = ev.slices
        dt = ev.duration_s / n
        for i in range(n):
            t0, tm = i * dt, (i + 0.5) * dt
            c = {}
            if ev.gradient_t_per_m:
                c["gradient"] = ev.gradient_t_per_m
            pulse = ev.rf or ev.chirp
            if pulse is not None:
                phi0 = np.radians(pulse.phase_deg)
                if ev.chirp is not None:
                    T = ev.duration_s
                    amp = _two_pi(pulse.amplitude_hz) * wurst_amplitude(tm, T, pulse.smoothing)
                    off = pulse.offset_hz + pulse.bandwidth_hz * (tm / T - 0.5)
                    # exact phase of a linear sweep at the slice midpoint
                    acc = _two_pi(pulse.offset_hz * tm + pulse.bandwidth_hz * (tm ** 2 / (2 * T) - tm / 2))
                else:
                    amp = _two_pi(pulse.amplitude_hz)
                    off = pulse.offset_hz
                    acc = _two_pi(off * tm)
                if phase_grid:
                    c["rf_amplitude_x"] = amp * np.cos(phi0)
                    c["rf_amplitude_y"] = amp * np.sin(phi0)
                    c["rf_frequency"] = -_two_pi(off)
                else:
                    c["rf_amplitude_x"] = amp * np.cos(phi0 + psi + acc)
                    c["rf_amplitude_y"] = amp * np.sin(phi0 + psi + acc)
            slices.append((dt, c))
        pulse = ev.rf or ev.chirp
        if pulse is not None:
            psi += _two_pi(pulse.offset_hz * ev.duration_s)
    return slices


def run_spatiotemporal(cfg: ExperimentConfig, threads=1, oracle=False) -> Result:
    ex = cfg.experiment
    sys, rk = build_spin_system(cfg.spin_system)
    ic = build_components(sys)
    zgrid = _coordinate_grid(ex.grid)
    pgrid = PhaseGrid(ex.rf_phase_points) if ex.rf_phase_points else None
    gen = A.assemble_spatiotemporal(ic, sys, zgrid, pgrid, ex.diffusion_m2_s, ex.flow_m_s, rk,
                                    stencil=ex.grid.stencil)
    st = distribute_state(operator_vector(sys, ex.initial), gen.layout)
    if ex.events:
        st = evolve_schedule(gen, A.Waveform(event_slices(ex.events, pgrid is not None)), st)

    spins = select_spins(sys, OperatorModel())
    obs = {w: sum(state(sys, k, w) for k in spins) for w in "xyz"}
    # per-point magnetisation (the initial state carries 1/n per point)
    per_z = zgrid.n * _per_coordinate(st)
    tables = {"profile": {"z_m": zgrid.points,
                          **{f"m{w}": np.real(per_z @ obs[w].conj()) for w in "xyz"}}}
    primary = np.concatenate([tables["profile"][f"m{w}"] for w in "xyz"])
    meta = {"kind": "spatiotemporal", "dimension": gen.dim}

    acq = ex.acquisition
    if acq is not None:
        coil = lifted_coil(sum(state(sys, k, "+") for k in spins), gen.layout)
        steps = {}
        v = st.vector
        signal = []
        for loop in range(acq.loops):
            g = acq.gradient_t_per_m * ((-1) ** loop if acq.alternate else 1)
            if g not in steps:
                steps[g] = _stepper(gen.frozen({"gradient": g} if g else {}), acq.dwell_s)
            for _ in range(acq.points):
                signal.append(np.vdot(coil, v))
                v = steps[g](v)
        sig = np.array(signal)
        tables["fid"] = {"time_s": acq.dwell_s * np.arange(sig.size), "real": sig.real, "imag": sig.imag}
        primary = sig
    return Result(tables, meta, primary=primary)


def _stepper(g, dt):
    if g.shape[0] <= DENSE_STEP_CAP:
        p = expm(g * dt)
        return lambda v: p @ v
    return lambda v: expmv(g, v, dt)


def _per_coordinate(st: FPState) -> np.ndarray:
    """Spin state at every coordinate point, summed over phase factors."""
    lay = st.layout
    coord = [f for f in lay.spatial_factors if f.kind == "coordinate"]
    ncoord = int(np.prod([f.dim for f in coord])) if coord else 1
    blocks = st.blocks().reshape(-1, ncoord, lay.spin_dim)
    return blocks.sum(axis=0)


# -- DEER -------------------------------------------------------------------

def pulse_map(ic, sys, pulse: A.Pulse, duration, grid: PhaseGrid, orientation, rk=None) -> np.ndarray:
    """Spin Liouville-space map of a soft pulse: phase-grid propagation from
    a definite initial phase followed by the partial trace over the phase."""
    gen = A.assemble_deer(ic, sys, pulse, grid, orientation, rk)
    d = ic.dim
    prop = expm(gen.constant * duration)
    # initial weight sits on phase point 0
    return prop[:, :d].reshape(grid.n, d, d).sum(axis=0)


def pulse_map_oracle(hc, sys, pulse: A.Pulse, duration, orientation, dt) -> np.ndarray:
    """Same map from the time-sliced reference with an explicit phase ramp."""
    spins = A.irradiated_spins(sys)
    sx = sum(spin_operator(sys, k, "x").toarray() for k in spins)
    sy = sum(spin_operator(sys, k, "y").toarray() for k in spins)
    h0 = hc.hamiltonian(A.composite_d2([A._rotation(orientation)]))
    steps = max(1, int(round(duration / dt)))
    h_dt = duration / steps
    u = np.eye(h0.shape[0], dtype=complex)
    for k in range(steps):
        ph = pulse.phase + pulse.offset * (k + 0.5) * h_dt
        h = h0 + pulse.amplitude * (np.cos(ph) * sx + np.sin(ph) * sy)
        w, v = np.linalg.eigh(h)
        u = (v * np.exp(-1j * h_dt * w)) @ v.conj().T @ u
    return np.kron(u, u.conj())


def deer_timing(ex):
    p = ex.pulses
    end1 = p[0].duration_s
    start3 = end1 + ex.gap_s
    last = start3 - p[1].duration_s
    positions = np.linspace(end1, last, ex.steps)
    echo_center = start3 + p[2].duration_s + ex.gap_s
    window = echo_center + np.linspace(-ex.echo.window_s / 2, ex.echo.window_s / 2, ex.echo.points)
    return positions, start3, window


def run_deer(cfg: ExperimentConfig, threads=1, oracle=False) -> Result:
    ex = cfg.experiment
    sys, rk = build_spin_system(cfg.spin_system)
    ic = build_components(sys)
    hc = hilbert_components(sys) if oracle else None
    electrons = A.irradiated_spins(sys)
    frame_hz = {abs(sys.frame[k]) / (2 * np.pi) for k in electrons}
    if len(frame_hz) != 1:
        raise ValueError("DEER needs all irradiated spins to share one rotating frame")
    frame = sys.frame[electrons[0]]
    sign = np.sign(frame) or 1.0
    pulses = [A.Pulse(_two_pi(p.amplitude_hz), sign * _two_pi(p.frequency_hz) - frame, np.radians(p.phase_deg))
              for p in ex.pulses]
    durations = [p.duration_s for p in ex.pulses]
    grid = PhaseGrid(ex.mw_phase_points)
    positions, start3, window = deer_timing(ex)
    rho0 = operator_vector(sys, ex.initial)
    coil = operator_vector(sys, OperatorModel(operator="+"))
    d = ic.dim
    relax = rk.total.toarray() if rk is not None else np.zeros((d, d))

    demod = np.exp(1j * pulses[0].offset * (window - window.mean()))

    def runner(orient):
        o = Rotation(euler=orient)
        if oracle:
            maps = [pulse_map_oracle(hc, sys, p, t, o, cfg.oracle.dt_s) for p, t in zip(pulses, durations)]
        else:
            maps = [pulse_map(ic, sys, p, t, grid, o, rk) for p, t in zip(pulses, durations)]
        lv = (-1j * rotate_components(ic, [o])).toarray() + relax
        w, v = np.linalg.eig(lv)
        vinv = np.linalg.inv(v)

        def free(x, t):
            return v @ (np.exp(w * t) * (vinv @ x))

        after1 = maps[0] @ rho0
        trace = np.empty(len(positions) + 1, dtype=complex)
        for i, pos in enumerate(list(positions) + [None]):
            if pos is None:
                x = free(after1, start3 - durations[0])
            else:
                x = free(after1, pos - durations[0])
                x = maps[1] @ x
                x = free(x, start3 - pos - durations[1])
            x = maps[2] @ x
            t_end3 = start3 + durations[2]
            samples = np.array([np.vdot(coil, free(x, tw - t_end3)) for tw in window])
            # detection demodulated at the observer carrier
            trace[i] = np.mean(samples * demod)
        return trace

    traces = powder_average(runner, make_powder(ex.powder, ex.orientation_deg), threads)
    trace, reference = traces[:-1], traces[-1]
    depth, freq = deer_analysis(trace, positions, reference)
    tables = {"trace": {"pump_position_s": positions, "echo_real": trace.real, "echo_imag": trace.imag}}
    meta = {"kind": "deer", "modulation_depth": depth, "dominant_frequency_hz": freq,
            "reference_echo_abs": float(abs(reference)),
            "method": "time-sliced reference" if oracle else "phase grid"}
    return Result(tables, meta, primary=trace)


def deer_analysis(trace, positions, reference) -> tuple:
    """Modulation depth and dominant modulation frequency (Hz).

    The trace is projected on the phase of the unpumped echo ``reference``.
    The depth is the fraction of echo lost on average, ``1 - mean(V)/V_ref``;
    for ``V = V_ref (1 - l (1 - cos wt))`` this is the inverted fraction ``l``.
    The frequency is the peak of a zero-padded spectrum of the trace.
    """
    ref = abs(reference)
    if ref == 0:
        return 0.0, float("nan")
    v = np.real(trace * np.conj(reference)) / ref
    depth = float(1 - v.mean() / ref)
    x = v - v.mean()
    dt = positions[1] - positions[0]
    n = 64 * x.size
    spec = np.abs(np.fft.rfft(x * np.hanning(x.size), n))
    f = np.fft.rfftfreq(n, dt)
    spec[f < 1.5 / (positions[-1] - positions[0])] = 0
    return depth, float(f[np.argmax(spec)]) if spec.any() else float("nan")


# -- overtone ---------------------------------------------------------------

def overtone_offset(sys: SpinSystem, nucleus: int, frequency_hz: float) -> float:
    """Carrier frequency (Hz, positive) as an offset in the Hamiltonian sign
    convention of a laboratory-frame nucleus."""
    return -np.sign(sys.spins[nucleus].gamma) * _two_pi(frequency_hz)


def overtone_initial(sys: SpinSystem, source: int) -> np.ndarray:
    """Source-spin polarisation locked along the tilted RF field."""
    th = A.MAGIC_ANGLE
    return np.cos(th) * state(sys, source, "z") + np.sin(th) * state(sys, source, "x")


def run_overtone(cfg: ExperimentConfig, threads=1, oracle=False) -> Result:
    ex, det = cfg.experiment, cfg.detection
    sys, rk = build_spin_system(cfg.spin_system)
    ic = build_components(sys)
    nucleus = A._quadrupolar_spin(sys, ex.nucleus)
    coil = operator_vector(sys, det.coil if det.coil.spins or det.coil.isotope
                           else OperatorModel(operator=det.coil.operator, spins=[nucleus]))
    directions = [1, -1] if ex.both_directions else [1]
    mas_grid = PhaseGrid(ex.rotor_points)
    tables, meta = {}, {"kind": "overtone_cp", "nucleus": nucleus}
    primary = []
    for sgn in directions:
        rate = sgn * _two_pi(ex.rate_hz)

        def runner(orient):
            o = Rotation(euler=orient)
            if ex.cp is not None:
                cp = ex.cp
                source = next(k for k in range(len(sys.spins)) if k != nucleus)
                rf = {"n_amplitude": _two_pi(cp.n_amplitude_hz), "h_amplitude": _two_pi(cp.h_amplitude_hz),
                      "n_offset": overtone_offset(sys, nucleus, cp.n_frequency_hz)}
                g_cp = A.assemble_overtone(ic, sys, rate, mas_grid, rf, PhaseGrid(cp.rf_points), o, rk,
                                           nucleus=nucleus, source=source)
                st = distribute_state(overtone_initial(sys, source), g_cp.layout)
                st = evolve(g_cp, st, cp.duration_s)
                # partial trace over the RF phase
                blocks = st.vector.reshape(ex.rotor_points, cp.rf_points, ic.dim).sum(axis=1)
                g_free = A.assemble_overtone(ic, sys, rate, mas_grid, None, None, o, rk, nucleus=nucleus)
                st = FPState(blocks.ravel(), g_free.layout)
            else:
                g_free = A.assemble_overtone(ic, sys, rate, mas_grid, None, None, o, rk, nucleus=nucleus)
                st = distribute_state(operator_vector(sys, ex.initial), g_free.layout)
            return _detect(g_free, st, coil, det, 1)

        avg = powder_average(runner, make_powder(ex.powder, ex.orientation_deg), threads)
        res = _detection_result(avg, det)
        suffix = "" if len(directions) == 1 else ("_positive" if sgn > 0 else "_negative")
        for name, tab in res.tables.items():
            tables[name + suffix] = tab
        primary.append(res.primary)
    return Result(tables, meta, primary=np.concatenate(primary))


RUNNERS = {
    "static": run_mas, "mas": run_mas, "dor": run_dor, "pgse": run_pgse,
    "spatiotemporal": run_spatiotemporal, "deer": run_deer, "overtone_cp": run_overtone,
}
ORACLE_KINDS = ("static", "mas", "dor", "deer")


# --------------------------------------------------------------------------
# convergence

GRID_FIELDS = ("rotor_points", "outer_points", "inner_points", "mw_phase_points", "rf_phase_points")


def grid_sizes(cfg: ExperimentConfig) -> dict:
    ex = cfg.experiment
    out = {f: getattr(ex, f) for f in GRID_FIELDS if getattr(ex, f, None)}
    if getattr(ex, "grid", None) is not None:
        out["grid.points"] = ex.grid.points
    if getattr(ex, "cp", None) is not None:
        out["cp.rf_points"] = ex.cp.rf_points
    return out


def doubled(cfg: ExperimentConfig) -> ExperimentConfig:
    """Configuration with every spatial grid size doubled."""
    ex = cfg.experiment
    upd = {f: 2 * getattr(ex, f) for f in GRID_FIELDS if getattr(ex, f, None)}
    if getattr(ex, "grid", None) is not None:
        upd["grid"] = ex.grid.model_copy(update={"points": 2 * ex.grid.points})
    if getattr(ex, "cp", None) is not None:
        upd["cp"] = ex.cp.model_copy(update={"rf_points": 2 * ex.cp.rf_points})
    return cfg.model_copy(update={"experiment": ex.model_copy(update=upd)})


def run_experiment(cfg: ExperimentConfig, threads: int = 1, oracle: bool = False,
                   converge: float | None = None) -> RunReport:
    """Dispatch a configuration; in convergence mode grids are doubled until
    the primary output changes by less than the tolerance (relative max-abs)."""
    t0 = time.perf_counter()
    kind = cfg.experiment.kind
    if oracle and kind not in ORACLE_KINDS:
        raise ValueError(f"no time-sliced reference for {kind} experiments")
    runner = RUNNERS[kind]
    tol = converge if converge is not None else (cfg.convergence.tolerance if cfg.convergence else None)
    try:
        result = runner(cfg, threads, oracle)
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        raise ExperimentError(f"{kind} run", exc) from exc
    history, converged = [], None
    if tol is not None and not oracle:
        cap = cfg.convergence.max_doublings if cfg.convergence else 6
        converged = False
        history.append({"grids": grid_sizes(cfg), "change": None})
        current = cfg
        for _ in range(cap):
            current = doubled(current)
            try:
                nxt = runner(current, threads, False)
            except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
                raise ExperimentError(f"{kind} convergence step {grid_sizes(current)}", exc) from exc
            change = _relative_change(result.primary, nxt.primary)
            history.append({"grids": grid_sizes(current), "change": change})
            log.info("grids %s: change %.3e", grid_sizes(current), change)
            result = nxt
            if change < tol:
                converged = True
                break
        result.metadata["converged"] = converged
    return RunReport(result=result, wall_time_s=time.perf_counter() - t0,
                     convergence=history, converged=converged)


def _relative_change(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        # profiles on doubled grids: compare on the coarse points
        step = b.size // a.size
        b = b[::step] if step >= 1 and b[::step].size == a.size else np.interp(
            np.linspace(0, 1, a.size), np.linspace(0, 1, b.size), np.real(b))
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-300)
    return float(np.abs(a - b).max() / scale)
