import numpy as np
import pytest
import scipy.sparse as sp

from fpmr.sparse import csparse, expm
from fpmr.spin import (
    RANKS, Rotation, SpinSystem, build_components, comm_superop, composite_d2,
    dipolar_constant, hamiltonian, left_right_superop, rank2_components, relax_kin,
    rotate_components, rotate_with_wigner, spin_operator, spin_operators, state,
    unit_state, unvec, vec, wigner_d2,
)

rng = np.random.default_rng(3)


def random_rotation(r=rng):
    return Rotation(euler=(r.uniform(0, 2 * np.pi), np.arccos(r.uniform(-1, 1)), r.uniform(0, 2 * np.pi)))


def test_spin_operators_small():
    assert np.array_equal(spin_operators(2)["z"].toarray(), np.diag([0.5, -0.5]))
    assert np.array_equal(spin_operators(3)["z"].toarray(), np.diag([1.0, 0.0, -1.0]))


@pytest.mark.parametrize("mult", [2, 3, 4, 5, 6])
def test_angular_momentum_algebra(mult):
    s = {k: v.toarray() for k, v in spin_operators(mult).items()}
    for a, b, c in (("x", "y", "z"), ("y", "z", "x"), ("z", "x", "y")):
        assert np.abs(s[a] @ s[b] - s[b] @ s[a] - 1j * s[c]).max() < 1e-14
    assert np.abs(s["+"] - (s["x"] + 1j * s["y"])).max() < 1e-15
    assert np.abs(s["-"] - (s["x"] - 1j * s["y"])).max() < 1e-15


def test_comm_superop_examples():
    sz, sp_ = spin_operators(2)["z"], spin_operators(2)["+"]
    assert np.abs(comm_superop(sz) @ vec(np.eye(2))).max() == 0
    assert np.abs(comm_superop(sz) @ vec(sp_) - vec(sp_)).max() < 1e-15


def test_left_right_superop_row_major():
    a = rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3))
    r = rng.normal(size=(3, 3))
    assert np.abs(left_right_superop(csparse(a), csparse(b)) @ vec(r) - vec(a @ r @ b)).max() < 1e-12
    assert np.array_equal(unvec(vec(r)), r)


def test_trace_preserved_under_commutator():
    sys = SpinSystem(["1H", "13C"], field=9.4)
    sys.set_offset(0, 2 * np.pi * 300)
    sys.set_j(0, 1, 140)
    c = comm_superop(hamiltonian(sys))
    rho = state(sys, 0, "x") + 0.3 * state(sys, 1, "z")
    one = unit_state(sys)
    for t in (1e-3, 1e-2):
        assert abs(np.vdot(one, expm(-1j * c * t) @ rho) - np.vdot(one, rho)) < 1e-10


def test_isotropic_components_vanish():
    sys = SpinSystem(["1H", "1H"], field=9.4)
    sys.set_j(0, 1, 7.0)
    ic = build_components(sys)
    assert ic.is_isotropic()
    h = rotate_components(ic, [random_rotation()])
    assert (h - ic.h0).count_nonzero() == 0


def test_axial_csa_line_follows_p2():
    sys = SpinSystem(["13C"], field=9.4)
    aniso = 2 * np.pi * 4000
    sys.set_offset(0, 0.0, aniso)
    ic = build_components(sys)
    sz = spin_operator(sys, 0, "z").toarray()
    for beta in np.linspace(0, np.pi, 7):
        h = hamiltonian(sys, Rotation(euler=(0.0, beta, 0.0))).toarray()
        split = np.ptp(np.linalg.eigvalsh(h))
        assert abs(split - abs(aniso * (3 * np.cos(beta) ** 2 - 1) / 2)) < 1e-6
        # superoperator route gives the same Liouvillian
        ref = comm_superop(h)
        assert np.abs((rotate_components(ic, [Rotation(euler=(0.0, beta, 0.0))]) - ref).toarray()).max() < 1e-6
    assert np.allclose(sz, np.diag([0.5, -0.5]))


def test_wigner_identity_and_z_rotation():
    assert np.abs(wigner_d2(Rotation.identity()) - np.eye(5)).max() < 1e-15
    phi = 0.37
    expected = np.diag(np.exp(-1j * np.array(RANKS) * phi))
    assert np.abs(wigner_d2(Rotation(axis=(0, 0, 1), angle=phi)) - expected).max() < 1e-14
    assert np.abs(wigner_d2(Rotation.about_z(phi)) - expected).max() < 1e-14


def test_wigner_homomorphism_and_unitarity():
    for _ in range(100):
        r1, r2 = random_rotation(), random_rotation()
        d = wigner_d2(r1) @ wigner_d2(r2)
        comp = Rotation.from_matrix(r1.matrix() @ r2.matrix())
        assert np.abs(d - wigner_d2(comp)).max() < 1e-12
        assert np.abs(d.conj().T @ d - np.eye(5)).max() < 1e-12


def test_wigner_transforms_rank2_components():
    a = rng.normal(size=(3, 3))
    a = a + a.T
    r = random_rotation()
    rm = r.matrix()
    lhs = rank2_components(rm @ a @ rm.T)
    rhs = wigner_d2(r) @ rank2_components(a)
    assert np.abs(lhs - rhs).max() < 1e-12


def test_angle_axis_matches_euler():
    r = Rotation(axis=(0.3, -0.5, 0.8), angle=1.1)
    e = Rotation.from_matrix(r.matrix())
    assert np.abs(wigner_d2(r) - wigner_d2(e)).max() < 1e-12


def system_with_everything():
    sys = SpinSystem(["1H", "13C", "14N"], field=11.7)
    sys.set_shift(0, 4.0, 8.0, 0.4, (0.1, 0.2, 0.3))
    sys.set_shift(1, 50.0, 60.0, 0.2, (1.0, 0.5, 2.0))
    sys.set_quadrupole(2, 1.2e5, 0.3, (0.4, 1.0, 0.1))
    sys.set_dipolar(0, 1, 1.1e-10, (0.2, 0.5, 0.8))
    sys.set_dipolar(0, 2, 1.5e-10, (1.0, 0.0, 0.3))
    sys.set_j(1, 2, 10.0)
    return sys


def test_identity_rotation_uses_diagonal_components():
    sys = system_with_everything()
    ic = build_components(sys)
    expected = ic.h0 + sum(ic.component(k, k) for k in RANKS)
    assert np.abs((rotate_components(ic, [Rotation.identity()]) - expected).toarray()).max() < 1e-6


def test_reconstruction_against_cartesian():
    sys = system_with_everything()
    ic = build_components(sys)
    one = vec(np.eye(sys.hilbert_dim))
    for _ in range(100):
        r = random_rotation()
        ref = comm_superop(hamiltonian(sys, r))
        got = rotate_components(ic, [r])
        scale = abs(ref).max()
        assert abs(got - ref).max() < 1e-10 * scale
        assert np.abs(got @ one).max() < 1e-10 * scale


def test_reconstruction_with_lab_frame_nucleus():
    sys = SpinSystem(["14N", "1H"], field=14.1)
    sys.frame[0] = None
    sys.set_quadrupole(0, 1.18e6, 0.53)
    sys.set_dipolar(0, 1, 1.04e-10, (0.3, 0.2, 0.9))
    ic = build_components(sys)
    for _ in range(10):
        r = random_rotation()
        ref = comm_superop(hamiltonian(sys, r))
        assert abs(rotate_components(ic, [r]) - ref).max() < 1e-10 * abs(ref).max()


def test_two_step_composition():
    sys = system_with_everything()
    ic = build_components(sys)
    r1, r2 = random_rotation(), random_rotation()
    two = rotate_components(ic, [r1, r2])
    one = rotate_components(ic, [r1.then(r2)])
    assert abs(two - one).max() < 1e-12 * abs(one).max()
    assert np.abs(composite_d2([r1, r2]) - wigner_d2(r2) @ wigner_d2(r1)).max() < 1e-15


def test_rotate_with_wigner_equals_rotate_components():
    ic = build_components(system_with_everything())
    r = random_rotation()
    assert (rotate_with_wigner(ic, wigner_d2(r)) - rotate_components(ic, [r])).count_nonzero() == 0


def test_quadrupole_on_spin_half_rejected():
    sys = SpinSystem(["1H"], field=1.0)
    with pytest.raises(ValueError, match="spin-1/2|cannot carry"):
        sys.set_quadrupole(0, 1e5)


def test_dipolar_constant_electrons():
    from fpmr.constants import ISOTOPES
    g = ISOTOPES["E"][1]
    d = dipolar_constant(g, g, 2e-9) / (2 * np.pi)
    assert abs(abs(d) / 52.04e6 * 8 - 1) < 2e-3


def test_relaxation_trivial_and_passthrough():
    sys = SpinSystem(["1H"], field=1.0)
    assert relax_kin(sys).total.count_nonzero() == 0
    assert relax_kin(sys, t1=np.inf, t2=np.inf).total.count_nonzero() == 0
    m = csparse(rng.normal(size=(4, 4)))
    rk = relax_kin(sys, r=m)
    assert rk.r is m or (rk.r != m).nnz == 0
    with pytest.raises(ValueError):
        relax_kin(sys, r=csparse(np.eye(3)))
    with pytest.raises(ValueError):
        relax_kin(sys, t2=-1.0)


def test_t2_decay():
    sys = SpinSystem(["1H"], field=1.0)
    r = relax_kin(sys, t2=0.1).total
    rho = state(sys, 0, "+")
    out = expm(r * 0.1) @ rho
    assert abs(np.vdot(rho, out) / np.vdot(rho, rho) - np.exp(-1.0)) < 1e-6


def test_relaxation_preserves_trace_and_is_stable():
    sys = SpinSystem(["1H", "14N"], field=1.0)
    r = relax_kin(sys, t1=[1.0, 0.5], t2=[0.1, 0.05]).total.toarray()
    one = unit_state(sys)
    assert np.abs(one.conj() @ r).max() < 1e-12
    assert np.linalg.eigvals(r).real.max() < 1e-12


def test_hermiticity_preserved():
    sys = system_with_everything()
    lv = -1j * comm_superop(hamiltonian(sys, random_rotation()))
    step = expm(lv * 1e-6)
    rho = state(sys, 0, "x") + state(sys, 2, "z")
    for _ in range(1000):
        rho = step @ rho
    m = unvec(rho)
    assert np.abs(m - m.conj().T).max() < 1e-10
    assert abs(np.trace(m)) < 1e-10
