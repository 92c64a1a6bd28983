import numpy as np
from hypothesis import given, settings, strategies as st

from fpmr import assembly as A
from fpmr.propagation import acquire_fid, distribute_state
from fpmr.sparse import csparse, expmv, kron
from fpmr.spatial import CoordinateGrid, PhaseGrid, fourier_diff, motion_generator
from fpmr.spin import Rotation, SpinSystem, build_components, state, unit_state, wigner_d2

angles = st.tuples(st.floats(0, 2 * np.pi), st.floats(0, np.pi), st.floats(0, 2 * np.pi))
seeds = st.integers(0, 2 ** 32 - 1)
fast = settings(max_examples=40, deadline=None)


def rand_complex(seed, shape):
    r = np.random.default_rng(seed)
    return r.normal(size=shape) + 1j * r.normal(size=shape)


@fast
@given(seeds, st.integers(1, 4), st.integers(1, 4))
def test_kron_mixed_product(seed, m, n):
    a, c = rand_complex(seed, (m, m)), rand_complex(seed + 1, (m, m))
    b, d = rand_complex(seed + 2, (n, n)), rand_complex(seed + 3, (n, n))
    lhs = (kron(csparse(a), csparse(b)) @ kron(csparse(c), csparse(d))).toarray()
    rhs = np.kron(a @ c, b @ d)
    assert np.abs(lhs - rhs).max() < 1e-12 * max(1, np.abs(rhs).max())


@fast
@given(angles, angles)
def test_wigner_unitary_homomorphism(e1, e2):
    r1, r2 = Rotation(euler=e1), Rotation(euler=e2)
    d1, d2 = wigner_d2(r1), wigner_d2(r2)
    assert np.abs(d1.conj().T @ d1 - np.eye(5)).max() < 1e-12
    comp = Rotation.from_matrix(r1.matrix() @ r2.matrix())
    assert np.abs(d1 @ d2 - wigner_d2(comp)).max() < 1e-11


@fast
@given(st.integers(2, 40))
def test_fourier_diff_antisymmetric_annihilates_constants(n):
    d = fourier_diff(n).toarray()
    assert np.abs(d + d.T).max() == 0
    assert np.abs(d @ np.ones(n)).max() < 1e-12


@fast
@given(seeds, st.floats(0.0, 5.0))
def test_expmv_preserves_norm_for_skew_hermitian(seed, t):
    h = rand_complex(seed, (12, 12))
    h = (h + h.conj().T) / 2
    v = rand_complex(seed + 7, 12)
    out = expmv(csparse(-1j * h), v, t)
    assert abs(np.linalg.norm(out) - np.linalg.norm(v)) < 1e-9 * np.linalg.norm(v)


@fast
@given(st.integers(5, 30), st.floats(1e-4, 1e-1), st.sampled_from(["flow", "diffusion"]))
def test_periodic_motion_annihilates_uniform(n, length, kind):
    g = CoordinateGrid.uniform(length, n, "periodic")
    m = motion_generator(g, kind, 1e-3 if kind == "flow" else 1e-9)
    assert np.abs(m @ np.ones(n)).max() <= 1e-12 * max(1.0, abs(m).max())


@settings(max_examples=15, deadline=None)
@given(angles, st.integers(3, 12), st.floats(0, 2 * np.pi * 5e3))
def test_singlerot_conserves_identity(orient, n, rate):
    sys = SpinSystem(["1H", "13C"], field=9.4)
    sys.set_offset(1, 2 * np.pi * 200, 2 * np.pi * 3e3, 0.5)
    sys.set_dipolar(0, 1, 1.1e-10, (0.3, 0.1, 1.0))
    gen = A.assemble_singlerot(build_components(sys), A.MAS_AXIS, rate, PhaseGrid(n), Rotation(euler=orient))
    one = unit_state(sys)
    rho = state(sys, 0, "x") + one + 0.5 * state(sys, 1, "z")
    fid = acquire_fid(gen, distribute_state(rho, gen.layout), one, 3e-5, 12).values
    assert np.abs(fid - fid[0]).max() < 1e-10 * abs(fid[0])
