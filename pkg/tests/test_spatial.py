import numpy as np
import pytest
import scipy.linalg

from fpmr.spatial import (
    CoordinateGrid, PhaseGrid, fd_matrix, fornberg_weights, fourier_diff,
    motion_generator, phase_diff, rotor_generator, spherical_grid,
)

rng = np.random.default_rng(5)


def test_fourier_diff_n4_row():
    assert np.allclose(fourier_diff(4).toarray()[0], [0, 0.5, 0, -0.5], atol=1e-15)


@pytest.mark.parametrize("n", [15, 16, 32])
def test_fourier_diff_modes(n):
    phi = PhaseGrid(n).points
    d = fourier_diff(n)
    for k in range(-((n - 1) // 2), (n - 1) // 2 + 1):
        f = np.exp(1j * k * phi)
        assert np.abs(d @ f - 1j * k * f).max() < 1e-12


def test_fourier_diff_sin_cos_and_constants():
    phi = PhaseGrid(16).points
    d = fourier_diff(16)
    assert np.abs(d @ np.sin(phi) - np.cos(phi)).max() < 1e-12
    for n in (2, 3, 8, 15):
        m = fourier_diff(n).toarray()
        assert np.abs(m @ np.ones(n)).max() < 1e-13
        assert np.abs(m + m.T).max() == 0


def test_fourier_diff_rejects_tiny_grid():
    with pytest.raises(ValueError):
        fourier_diff(1)
    assert phase_diff(1).toarray().tolist() == [[0]]


@pytest.mark.parametrize("m", [1, 7])
def test_shift_property_odd(m):
    n = 15
    p = scipy.linalg.expm(fourier_diff(n).toarray() * 2 * np.pi * m / n)
    assert np.abs(p - np.roll(np.eye(n), -m, axis=0)).max() < 1e-10


def test_shift_property_even_without_nyquist():
    n, m = 16, 3
    f = rng.normal(size=n)
    c = np.fft.fft(f)
    c[n // 2] = 0
    f = np.fft.ifft(c)
    out = scipy.linalg.expm(rotor_generator(PhaseGrid(n), 1.0).toarray() * 2 * np.pi * m / n) @ f
    assert np.abs(out - np.roll(f, -m)).max() < 1e-10


def test_rotor_generator_zero_rate():
    assert rotor_generator(PhaseGrid(8), 0.0).count_nonzero() == 0


def test_fd_interior_stencils():
    g = CoordinateGrid.uniform(1.0, 11, "absorptive")
    h = g.points[1] - g.points[0]
    d1 = fd_matrix(g, 1, 3).toarray()
    d2 = fd_matrix(g, 2, 3).toarray()
    assert np.allclose(d1[5, 4:7] * 2 * h, [-1, 0, 1], atol=1e-12)
    assert np.allclose(d2[5, 4:7] * h * h, [1, -2, 1], atol=1e-10)


def test_fornberg_polynomials_nonuniform():
    x = np.sort(rng.uniform(-1, 1, 5))
    w = fornberg_weights(0.1, x, 2)
    for deg in range(5):
        f = x ** deg
        for m in range(3):
            exact = 0.0 if deg < m else np.prod(range(deg, deg - m, -1)) * 0.1 ** (deg - m)
            assert abs(w[m] @ f - exact) < 1e-10


def test_fd_exact_on_polynomials():
    r = np.random.default_rng(11)
    x = np.linspace(0, 1, 30) + r.uniform(-0.3, 0.3, 30) / 29
    g = CoordinateGrid(x, "reflective")
    for order in (1, 2):
        d = fd_matrix(g, order, 5)
        for deg in range(5):
            exact = deg * x ** (deg - 1) if order == 1 else deg * (deg - 1) * x ** max(deg - 2, 0)
            assert np.abs(d @ x ** deg - exact).max() < 1e-10 * max(1, np.abs(exact).max())


def test_periodic_flow_column_sums_and_diffusion_constant():
    g = CoordinateGrid.uniform(0.015, 500, "periodic")
    flow = motion_generator(g, "flow", 1e-3).toarray()
    # entries are ~1e-3/h; compare with the matrix scale
    assert np.abs(flow.sum(axis=0)).max() < 1e-12 * np.abs(flow).max()
    diff = motion_generator(g, "diffusion", 2e-9)
    assert np.abs(diff @ np.ones(500)).max() < 1e-12 * abs(diff).max()


def test_diffusion_negative_semidefinite():
    g = CoordinateGrid.uniform(1.0, 40, "periodic")
    ev = np.linalg.eigvals(motion_generator(g, "diffusion", 1.0).toarray())
    assert ev.real.max() <= 1e-12 * np.abs(ev).max()


def test_constant_velocity_field_is_flow():
    g = CoordinateGrid.uniform(1.0, 20, "absorptive")
    a = motion_generator(g, "velocity_field", np.full(20, 0.3))
    b = motion_generator(g, "flow", 0.3)
    assert abs(a - b).max() < 1e-12 * abs(b).max()


def test_fd_matches_spectral_with_order():
    errs = []
    for n in (16, 32, 64):
        g = CoordinateGrid.uniform(2 * np.pi, n, "periodic", start=0.0)
        x = g.points
        d = fd_matrix(g, 1, 5)
        errs.append(np.abs(d @ np.sin(2 * x) - fourier_diff(n) @ np.sin(2 * x)).max())
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert orders.min() >= 4 - 0.2


def test_fd_boundaries():
    x = CoordinateGrid.uniform(1.0, 10, "absorptive").points
    absorb = fd_matrix(CoordinateGrid(x, "absorptive"), 2, 3).toarray()
    reflect = fd_matrix(CoordinateGrid(x, "reflective"), 1, 3).toarray()
    # ghost points outside are zero: row 0 only sees the grid
    assert absorb[0, :2] @ np.ones(2) != 0
    assert np.abs(reflect @ x - 1).max() < 1e-12
    with pytest.raises(ValueError):
        CoordinateGrid(x, "sticky")
    with pytest.raises(ValueError):
        CoordinateGrid(x[::-1])


def test_spherical_grid_basics():
    g1 = spherical_grid("two_angle_spiral", 1)
    assert np.array_equal(g1.orientations, np.zeros((1, 3))) and g1.weights[0] == 1.0
    for n in (2, 17, 300):
        assert abs(spherical_grid("two_angle_spiral", n).weights.sum() - 1) < 1e-15
    u = spherical_grid("user_list", orientations=[[0, 0, 0], [1, 1, 1]], weights=[1, 3])
    assert np.allclose(u.weights, [0.25, 0.75])
    with pytest.raises(ValueError):
        spherical_grid("lebedev", 5)


def test_spiral_second_moment():
    # <P2(cos beta)^2> over the sphere is 1/5
    g = spherical_grid("two_angle_spiral", 2000)
    p2 = (3 * np.cos(g.orientations[:, 1]) ** 2 - 1) / 2
    assert abs(g.weights @ p2 ** 2 - 0.2) < 1e-3
    assert abs(g.weights @ p2) < 1e-3


def test_isotropic_powder_average_independent_of_count():
    vals = [spherical_grid("two_angle_spiral", n).weights @ np.full(n, 3.7) for n in (1, 10, 333)]
    assert np.ptp(vals) < 1e-12
