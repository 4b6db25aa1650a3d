import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from chks import grid as g
from chks.grid import FaceFlux, Grid, GridError, PreconditionError


def _dense_laplacian(grid: Grid) -> np.ndarray:
    """Brute-force assembly of the mirrored-ghost 5-point stencil."""
    nx, ny = grid.shape
    n = nx * ny
    L = np.zeros((n, n))
    idx = lambda i, j: i * ny + j  # noqa: E731  row-major
    for i in range(nx):
        for j in range(ny):
            for di, dj, h2 in ((1, 0, grid.hx**2), (-1, 0, grid.hx**2), (0, 1, grid.hy**2), (0, -1, grid.hy**2)):
                a, b = i + di, j + dj
                if 0 <= a < nx and 0 <= b < ny:
                    L[idx(i, j), idx(a, b)] += 1.0 / h2
                    L[idx(i, j), idx(i, j)] -= 1.0 / h2
    return L


@pytest.fixture
def grid():
    return Grid(16, 12, 1.0, 1.7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestGrid:
    def test_rejects_bad_sizes(self):
        with pytest.raises(GridError):
            Grid(2, 8)
        with pytest.raises(GridError):
            Grid(8, 8, Lx=0.0)

    def test_spacing_and_area(self, grid):
        assert grid.hx == pytest.approx(1.0 / 16)
        assert grid.hy == pytest.approx(1.7 / 12)
        assert grid.cell_area * 16 * 12 == pytest.approx(grid.area)

    def test_eigenvalues_ordered(self, grid):
        lam = grid.eigenvalues
        assert lam[0, 0] == 0.0
        assert np.all(lam >= 0)
        assert np.all(np.diff(lam, axis=0) >= 0)
        assert np.all(np.diff(lam, axis=1) >= 0)

    def test_check_rejects_nonfinite(self, grid):
        f = grid.constant(1.0)
        f[3, 3] = np.nan
        with pytest.raises(GridError):
            grid.check(f)
        with pytest.raises(GridError):
            grid.check(np.zeros((3, 3)))


class TestTransforms:
    def test_round_trip(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        back = g.idct(g.dct(grid, f))
        assert np.max(np.abs(back - f)) <= 1e-12 * np.max(np.abs(f))

    def test_coefficients_carry_eigenvalues(self, grid, rng):
        c = g.dct(grid, rng.standard_normal(grid.shape))
        assert c.eigenvalues is grid.eigenvalues or np.array_equal(c.eigenvalues, grid.eigenvalues)


class TestLaplacian:
    def test_annihilates_constants(self, grid):
        assert np.max(np.abs(g.laplacian_neumann(grid, grid.constant(7.0)))) == 0.0

    def test_first_cosine_mode(self, grid):
        x, _ = grid.mesh()
        f = np.cos(np.pi * x / grid.Lx)
        lam1 = 2.0 / grid.hx**2 * (1.0 - np.cos(np.pi / grid.nx))
        assert np.allclose(g.laplacian_neumann(grid, f), -lam1 * f, rtol=0, atol=1e-10)

    def test_matches_dense_assembly(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        ref = (_dense_laplacian(grid) @ f.ravel()).reshape(grid.shape)
        assert np.allclose(g.laplacian_neumann(grid, f), ref, rtol=0, atol=1e-10)

    def test_mean_zero(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        out = g.laplacian_neumann(grid, f)
        # brute-force sum of all stencil contributions
        assert abs(np.sum(out)) / out.size <= 1e-12 * np.max(np.abs(f)) / grid.hx**2

    def test_spectral_agrees(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        a, b = g.laplacian_spectral(grid, f), g.laplacian_neumann(grid, f)
        assert np.max(np.abs(a - b)) <= 1e-11 * np.max(np.abs(b))


class TestFluxes:
    def test_constant_has_zero_gradient(self, grid):
        fl = g.face_gradient(grid, grid.constant(3.0))
        assert not fl.x.any() and not fl.y.any()

    def test_linear_profile(self, grid):
        x, _ = grid.mesh()
        fl = g.face_gradient(grid, 2.5 * x)
        assert fl.x.shape == (grid.nx + 1, grid.ny)
        assert np.allclose(fl.x[1:-1], 2.5, atol=1e-12)
        assert not fl.x[0].any() and not fl.x[-1].any()
        assert not fl.y.any()

    def test_divergence_of_gradient(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        lap = g.laplacian_neumann(grid, f)
        div = g.divergence(grid, g.face_gradient(grid, f))
        assert np.max(np.abs(div - lap)) <= 1e-13 * np.max(np.abs(lap))

    def test_divergence_zero_flux(self, grid):
        zero = FaceFlux(np.zeros((grid.nx + 1, grid.ny)), np.zeros((grid.nx, grid.ny + 1)))
        assert not g.divergence(grid, zero).any()

    def test_divergence_mean_zero(self, grid, rng):
        fx = rng.standard_normal((grid.nx + 1, grid.ny))
        fy = rng.standard_normal((grid.nx, grid.ny + 1))
        fx[0] = fx[-1] = 0.0
        fy[:, 0] = fy[:, -1] = 0.0
        div = g.divergence(grid, FaceFlux(fx, fy))
        assert abs(np.sum(div)) <= 1e-12 * np.sum(np.abs(div))

    def test_divergence_rejects_boundary_flux(self, grid):
        fx = np.zeros((grid.nx + 1, grid.ny))
        fx[0, 2] = 1.0
        with pytest.raises(PreconditionError):
            g.divergence(grid, FaceFlux(fx, np.zeros((grid.nx, grid.ny + 1))))

    def test_integration_by_parts(self, grid, rng):
        f, h = rng.standard_normal((2, *grid.shape))
        lhs = g.inner(grid, g.laplacian_neumann(grid, f), h)
        gf, gh = g.face_gradient(grid, f), g.face_gradient(grid, h)
        rhs = -(np.sum(gf.x * gh.x) + np.sum(gf.y * gh.y)) * grid.cell_area
        assert lhs == pytest.approx(rhs, rel=1e-12)


class TestMean:
    def test_constant(self, grid):
        assert g.mean(grid, grid.constant(-2.25)) == pytest.approx(-2.25, rel=1e-15)

    def test_cosine_mode(self, grid):
        x, _ = grid.mesh()
        assert abs(g.mean(grid, np.cos(np.pi * x / grid.Lx))) <= 1e-13

    def test_centering_idempotent(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        assert abs(g.mean(grid, f - g.mean(grid, f))) <= 1e-15


class TestInverseLaplacian:
    def test_zero(self, grid):
        assert not g.inv_neumann_laplacian(grid, np.zeros(grid.shape)).any()

    def test_against_dense_solve(self):
        grid = Grid(8, 8, 1.0, 1.0)
        rng = np.random.default_rng(5)
        gfield = rng.standard_normal(grid.shape)
        gfield -= gfield.mean()
        f = -g.laplacian_neumann(grid, gfield)
        # dense solve on the zero-mean subspace: bordered system
        L = _dense_laplacian(grid)
        n = L.shape[0]
        M = np.zeros((n + 1, n + 1))
        M[:n, :n] = -L
        M[:n, n] = M[n, :n] = 1.0
        dense = np.linalg.solve(M, np.concatenate([f.ravel(), [0.0]]))[:n].reshape(grid.shape)
        out = g.inv_neumann_laplacian(grid, f)
        assert np.max(np.abs(out - dense)) <= 1e-10 * np.max(np.abs(dense))
        assert np.max(np.abs(out - gfield)) <= 1e-10 * np.max(np.abs(gfield))

    def test_eigenmode(self, grid):
        x, _ = grid.mesh()
        f = np.cos(np.pi * x / grid.Lx)
        lam_x = grid.eigenvalues[1, 0]
        assert np.allclose(g.inv_neumann_laplacian(grid, f), f / lam_x, atol=1e-12)

    def test_rejects_nonzero_mean(self, grid):
        with pytest.raises(PreconditionError):
            g.inv_neumann_laplacian(grid, grid.constant(1.0))


class TestFractionalPowers:
    def test_constant_fixed(self, grid):
        for s in (-0.5, 0.25, 1.0, 3.0):
            assert np.allclose(g.fractional_apply(grid, grid.constant(4.0), s), 4.0, atol=1e-13)

    def test_first_power_is_A(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        ref = f - g.laplacian_neumann(grid, f)
        out = g.fractional_apply(grid, f, 1.0)
        assert np.max(np.abs(out - ref)) <= 1e-11 * np.max(np.abs(ref))

    def test_zero_power_identity(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        assert np.allclose(g.fractional_apply(grid, f, 0.0), f, atol=1e-13)

    def test_half_twice(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        twice = g.fractional_apply(grid, g.fractional_apply(grid, f, 0.5), 0.5)
        ref = g.apply_A(grid, f)
        assert np.max(np.abs(twice - ref)) <= 1e-11 * np.max(np.abs(ref))

    @settings(max_examples=25, deadline=None)
    @given(st.floats(-1, 1), st.floats(-1, 1))
    def test_semigroup(self, s, t):
        grid = Grid(8, 8, 1.0, 1.0)
        f = np.random.default_rng(0).standard_normal(grid.shape)
        a = g.fractional_apply(grid, g.fractional_apply(grid, f, s), t)
        b = g.fractional_apply(grid, f, s + t)
        assert np.max(np.abs(a - b)) <= 1e-11 * max(np.max(np.abs(b)), 1.0)


class TestNorms:
    def test_frac_quarter_of_constant(self):
        grid = Grid(8, 8, 1.0, 1.0)
        assert g.frac_norm(grid, grid.constant(-3.0), 0.25) == pytest.approx(3.0, rel=1e-13)

    def test_dual_star_eigenmode(self, grid):
        x, _ = grid.mesh()
        f = np.cos(np.pi * x / grid.Lx)
        via_N = g.inner(grid, f, g.inv_neumann_laplacian(grid, f))
        assert g.dual_star_norm(grid, f) ** 2 == pytest.approx(via_N, rel=1e-12)
        lam_x = grid.eigenvalues[1, 0]
        assert g.dual_star_norm(grid, f) ** 2 == pytest.approx(g.l2_norm(grid, f) ** 2 / lam_x, rel=1e-12)

    def test_dual_star_bound_attained(self):
        grid = Grid(16, 16, 1.0, 1.0)
        x, _ = grid.mesh()
        f = np.cos(np.pi * x / grid.Lx)
        ratio = g.dual_star_norm(grid, f) / g.l2_norm(grid, f)
        assert ratio == pytest.approx(grid.lambda1 ** -0.5, rel=1e-12)

    def test_dual_star_poincare(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        f -= f.mean()
        assert g.dual_star_norm(grid, f) <= g.l2_norm(grid, f) / np.sqrt(grid.lambda1) * (1 + 1e-12)

    def test_v_norm_quadrature(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        gf = g.face_gradient(grid, f)
        brute = np.sum(f**2) * grid.cell_area + (np.sum(gf.x**2) + np.sum(gf.y**2)) * grid.cell_area
        assert g.v_norm(grid, f) ** 2 == pytest.approx(brute, rel=1e-13)

    def test_report(self, grid, rng):
        f = rng.standard_normal(grid.shape)
        rep = g.norms(grid, f)
        assert rep.L2 == pytest.approx(g.l2_norm(grid, f))
        assert rep.Linf == pytest.approx(np.max(np.abs(f)))
        assert rep.mean == pytest.approx(f.mean())
        assert rep.dual_star == pytest.approx(g.dual_star_norm(grid, f - f.mean()))
        assert set(rep.frac) == {0.25, 0.5, 0.75}

    @pytest.mark.parametrize("norm", [
        lambda gr, f: g.lp_norm(gr, f, 1),
        lambda gr, f: g.lp_norm(gr, f, 3),
        lambda gr, f: g.lp_norm(gr, f, 6),
        g.l2_norm,
        g.v_norm,
        g.h2_norm,
        lambda gr, f: g.frac_norm(gr, f, 0.75),
    ])
    def test_homogeneous_and_triangle(self, grid, rng, norm):
        for _ in range(20):
            a, b = rng.standard_normal((2, *grid.shape))
            c = rng.normal()
            assert norm(grid, c * a) == pytest.approx(abs(c) * norm(grid, a), rel=1e-12)
            assert norm(grid, a + b) <= norm(grid, a) + norm(grid, b) + 1e-12


class TestSnapshots:
    def test_round_trip_bit_exact(self, grid, rng, tmp_path):
        f = rng.standard_normal(grid.shape)
        path = tmp_path / "f.chks"
        g.write_snapshot(path, grid, f, t=1.25)
        grid2, f2, t = g.read_snapshot(path)
        assert grid2 == grid and t == 1.25
        assert f2.tobytes() == f.tobytes()

    def test_header_layout(self, grid, tmp_path):
        path = tmp_path / "f.chks"
        g.write_snapshot(path, grid, grid.constant(1.0))
        raw = path.read_bytes()
        assert raw[:4] == b"CHKS"
        assert len(raw) == 4 + 3 * 4 + 3 * 8 + 8 * grid.nx * grid.ny

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.chks"
        path.write_bytes(b"NOPE" + bytes(40))
        with pytest.raises(GridError):
            g.read_snapshot(path)
