import numpy as np
import pytest
import scipy.sparse as sp

from prescribed_ricci import assembly as asm
from prescribed_ricci import operators as op
from prescribed_ricci import oracles as orc
from prescribed_ricci import tensor_core as tc

from conftest import make_ctx

RES = (8, 8, 9)


def interior_rows(A):
    return ~A.row_kind


def sym_vec(h, ctx):
    return asm.sym_to_vector(h, ctx.grid)


def test_layout_roundtrip_and_order(rng):
    ctx = make_ctx("flat_slab", RES)
    h = orc.smooth_direction(ctx.grid, rng)
    v = sym_vec(h, ctx)
    assert v.size == 6 * ctx.grid.size
    assert np.array_equal(asm.vector_to_sym(v, ctx.grid), h)
    order = asm.node_order(ctx.grid)
    assert np.array_equal(np.sort(order), np.arange(ctx.grid.size))
    n_inner = ctx.grid.interior_mask.sum()
    assert not ctx.grid.boundary_mask.ravel()[order[:n_inner]].any()


@pytest.mark.parametrize("kind", ["flat_slab", "hyperbolic_slab", "spherical_band"])
def test_L_c_shape_and_matrix_free_agreement(kind, rng):
    ctx = make_ctx(kind, RES)
    A = asm.assemble_L_c(ctx, 1.5)
    N = 6 * ctx.grid.size
    assert A.shape == (N, N)
    assert A.row_kind.sum() == 6 * ctx.grid.boundary_mask.sum()
    h = orc.smooth_direction(ctx.grid, rng)
    mf = asm.field_to_vector(asm.apply_L_c(h, ctx, 1.5), ctx.grid)
    assert np.abs(A @ sym_vec(h, ctx) - mf).max() / np.abs(mf).max() < 1e-12


def test_L_c_flat_is_componentwise_laplacian():
    ctx = make_ctx("flat_slab", RES)
    c = 0.7
    A = asm.assemble_L_c(ctx, c)
    h = np.zeros((3, 3) + ctx.grid.shape)
    h[0, 2] = h[2, 0] = np.sin(np.pi * ctx.grid.t) * np.cos(2 * np.pi * ctx.grid.coords[1])
    out = asm.vector_to_sym(A @ sym_vec(h, ctx), ctx.grid)
    lap = op.rough_laplacian(h[0, 2], ctx) + c * h[0, 2]
    mask = ctx.grid.interior_mask
    assert np.abs(out[0, 2][mask] - lap[mask]).max() < 1e-10


def test_L_c_on_conformal_field():
    ctx = make_ctx("hyperbolic_slab", (8, 8, 33))
    c = 2.0
    u = np.sin(np.pi * ctx.grid.t) + 0.5
    rows = asm.apply_L_c(u * ctx.g, ctx, c)
    out = tc.unpack_sym(rows, 3)
    expected = (op.rough_laplacian(u, ctx) + c * u) * ctx.g
    assert tc.sup_norm(out - expected, ctx.g, mask=ctx.grid.interior_mask) < 1e-3


def test_dirichlet_hodge():
    ctx = make_ctx("flat_slab", RES)
    A = asm.assemble_dirichlet_hodge(ctx, 0.0)
    assert A.shape == (3 * ctx.grid.size,) * 2
    w = orc._test_one_form(ctx.grid)
    w[..., 0] = 0
    w[..., -1] = 0
    out = A @ asm.field_to_vector(w.reshape(3, -1).reshape((3,) + ctx.grid.shape), ctx.grid)
    assert np.all(out[A.row_kind] == 0)


def test_dirichlet_hodge_singular_at_minus_pi_squared():
    ctx = make_ctx("flat_slab", (8, 8, 33))
    A = asm.assemble_dirichlet_hodge(ctx, 0.0)
    mu = asm.smallest_eigenvalues(A, k=3).values.real.min()
    assert abs(mu - np.pi**2) < 1e-3
    shifted = A.shifted(-np.pi**2)
    near = asm.smallest_eigenvalues(shifted, k=1, shift=0.1).values[0].real
    assert abs(near) < 1e-3


def test_P_einstein():
    ctx0 = make_ctx("hyperbolic_slab", RES, kappa=0.0, lam_shift=1.0)
    P = asm.assemble_P_einstein(ctx0)
    L = asm.assemble_L_c(ctx0, 2.0)
    assert abs(P.matrix - L.matrix).max() < 1e-12
    ctx = make_ctx("flat_slab", (8, 8, 17), kappa=0.3, lam_shift=1.0)
    u = np.sin(np.pi * ctx.grid.t) + 0.5
    k = 0.3
    p = (1 + 4 * k) * op.rough_laplacian(u, ctx) + 2 * u
    out = asm.p_einstein_interior(u * ctx.g, ctx)
    assert np.abs(out - p / (1 + 4 * k) * ctx.g)[..., ctx.grid.interior_mask].max() < 1e-10
    h = np.zeros((3, 3) + ctx.grid.shape)
    h[0, 1] = h[1, 0] = np.sin(np.pi * ctx.grid.t)
    expected = op.lichnerowicz_laplacian(h, ctx) + (2 * k * 3 * ctx.lam + 2) * h
    assert np.allclose(asm.p_einstein_interior(h, ctx), expected, atol=1e-12)
    with pytest.raises(op.HypothesisError):
        asm.assemble_P_einstein(make_ctx("flat_slab", RES, kappa=-1 / 3))


def test_frozen_linearizations():
    ctx = make_ctx("hyperbolic_slab", RES, lam_shift=1.0)
    F1 = asm.assemble_frozen_linearization(ctx, "ricci")
    L = asm.assemble_L_c(ctx, 2.0)
    inner = interior_rows(F1)
    assert abs(F1.matrix[inner] - 0.5 * L.matrix[inner]).max() < 1e-12
    assert abs(F1.matrix[~inner] - L.matrix[~inner]).max() < 1e-12
    F3 = asm.assemble_frozen_linearization(make_ctx("hyperbolic_slab", RES, kappa=0.0, lam_shift=1.0), "einstein_type")
    assert abs(F3.matrix - F1.matrix).max() < 1e-12
    band = make_ctx("spherical_band", (8, 8, 33), lam_shift=1.0)
    h = orc.smooth_direction(band.grid, np.random.default_rng(5))
    F2 = asm.frozen_interior(h, band, "ricci_contravariant")
    crit = 4 * band.lam + 2 * band.lam_shift
    expected = 0.5 * (op.lichnerowicz_laplacian(h, band) - crit * h)
    assert tc.sup_norm(F2 - expected, band.g) / tc.sup_norm(expected, band.g) < 1e-3


def test_eigenvalues_of_diagonal_and_shift():
    d = np.array([3.0, -1.0, 7.0, 0.5, 2.0])
    res = asm.smallest_eigenvalues(sp.diags(d), k=5)
    assert np.allclose(np.sort(res.values.real), np.sort(d))
    assert np.all(res.residuals < 1e-12)
    res2 = asm.smallest_eigenvalues(sp.diags(d + 4.0), k=5, shift=4.0)
    assert np.allclose(np.sort(res2.values.real), np.sort(d + 4.0))
    assert asm.smallest_eigenvalues(sp.diags(d), k=0).values.size == 0


def test_spectral_margin():
    ctx = make_ctx("flat_slab", (8, 8, 17), lam_shift=1.0)
    m = asm.spectral_margin(ctx, "ricci")
    assert not m["flagged"]
    assert all(v["distance"] > 0 for v in m["operators"].values())
    mu = asm.smallest_eigenvalues(asm.assemble_dirichlet_hodge(ctx, 0.0), k=1).values[0].real
    tuned = make_ctx("flat_slab", (8, 8, 17), lam_shift=-mu / 2)
    assert asm.spectral_margin(tuned, "ricci")["flagged"]
    with pytest.raises(op.HypothesisError):
        asm.spectral_margin(make_ctx("hyperbolic_slab", RES, lam_shift=2.0), "ricci")


def test_solve_linear(rng):
    ctx = make_ctx("spherical_band", RES, lam_shift=1.0)
    A = asm.assemble_frozen_linearization(ctx, "ricci")
    x = rng.normal(size=A.shape[0])
    sol = asm.solve_linear(A, A @ x)
    assert np.linalg.norm(sol - x) / np.linalg.norm(x) < 1e-10
    assert np.all(asm.solve_linear(A, np.zeros_like(x)) == 0)
    krylov = asm.solve_linear(A, A @ x, cap=10, rtol=1e-12)
    assert np.linalg.norm(krylov - x) / np.linalg.norm(x) < 1e-8


def test_dirichlet_hodge_solve_converges():
    errs = []
    for N in (17, 33, 65):
        ctx = make_ctx("flat_slab", (8, 8, N))
        A = asm.assemble_dirichlet_hodge(ctx, 0.0)
        exact = np.zeros((3,) + ctx.grid.shape)
        exact[2] = np.sin(np.pi * ctx.grid.t)
        exact[0] = 0.5 * exact[2]
        rhs = np.pi**2 * exact
        rhs[..., 0] = 0
        rhs[..., -1] = 0
        sol = asm.solve_linear(A, asm.field_to_vector(rhs, ctx.grid))
        errs.append(np.abs(asm.vector_to_field(sol, 3, ctx.grid) - exact).max())
    orders = orc.observed_orders(errs, (17, 33, 65))
    assert orc.order_ok(orders, 4)


def test_coo_roundtrip(tmp_path):
    ctx = make_ctx("flat_slab", RES)
    A = asm.assemble_dirichlet_hodge(ctx, 1.0)
    path = tmp_path / "op.coo"
    A.export_coo(path)
    header = path.read_text().splitlines()[0].split()
    assert [int(x) for x in header] == [A.shape[0], A.shape[1], sp.coo_matrix(A.matrix).nnz]
    B = asm.read_coo(path)
    assert abs(B - A.matrix).max() == 0
