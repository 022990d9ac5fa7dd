import numpy as np
import pytest

from prescribed_ricci import operators as op
from prescribed_ricci import oracles as orc
from prescribed_ricci import solvers as sv
from prescribed_ricci import tensor_core as tc

from conftest import make_ctx


def inner(ctx):
    return ctx.grid.interior_mask


def radial(ctx, f):
    a, b = ctx.grid.geometry.interval
    return f((ctx.grid.t - a) / (b - a))


def test_scalar_laplacian_sign_and_symbol():
    ctx = make_ctx("flat_slab", (16, 16, 33))
    t, x = ctx.grid.t, ctx.grid.coords[0]
    assert np.abs(op.rough_laplacian(np.full(ctx.grid.shape, 2.0), ctx)).max() < 1e-10
    u = np.sin(np.pi * t)
    assert np.abs(op.rough_laplacian(u, ctx) - np.pi**2 * u)[inner(ctx)].max() < 1e-4
    v = np.cos(2 * np.pi * x)
    assert np.abs(op.rough_laplacian(v, ctx) - 4 * np.pi**2 * v).max() < 0.05


def test_hodge_laplacian_flat_and_hyperbolic():
    ctx = make_ctx("flat_slab", (8, 8, 33))
    w = np.zeros((3,) + ctx.grid.shape)
    w[2] = np.sin(np.pi * ctx.grid.t)
    assert np.abs(op.hodge_laplacian(w, ctx) - np.pi**2 * w)[:, inner(ctx)].max() < 1e-4
    const = np.ones((3,) + ctx.grid.shape)
    assert np.abs(op.hodge_laplacian(const, ctx)).max() < 1e-10
    hyp = make_ctx("hyperbolic_slab", (8, 8, 17))
    w = orc._test_one_form(hyp.grid)
    diff = op.hodge_laplacian(w, hyp) - op.rough_laplacian(w, hyp)
    assert tc.sup_norm(diff + 2 * w, hyp.g) < 1e-3


def test_lichnerowicz_on_conformal_fields():
    ctx = make_ctx("spherical_band", (8, 8, 33))
    u = radial(ctx, lambda s: np.sin(np.pi * s) + 0.5)
    lhs = op.lichnerowicz_laplacian(u * ctx.g, ctx)
    rhs = op.rough_laplacian(u, ctx) * ctx.g
    assert tc.sup_norm(lhs - rhs, ctx.g, mask=inner(ctx)) < 5e-3
    flat = make_ctx("flat_slab", (8, 8, 17))
    h = np.zeros((3, 3) + flat.grid.shape)
    h[0, 1] = h[1, 0] = np.sin(np.pi * flat.grid.t)
    assert np.allclose(op.lichnerowicz_laplacian(h, flat), op.rough_laplacian(h, flat), atol=1e-10)


def test_bianchi_operator_examples():
    ctx = make_ctx("hyperbolic_slab", (8, 8, 33))
    assert tc.sup_norm(op.bianchi(3.0 * ctx.g, ctx), ctx.g) < 1e-10
    u = radial(ctx, lambda s: s**2 * (1 - s))
    du = np.zeros((3,) + ctx.grid.shape)
    du[2] = ctx.grid.diff(u, 2)
    # (n - 2) / 2 du with n = 3; ug and u are differentiated separately
    assert tc.sup_norm(op.bianchi(u * ctx.g, ctx) - 0.5 * du, ctx.g) < 1e-3


def test_killing_operator_examples():
    ctx = make_ctx("hyperbolic_slab", (8, 8, 33))
    f = radial(ctx, lambda s: np.sin(np.pi * s))
    df = np.stack([ctx.grid.diff(f, a) for a in range(3)])
    hess = op.hessian(f, ctx)
    assert np.abs(op.killing_sym(df, ctx) - hess).max() / np.abs(hess).max() < 1e-3
    assert np.abs(op.killing_sym(np.zeros_like(df), ctx)).max() == 0
    flat = make_ctx("flat_slab", (8, 8, 9))
    dx = np.zeros((3,) + flat.grid.shape)
    dx[0] = 1.0
    assert np.abs(op.killing_sym(dx, flat)).max() < 1e-12


def test_killing_is_divergence_adjoint():
    ctx = make_ctx("hyperbolic_slab", (8, 8, 33))
    bump = radial(ctx, lambda s: (np.sin(np.pi * s) ** 4))
    w = orc._test_one_form(ctx.grid) * bump
    h = np.zeros((3, 3) + ctx.grid.shape)
    h[0, 2] = h[2, 0] = bump * np.cos(2 * np.pi * ctx.grid.coords[1])
    h[1, 1] = bump
    lhs = tc.integrate(tc.inner(op.killing_sym(w, ctx), h, ctx.g), ctx.g, ctx.grid)
    divh = op.divergence(h, ctx)
    rhs = tc.integrate(np.einsum("ij...,i...,j...->...", ctx.gi, w, divh), ctx.g, ctx.grid)
    assert lhs == pytest.approx(rhs, rel=1e-4)


def test_d_ricci_matches_fd():
    ctx = make_ctx("spherical_band", (8, 8, 17))
    v = orc.smooth_direction(ctx.grid, np.random.default_rng(3))
    eps = 1e-4 / np.abs(v).max()
    fd = orc.richardson_derivative(lambda e: tc.ricci(tc.metric_jet(ctx.g + e * v, ctx.grid)), eps)
    an = op.d_ricci(v, ctx)
    assert np.abs(fd - an).max() / np.abs(an).max() < 1e-6
    assert np.abs(op.d_ricci(np.zeros_like(v), ctx)).max() == 0


def test_t_correction_parallel_target_vanishes():
    ctx = make_ctx("hyperbolic_slab", (8, 8, 17))
    v = orc.smooth_direction(ctx.grid, np.random.default_rng(1))
    R = (ctx.lam + ctx.lam_shift) * ctx.g
    assert tc.sup_norm(op.t_correction(v, R, ctx), ctx.g) < 1e-10


def test_gauge_one_form_background_and_einstein():
    for fam in op.FAMILIES:
        ctx = make_ctx("hyperbolic_slab", (8, 8, 17), kappa=0.3 if fam == "einstein_type" else 0.0)
        zero = np.zeros((3, 3) + ctx.grid.shape)
        w = op.gauge_one_form(zero, sv.ProblemSpec(ctx, fam).target_tensor(), ctx, fam)
        assert tc.sup_norm(w, ctx.g) < 1e-10
    ctx = make_ctx("spherical_band", (8, 8, 33), kappa=0.3)
    E = op.einstein_tensor(ctx.g, ctx)
    w = op.gauge_one_form(np.zeros_like(E), E, ctx, "einstein_type")
    assert tc.sup_norm(w, ctx.g, mask=inner(ctx)) < 1e-3


def test_p_operator_flat_mode():
    ctx = make_ctx("flat_slab", (8, 8, 33), lam_shift=1.0)
    w = np.zeros((3,) + ctx.grid.shape)
    w[2] = np.sin(np.pi * ctx.grid.t)
    P = op.p_operator(w, ctx, "ricci")
    assert np.abs(P - 0.5 * (np.pi**2 + 2) * w)[:, inner(ctx)].max() < 1e-4
    assert np.abs(op.p_operator(0 * w, ctx, "ricci")).max() == 0


@pytest.mark.parametrize("kind", ["hyperbolic_slab", "spherical_band"])
def test_p_closed_form_converges(kind):
    errs = []
    for N in (9, 17, 33):
        ctx = make_ctx(kind, (8, 8, N), lam_shift=1.0)
        w = orc._test_one_form(ctx.grid)
        d = op.p_operator(w, ctx, "ricci") - op.p_operator_closed(w, ctx, "ricci")
        errs.append(tc.sup_norm(d, ctx.g, mask=inner(ctx)))
    assert orc.order_ok(orc.observed_orders(errs, (9, 17, 33)), 4)


def test_einstein_tensor_examples():
    ctx = make_ctx("hyperbolic_slab", (8, 8, 33), kappa=0.3, lam_shift=1.0)
    E = op.einstein_tensor(ctx.g, ctx)
    assert tc.sup_norm(E - ctx.tau * ctx.g, ctx.g) < 1e-3
    flat = make_ctx("flat_slab", kappa=-0.5, lam_shift=0.0)
    assert np.abs(op.einstein_tensor(flat.g, flat)).max() < 1e-12
    pert = orc.perturbed_metric(ctx, 1e-2, seed=2)
    Ep = op.einstein_tensor(pert, ctx)
    scal = tc.scalar_curvature(tc.metric_jet(pert, ctx.grid))
    assert np.abs(tc.trace(Ep, pert) - ((1 + 3 * 0.3) * scal + 3 * 1.0)).max() < 1e-10


def test_family_hypotheses():
    with pytest.raises(op.HypothesisError):
        make_ctx("hyperbolic_slab", lam_shift=2.0).check_family("ricci")
    with pytest.raises(op.HypothesisError):
        make_ctx("flat_slab", kappa=-0.25).check_family("einstein_type")
    with pytest.raises(op.HypothesisError):
        make_ctx("flat_slab", kappa=0.2, lam_shift=0.0).check_family("einstein_type")
    with pytest.raises(ValueError):
        make_ctx().check_family("nonsense")
