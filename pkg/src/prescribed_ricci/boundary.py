"""Boundary geometry of the faces ``t = a`` and ``t = b``.

Boundary fields are arrays with trailing axes ``(*tangential_grid, 2)``; the
last axis selects the face (0: ``t = a``, 1: ``t = b``). Internally the
formulas are evaluated on the full grid with an outward sign that is ``-1`` on
the lower half and ``+1`` on the upper half, then restricted with
:func:`to_boundary`.

Sign convention: ``II_AB = -<nabla_A nu, d_B>`` with ``nu`` the outward unit
normal and ``H = tr_{g^T} II``.
"""

from __future__ import annotations

import numpy as np

from . import operators as op
from . import tensor_core as tc
from .jets import Jet, jeinsum


def to_boundary(arr):
    return np.asarray(arr)[..., [0, -1]]


def _sign(grid):
    return np.asarray(grid.normal_sign, dtype=float)


def _cached(ctx, key, build):
    store = ctx._jets
    if key not in store:
        store[key] = build()
    return store[key]


def _metric(g, ctx):
    return g if isinstance(g, Jet) else tc.metric_jet(g, ctx.grid, order=2)


def induced_metric(g, ctx, full=False):
    G = _metric(g, ctx)
    m = ctx.n - 1
    gt = G.val[:m, :m]
    return gt if full else to_boundary(gt)


def normal_jet(G: Jet, grid) -> Jet:
    """Outward unit normal vector ``nu^k = s g^{kt} / sqrt(g^{tt})`` as a jet."""
    t = grid.n - 1
    gi = G.inv()
    inv_sqrt = gi[t, t].power(-0.5)
    return jeinsum("k,,->k", gi[:, t], inv_sqrt, _sign(grid))


def outward_normal(g, ctx, full=False):
    nu = normal_jet(_metric(g, ctx), ctx.grid).val
    return nu if full else to_boundary(nu)


def second_fundamental_form(g, ctx, full=False):
    """``II_AB = nu_k Gamma^k_AB`` (the conormal ``nu_k`` is proportional to ``dt``)."""
    G = _metric(g, ctx)
    t, m = ctx.n - 1, ctx.n - 1
    gam = tc.christoffel(G.truncate(1)).val
    gtt = tc.inverse(G.val)[t, t]
    second = _sign(ctx.grid) * gam[t, :m, :m] / np.sqrt(gtt)
    return second if full else to_boundary(second)


def mean_curvature(g, ctx, full=False):
    G = _metric(g, ctx)
    m = ctx.n - 1
    second = second_fundamental_form(G, ctx, full=True)
    H = np.einsum("ab...,ab...->...", tc.inverse(G.val[:m, :m]), second)
    return H if full else to_boundary(H)


def dh_linearization(h, ctx, full=False):
    """Linearized mean curvature ``DH(g)h`` on both faces.

    With ``II = -<nabla nu, .>`` this is
    ``D^A w_A - 1/2 tr_{g^T}((nabla_nu h)^T) - 1/2 h(nu, nu) H`` where
    ``w = h(nu, .)^T`` and ``D`` is the connection of ``g^T``.
    """
    H = op.as_field_jet(h, ctx)
    m = ctx.n - 1
    nu = _cached(ctx, "normal", lambda: normal_jet(ctx.G, ctx.grid))
    w = jeinsum("k,kb->b", nu, H)  # order 1
    gt = ctx.g[:m, :m]
    gti = tc.inverse(gt)
    dgt = ctx.G.d[:m, :m, :m]  # d_A g_BC, tangential only
    kk = dgt + dgt.transpose((1, 0, 2) + tuple(range(3, dgt.ndim))) - np.moveaxis(dgt, 0, 2)
    gam_t = 0.5 * np.einsum("cd...,abd...->cab...", gti, kk)
    dw = w.d[:m, :m]  # d_A w_B
    div_w = np.einsum("ab...,ab...->...", gti, dw) - np.einsum("ab...,cab...,c...->...", gti, gam_t, w.val[:m])
    nabla_h = op.nabla(H, ctx).val  # [k, a, b]
    nabla_nu_h = np.einsum("k...,kab...->ab...", nu.val, nabla_h)
    tr_normal = np.einsum("ab...,ab...->...", gti, nabla_nu_h[:m, :m])
    hnn = np.einsum("a...,b...,ab...->...", nu.val, nu.val, H.val)
    H0 = _cached(ctx, "mean_curvature", lambda: mean_curvature(ctx.G, ctx, full=True))
    out = div_w - 0.5 * tr_normal - 0.5 * hnn * H0
    return out if full else to_boundary(out)


def boundary_determinant(gamma, background):
    """Determinant of ``gamma`` relative to the background boundary metric."""
    det = lambda a: np.linalg.det(np.moveaxis(a, (0, 1), (-2, -1)))
    return det(gamma) / det(background)


def conformal_representative(gamma, background):
    """The determinant-one representative ``|gamma|^{-1/(n-1)} gamma`` of the conformal class."""
    gamma = np.asarray(gamma, dtype=float)
    m = gamma.shape[0]
    eig = np.linalg.eigvalsh(np.moveaxis(gamma, (0, 1), (-2, -1)))
    if np.any(eig[..., 0] <= 0):
        raise tc.MetricError("boundary metric is not positive definite")
    return boundary_determinant(gamma, background) ** (-1.0 / m) * gamma


def traceless_tangential(h, ctx, full=False):
    """``h^T - tr_{g^T}(h^T) g^T / (n - 1)``."""
    hv = h.val if isinstance(h, Jet) else np.asarray(h)
    m = ctx.n - 1
    gt = ctx.g[:m, :m]
    tr = np.einsum("ab...,ab...->...", tc.inverse(gt), hv[:m, :m])
    out = hv[:m, :m] - tr / m * gt
    return out if full else to_boundary(out)


def traceless_rows(S, gt):
    """Independent components of a ``g^T``-traceless tangential tensor.

    Diagonal mixed components ``(g^T)^{-1} S`` except the last, then the
    off-diagonal entries normalized by ``sqrt(g_AA g_BB)``;
    ``(n-1)n/2 - 1`` rows in total.
    """
    m = S.shape[0]
    mix = np.einsum("ab...,bc...->ac...", tc.inverse(gt), S)
    rows = [mix[a, a] for a in range(m - 1)]
    for a in range(m):
        for b in range(a + 1, m):
            rows.append(S[a, b] / np.sqrt(np.abs(gt[a, a] * gt[b, b])))
    return np.stack(rows)


def adn_rows(h, ctx, kappa_variant=False, full=False):
    """The three ADN boundary blocks (gauge 1-form, traceless tangential part, ``DH(g)h``)."""
    H = op.as_field_jet(h, ctx)
    first = op.bianchi_jet(H, ctx).val
    if kappa_variant:
        first = first - ctx.kappa_coupling * op.trace_jet(H, ctx).diff().val
    second = traceless_tangential(H, ctx, full=True)
    third = dh_linearization(H, ctx, full=True)
    if full:
        return first, second, third
    return to_boundary(first), to_boundary(second), to_boundary(third)


def stack_boundary_rows(one_form, tangential, scalar, gt):
    """Row layout at a boundary node: ``n`` gauge rows, traceless rows, one scalar row."""
    return np.concatenate([one_form, traceless_rows(tangential, gt), scalar[None]])
