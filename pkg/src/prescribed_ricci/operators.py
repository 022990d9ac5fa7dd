"""Interior differential operators on 1-forms and symmetric 2-tensors.

Sign conventions: ``Delta = -tr nabla^2`` (non-negative), ``(div u)_i =
-nabla^j u_ji``, ``d* w = -nabla^i w_i``, ``B_g(h) = div h + 1/2 d tr h``.

Every linear operator takes its argument as a :class:`~prescribed_ricci.jets.Jet`
(or a plain grid array, which is differentiated by finite differences) and
returns a plain array. Operators that need the derivative of their output
(e.g. :func:`bianchi` feeding :func:`killing_sym`) have ``*_jet`` variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import tensor_core as tc
from .grid import ChartGrid, ModelGeometry, background_metric
from .jets import Jet, field_jet, jeinsum

FAMILIES = ("ricci", "ricci_contravariant", "einstein_type")


class HypothesisError(ValueError):
    """A hypothesis of the existence theorems (lambda + Lambda != 0, kappa exclusions, ...) fails."""


@dataclass(eq=False)
class OperatorContext:
    """Background metric, its curvature caches and the problem constants."""

    grid: ChartGrid
    lam_shift: float = 0.0
    kappa: float = 0.0
    a: float = 0.0
    metric: np.ndarray | None = None
    einstein_constant: float | None = None
    _jets: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.metric is None:
            self.metric = background_metric(self.geometry, self.grid)
        if self.einstein_constant is None:
            self.einstein_constant = self.geometry.einstein_constant

    @property
    def geometry(self) -> ModelGeometry:
        return self.grid.geometry

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def lam(self) -> float:
        return self.einstein_constant

    @cached_property
    def G(self) -> Jet:
        return tc.metric_jet(self.metric, self.grid)

    @cached_property
    def ginv(self) -> Jet:
        return self.G.inv()

    @cached_property
    def gamma(self) -> Jet:
        return tc.christoffel(self.G)

    @cached_property
    def riemann_up(self) -> np.ndarray:
        return tc.riemann_from(self.gamma)

    @cached_property
    def riem(self) -> np.ndarray:
        """Lowered ``R_ijkl``."""
        return tc.lower_first(self.riemann_up, self.metric)

    @cached_property
    def ric(self) -> np.ndarray:
        return np.einsum("ijil...->jl...", self.riemann_up)

    @cached_property
    def scal(self) -> np.ndarray:
        return tc.trace(self.ric, self.metric)

    @property
    def g(self) -> np.ndarray:
        return self.metric

    @property
    def gi(self) -> np.ndarray:
        return self.ginv.val

    # constants of the three families
    @property
    def shift(self) -> float:
        return self.lam + self.lam_shift

    @property
    def tau(self) -> float:
        return (1 + self.n * self.kappa) * self.lam + self.lam_shift

    @property
    def upsilon(self) -> float:
        n, k, L = self.n, self.kappa, self.lam_shift
        return -2 * k * (2 * (n - 1) * L / (1 + 2 * (n - 1) * k) + n * self.lam)

    @property
    def kappa_coupling(self) -> float:
        """``(n-2) kappa / (2 (1 + kappa n))``."""
        n, k = self.n, self.kappa
        return (n - 2) * k / (2 * (1 + k * n))

    def jet(self, field_arr, order=2) -> Jet:
        return field_jet(field_arr, self.grid, order)

    def check_family(self, family: str):
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")
        n, k = self.n, self.kappa
        if family in ("ricci", "ricci_contravariant"):
            if abs(self.shift) < 1e-12:
                raise HypothesisError("lambda + Lambda must be nonzero")
        else:
            for bad in (-1.0 / n, -1.0 / (2 * (n - 1))):
                if abs(k - bad) < 1e-12:
                    raise HypothesisError(f"kappa = {k} is excluded (-1/n and -1/(2(n-1)))")
            if abs(self.tau) < 1e-12:
                raise HypothesisError("tau = (1 + n kappa) lambda + Lambda must be nonzero")


def as_field_jet(T, ctx, order=2):
    return T if isinstance(T, Jet) else field_jet(T, ctx.grid, order)


# --- generic building blocks -------------------------------------------------


def nabla(T, ctx, gamma=None):
    return tc.covariant_derivative(as_field_jet(T, ctx), ctx.gamma if gamma is None else gamma)


def hessian(T, ctx):
    """``nabla_i nabla_j T`` (indices first) from a jet of order 2."""
    return nabla(nabla(T, ctx), ctx).val


def rough_laplacian(T, ctx):
    """``-g^ij nabla_i nabla_j T``."""
    return _contract_first_two(ctx.gi, hessian(T, ctx))


def _contract_first_two(gi, hess):
    rank = hess.ndim - gi.ndim
    letters = "abcd"[:rank]
    return -np.einsum(f"ij...,ij{letters}...->{letters}...", gi, hess)


def ric_endomorphism(w, ctx):
    """``(Ric w)_i = Ric_i^k w_k``."""
    return np.einsum("ka...,ia...,k...->i...", ctx.gi, ctx.ric, w)


def hodge_laplacian(w, ctx):
    W = as_field_jet(w, ctx)
    return rough_laplacian(W, ctx) + ric_endomorphism(W.val, ctx)


def hodge_laplacian_exterior(w, ctx):
    """``d d* w + d* d w`` built from exterior derivatives (independent of the Weitzenboeck form)."""
    W = as_field_jet(w, ctx)
    codiff = -jeinsum("ij,ij->", ctx.ginv, nabla(W, ctx))  # d* w, order 1
    d_codiff = codiff.diff().val
    dw = W.diff()
    dw = dw - dw.transpose(1, 0)  # (dw)_ij = d_i w_j - d_j w_i, order 1
    grad_dw = nabla(dw, ctx)  # nabla_k (dw)_ij
    codiff_dw = -np.einsum("ki...,kij...->j...", ctx.gi, grad_dw.val)
    return d_codiff + codiff_dw


def ric_action(h, ctx):
    """``(Ric h)_ij = 1/2 (Ric_ik h^k_j + Ric_jk h^k_i)``."""
    t = np.einsum("ik...,ka...,aj...->ij...", ctx.ric, ctx.gi, h)
    return 0.5 * (t + np.swapaxes(t, 0, 1))


def riem_action(h, ctx):
    """``(Riem h)_ij = R_ikjl h^kl``."""
    return np.einsum("ikjl...,ka...,lb...,ab...->ij...", ctx.riem, ctx.gi, ctx.gi, h, optimize=True)


def lichnerowicz_laplacian(h, ctx):
    H = as_field_jet(h, ctx)
    return rough_laplacian(H, ctx) + 2 * (ric_action(H.val, ctx) - riem_action(H.val, ctx))


def divergence_jet(h, ctx, metric=None):
    """``(div h)_i = -g^jk nabla_k h_ji`` with respect to ``metric`` (default: background)."""
    H = as_field_jet(h, ctx)
    if metric is None:
        G, ginv, gamma = ctx.G, ctx.ginv, ctx.gamma
    else:
        G = metric
        ginv, gamma = G.inv(), tc.christoffel(G)
    return -jeinsum("jk,kji->i", ginv, tc.covariant_derivative(H, gamma))


def trace_jet(h, ctx, metric=None):
    H = as_field_jet(h, ctx)
    ginv = ctx.ginv if metric is None else metric.inv()
    return jeinsum("ab,ab->", ginv, H)


def bianchi_jet(h, ctx, metric=None, trace_coeff=0.5):
    """``div h + trace_coeff * d tr h``; ``trace_coeff = 1/2`` is the Bianchi operator."""
    div = divergence_jet(h, ctx, metric)
    dtr = trace_jet(h, ctx, metric).diff()
    return div + dtr.scale(trace_coeff)


def divergence(h, ctx):
    return divergence_jet(h, ctx).val


def bianchi(h, ctx, metric=None):
    return bianchi_jet(h, ctx, metric).val


def killing_sym(w, ctx):
    """``1/2 (nabla_i w_j + nabla_j w_i)``."""
    nw = nabla(w, ctx).val
    return 0.5 * (nw + np.swapaxes(nw, 0, 1))


def killing_sym_jet(w, ctx):
    nw = nabla(w, ctx)
    return (nw + nw.transpose(1, 0)).scale(0.5)


def d_ricci(h, ctx):
    """Linearized Ricci tensor ``1/2 Delta_L h - L B(h)``."""
    H = as_field_jet(h, ctx)
    return 0.5 * lichnerowicz_laplacian(H, ctx) - killing_sym(bianchi_jet(H, ctx), ctx)


def grad_tensor_raised(R, ctx):
    """``nabla_a R_bc`` for a fixed symmetric tensor field."""
    return nabla(R, ctx).val


def t_correction(h, R, ctx):
    """``[T(g,R)h]_j = 1/2 (nabla^k R^l_j + nabla^l R^k_j - nabla_j R^kl) h_kl``."""
    H = h.val if isinstance(h, Jet) else np.asarray(h)
    nR = grad_tensor_raised(R, ctx)  # [a, b, c] = nabla_a R_bc
    comb = nR + np.swapaxes(nR, 0, 1)  # nabla_a R_bj + nabla_b R_aj at [a, b, j]
    comb = comb - np.moveaxis(nR, 0, 2)  # minus nabla_j R_ab
    hup = tc.raise_both(H, ctx.g)
    return 0.5 * np.einsum("abj...,ab...->j...", comb, hup)


def endomorphism(R, w, ctx):
    """``(R w)_j = R_j^k w_k``."""
    return np.einsum("jl...,lk...,k...->j...", R, ctx.gi, w)


def einstein_tensor(g, ctx, kappa=None, lam_shift=None, grid=None):
    """``Ric(g) + kappa R(g) g + Lambda g``."""
    kappa = ctx.kappa if kappa is None else kappa
    lam_shift = ctx.lam_shift if lam_shift is None else lam_shift
    G = tc.metric_jet(g, ctx.grid if grid is None else grid)
    ric = tc.ricci(G)
    scal = tc.trace(ric, G.val)
    return ric + kappa * scal * G.val + lam_shift * G.val


# --- gauge one-forms ---------------------------------------------------------


def gauge_one_form_jet(h, target, ctx, family):
    """The family's gauge 1-form evaluated with metric ``g + h`` as a jet of order 1.

    ``target`` is ``R_Lambda`` (family ``ricci``), the contravariant
    ``Rbar_Lambda`` (``ricci_contravariant``) or ``E`` (``einstein_type``).
    """
    H = as_field_jet(h, ctx)
    G = ctx.G + H
    T = as_field_jet(target, ctx)
    if family == "ricci":
        return bianchi_jet(T, ctx, metric=G).scale(1.0 / ctx.shift)
    if family == "ricci_contravariant":
        lowered = jeinsum("ia,ab,bj->ij", G, T, G)
        return bianchi_jet(lowered, ctx, metric=G).scale(1.0 / ctx.shift)
    if family == "einstein_type":
        n, k = ctx.n, ctx.kappa
        coeff = (2 * k + 1) / (2 * (1 + k * n))
        return bianchi_jet(T, ctx, metric=G, trace_coeff=coeff).scale(1.0 / ctx.tau)
    raise ValueError(f"unknown family {family!r}")


def gauge_one_form(h, target, ctx, family):
    return gauge_one_form_jet(h, target, ctx, family).val


def family_zeroth_coeff(ctx, family):
    """Coefficient ``c`` in ``P_g w = B_g(L w) + c w``."""
    return {"ricci": ctx.shift, "ricci_contravariant": -ctx.shift, "einstein_type": ctx.tau}[family]


def family_critical_constant(ctx, family):
    """``c'`` with ``2 P_g = Delta_H + c'`` on an Einstein background."""
    lam, L, k, n = ctx.lam, ctx.lam_shift, ctx.kappa, ctx.n
    return {
        "ricci": 2 * L,
        "ricci_contravariant": -4 * lam - 2 * L,
        "einstein_type": 2 * k * n * lam + 2 * L,
    }[family]


def p_operator(w, ctx, family):
    """Definition form ``B_g(L w) + c w`` of the gauge-elimination operator."""
    W = as_field_jet(w, ctx)
    return bianchi_jet(killing_sym_jet(W, ctx), ctx).val + family_zeroth_coeff(ctx, family) * W.val


def p_operator_closed(w, ctx, family):
    """Closed form ``1/2 (Delta_H + c') w``."""
    W = as_field_jet(w, ctx)
    return 0.5 * (hodge_laplacian(W, ctx) + family_critical_constant(ctx, family) * W.val)
