"""Gauged nonlinear residuals and the chord / Newton-Krylov iterations.

The unknown ``h`` is a full symmetric ``(n, n, *grid)`` array. The residual
has four blocks: the interior equation, the gauge 1-form on the boundary, the
conformal class of the induced metric and the mean curvature. Targets are
subtracted so that the root is zero in every block.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import assembly as asm
from . import boundary as bd
from . import operators as op
from . import tensor_core as tc

BLOCKS = ("interior", "gauge", "conformal", "mean_curvature")


class DivergenceError(RuntimeError):
    def __init__(self, msg, report=None, h=None):
        super().__init__(msg)
        self.report = report
        self.h = h


def _boundary_to_full(arr, grid, fill):
    """Expand a boundary field ``(..., *tangential, 2)`` to the full grid using ``fill`` inside."""
    arr = np.asarray(arr, dtype=float)
    if arr.shape[-grid.n :] == grid.shape:
        return arr
    out = np.array(fill, dtype=float, copy=True)
    out[..., 0] = arr[..., 0]
    out[..., -1] = arr[..., 1]
    return out


@dataclass(eq=False)
class ProblemSpec:
    """A prescribed-curvature problem near the background of ``ctx``.

    ``target`` is the perturbation ``r`` (family ``ricci``), the
    contravariant ``rbar`` (``ricci_contravariant``) or ``e``
    (``einstein_type``). ``gamma`` and ``mean_curvature`` are boundary
    targets, either full-grid arrays or boundary arrays with a trailing face
    axis; they default to the background values.
    """

    ctx: op.OperatorContext
    family: str = "ricci"
    target: np.ndarray | None = None
    gamma: np.ndarray | None = None
    mean_curvature: np.ndarray | None = None
    epsilon_cap: float = 1e-2
    metadata: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.ctx.check_family(self.family)
        ctx, grid, n = self.ctx, self.ctx.grid, self.ctx.n
        m = n - 1
        if self.target is None:
            self.target = np.zeros((n, n) + grid.shape)
        self.target = np.asarray(self.target, dtype=float)
        gt = ctx.g[:m, :m]
        self.gamma = gt.copy() if self.gamma is None else _boundary_to_full(self.gamma, grid, gt)
        H0 = bd.mean_curvature(ctx.G, ctx, full=True)
        self.mean_curvature = H0 if self.mean_curvature is None else _boundary_to_full(self.mean_curvature, grid, H0)
        amp = self.amplitude
        if amp > self.epsilon_cap:
            warnings.warn(
                f"perturbation amplitude {amp:.3g} exceeds the admissible cap {self.epsilon_cap:g}", stacklevel=2
            )

    @property
    def scale(self) -> float:
        return self.ctx.tau if self.family == "einstein_type" else self.ctx.shift

    @property
    def amplitude(self) -> float:
        """``||target||_inf / |scale|`` with the g-norm of the target."""
        contra = self.family == "ricci_contravariant"
        return tc.sup_norm(self.target, self.ctx.g, contravariant=contra) / abs(self.scale)

    def target_tensor(self):
        """``R_Lambda``, ``Rbar_Lambda`` or ``E`` as an order-2 jet."""
        if "target" not in self._cache:
            ctx = self.ctx
            pert = ctx.jet(self.target)
            base = ctx.ginv if self.family == "ricci_contravariant" else ctx.G
            self._cache["target"] = base.scale(self.scale) + pert
        return self._cache["target"]

    def frozen(self) -> asm.SparseOperator:
        if "frozen" not in self._cache:
            self._cache["frozen"] = asm.assemble_frozen_linearization(self.ctx, self.family)
        return self._cache["frozen"]


def _gauge(H, spec):
    """The family's gauge 1-form (jet of order 1) evaluated at ``g + h``."""
    return op.gauge_one_form_jet(H, spec.target_tensor(), spec.ctx, spec.family)


def family_curvature_defect(G, spec):
    """Ungauged interior residual: ``Ric_Lambda(g+h) - R_Lambda`` or its family analogue."""
    ctx = spec.ctx
    T = spec.target_tensor().val
    ric = tc.ricci(G)
    L = ctx.lam_shift
    if spec.family == "ricci":
        return ric + L * G.val - T
    if spec.family == "ricci_contravariant":
        gi = tc.inverse(G.val)
        return np.einsum("ia...,ab...,bj...->ij...", gi, ric, gi) + L * gi - T
    k = ctx.kappa
    scal = tc.trace(ric, G.val)
    return ric + k * scal * G.val + L * G.val - T


def residual_gauged(h, spec):
    """The four residual blocks on the full grid.

    Returns a dict with ``interior`` ``(n, n, *grid)``, ``gauge`` ``(n, *grid)``,
    ``conformal`` ``(n-1, n-1, *grid)`` and ``mean_curvature`` ``(*grid)``;
    only boundary nodes of the last three are meaningful.
    """
    ctx, fam = spec.ctx, spec.family
    H = op.as_field_jet(np.asarray(h, dtype=float), ctx)
    G = ctx.G + H
    tc.check_metric(G.val)
    m = ctx.n - 1
    w = _gauge(H, spec)
    lw = op.killing_sym(w, ctx)
    T = spec.target_tensor().val
    if fam == "ricci":
        interior = tc.ricci(G) + ctx.lam_shift * G.val - T - lw
        gauge = -w.val
    elif fam == "ricci_contravariant":
        defect = family_curvature_defect(G, spec)
        interior = tc.lower_both(defect, ctx.g) + lw
        gauge = w.val
    else:
        k, n = ctx.kappa, ctx.n
        tr_e = tc.trace(T, G.val)
        interior = tc.ricci(G) - T + (k * tr_e + ctx.lam_shift) / (1 + k * n) * G.val - lw
        gauge = -w.val
    conformal = bd.conformal_representative(G.val[:m, :m], ctx.g[:m, :m]) - spec.gamma
    mean = bd.mean_curvature(G, ctx, full=True) - spec.mean_curvature
    return {"interior": interior, "gauge": gauge, "conformal": conformal, "mean_curvature": mean}


def residual_rows(blocks, ctx):
    """Pack residual blocks into rows ``(k, *grid)`` matching the assembled operators."""
    m = ctx.n - 1
    brows = bd.stack_boundary_rows(blocks["gauge"], blocks["conformal"], blocks["mean_curvature"], ctx.g[:m, :m])
    return np.where(ctx.grid.boundary_mask, brows, tc.pack_sym(blocks["interior"]))


def residual_vector(h, spec):
    return asm.field_to_vector(residual_rows(residual_gauged(h, spec), spec.ctx), spec.ctx.grid)


def block_norms(vec, ctx):
    """Sup-norms of the four blocks from a residual vector."""
    n = ctx.n
    k = n * (n + 1) // 2
    rows = asm.vector_to_field(vec, k, ctx.grid)
    bmask = ctx.grid.boundary_mask
    m = n - 1
    nt = m * (m + 1) // 2 - 1
    b = rows[:, bmask]
    return {
        "interior": float(np.abs(rows[:, ~bmask]).max(initial=0.0)),
        "gauge": float(np.abs(b[:n]).max(initial=0.0)),
        "conformal": float(np.abs(b[n : n + nt]).max(initial=0.0)),
        "mean_curvature": float(np.abs(b[n + nt]).max(initial=0.0)),
    }


@dataclass
class SolveReport:
    method: str
    family: str
    converged: bool = False
    iterations: int = 0
    history: list = field(default_factory=list)
    gauge_sup: float = float("nan")
    gauge_boundary_sup: float = float("nan")
    geometric_residual: float = float("nan")
    conformal_residual: float = float("nan")
    mean_curvature_residual: float = float("nan")
    monotone: bool = True
    spectral_margins: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _finish(report, h, spec):
    ver = verify_gauge_elimination(h, spec)
    report.gauge_sup = ver["gauge_sup"]
    report.gauge_boundary_sup = ver["gauge_boundary_sup"]
    report.geometric_residual = ver["geometric_residual"]
    report.conformal_residual = ver["conformal_residual"]
    report.mean_curvature_residual = ver["mean_curvature_residual"]
    totals = [max(it.values()) for it in report.history]
    report.monotone = all(b <= a for a, b in zip(totals[2:], totals[3:]))
    return report


def _iterate(spec, h0, tol, max_iter, method, step):
    ctx = spec.ctx
    h = np.zeros((ctx.n, ctx.n) + ctx.grid.shape) if h0 is None else np.array(h0, dtype=float)
    report = SolveReport(method=method, family=spec.family)
    growth = 0
    for it in range(max_iter + 1):
        try:
            F = residual_vector(h, spec)
        except tc.MetricError as exc:
            raise DivergenceError(f"iterate left the metric cone: {exc}", report, h) from exc
        norms = block_norms(F, ctx)
        report.history.append(norms)
        report.iterations = it
        total = max(norms.values())
        if not np.isfinite(total):
            raise DivergenceError("non-finite residual", report, h)
        if total < tol:
            report.converged = True
            return h, _finish(report, h, spec)
        if it > 0 and total > max(report.history[-2].values()):
            growth += 1
            if growth >= 3:
                raise DivergenceError(f"residual grew over 3 consecutive iterates ({total:.3e})", report, h)
        else:
            growth = 0
        if it == max_iter:
            break
        try:
            h = h - asm.vector_to_sym(step(h, F), ctx.grid)
        except tc.MetricError as exc:
            raise DivergenceError(f"iterate left the metric cone: {exc}", report, h) from exc
    return h, _finish(report, h, spec)


def chord_solve(spec, h0=None, tol=1e-9, max_iter=50):
    """Chord iteration ``h <- h - A^{-1} F(h)`` with the frozen linearization ``A``."""
    A = spec.frozen()
    return _iterate(spec, h0, tol, max_iter, "chord", lambda h, F: asm.solve_linear(A, F))


def newton_krylov_solve(spec, h0=None, tol=1e-9, max_iter=30, inner_rtol=1e-10, fd_step=1e-7):
    """Inexact Newton: GMRES on finite-difference Jacobian actions, frozen-LU preconditioned."""
    A = spec.frozen()
    lu = A.factorized()
    grid = spec.ctx.grid
    pre = spla.LinearOperator(A.shape, matvec=lambda r: lu.solve(A.row_scale * r))

    def step(h, F):
        hvec = asm.sym_to_vector(h, grid)

        def jv(v):
            nv = np.linalg.norm(v)
            if nv == 0:
                return np.zeros_like(v)
            eps = fd_step * (1 + np.linalg.norm(hvec)) / nv
            hp = asm.vector_to_sym(hvec + eps * v, grid)
            hm = asm.vector_to_sym(hvec - eps * v, grid)
            return (residual_vector(hp, spec) - residual_vector(hm, spec)) / (2 * eps)

        J = spla.LinearOperator(A.shape, matvec=jv)
        x, info = spla.gmres(J, F, M=pre, rtol=inner_rtol, atol=0.0, restart=30, maxiter=10)
        if info < 0:
            raise asm.LinearSolveError(f"inner GMRES breakdown (info={info})")
        return x

    return _iterate(spec, h0, tol, max_iter, "newton_krylov", step)


def solve(spec, method="chord", **kw):
    if method == "chord":
        return chord_solve(spec, **kw)
    if method == "newton_krylov":
        return newton_krylov_solve(spec, **kw)
    raise ValueError(f"unknown method {method!r}")


def p_elimination_residual(w, h, spec):
    """``P_{g+h} w = B_{g+h}(L_g w) + c w`` with the family's constant ``c``."""
    ctx = spec.ctx
    G = ctx.G + op.as_field_jet(h, ctx)
    W = ctx.jet(w)
    lw = op.killing_sym_jet(W, ctx)
    c = op.family_zeroth_coeff(ctx, spec.family)
    return op.bianchi_jet(lw, ctx, metric=G).val + c * w


def verify_gauge_elimination(h, spec):
    """Gauge 1-form and geometric residuals at a (claimed) root."""
    ctx = spec.ctx
    H = op.as_field_jet(np.asarray(h, dtype=float), ctx)
    G = ctx.G + H
    w = _gauge(H, spec).val
    bmask = ctx.grid.boundary_mask
    blocks = residual_gauged(h, spec)
    contra = spec.family == "ricci_contravariant"
    defect = family_curvature_defect(G, spec)
    pw = p_elimination_residual(w, h, spec)
    return {
        "gauge_sup": tc.sup_norm(w, G.val),
        "gauge_interior_sup": tc.sup_norm(w, G.val, mask=~bmask),
        "gauge_boundary_sup": tc.sup_norm(w, G.val, mask=bmask),
        "p_residual_sup": tc.sup_norm(pw, G.val, mask=~bmask),
        "geometric_residual": tc.sup_norm(defect, G.val, contravariant=contra),
        "geometric_residual_interior": tc.sup_norm(defect, G.val, contravariant=contra, mask=~bmask),
        "conformal_residual": float(np.abs(bd.to_boundary(blocks["conformal"])).max()),
        "mean_curvature_residual": float(np.abs(bd.to_boundary(blocks["mean_curvature"])).max()),
    }
