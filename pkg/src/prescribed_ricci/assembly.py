"""Sparse assembly of the linear boundary-value operators, linear solves and spectra.

Every operator is assembled from its pointwise jet formula: the formula is
evaluated on unit basis jets (one component, one derivative slot) to obtain
its coefficient fields, and each coefficient multiplies the matching sparse
finite-difference matrix. The assembled matrix therefore reproduces the
matrix-free evaluation to round-off.

Unknown ordering: node-major, component-minor, with interior nodes first (C
order) followed by the ``t = a`` face and then the ``t = b`` face. Symmetric
2-tensors use the packed components ``tensor_core.sym_pairs(n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import boundary as bd
from . import operators as op
from . import tensor_core as tc
from .jets import Jet

DIRECT_SOLVE_CAP = 200_000


class SpectrumError(RuntimeError):
    """The shifted matrix could not be factorized (shift too close to the spectrum)."""


class LinearSolveError(RuntimeError):
    def __init__(self, msg, history=()):
        super().__init__(msg)
        self.history = list(history)


def node_order(grid) -> np.ndarray:
    idx = np.arange(grid.size).reshape(grid.shape)
    return np.concatenate([idx[grid.interior_mask].ravel(), grid.boundary_node_index])


def field_to_vector(packed, grid):
    """``(k, *grid)`` component array to the solver's unknown ordering."""
    k = packed.shape[0]
    flat = np.asarray(packed).reshape(k, grid.size)
    return flat[:, node_order(grid)].T.ravel()


def vector_to_field(vec, k, grid):
    flat = np.empty((k, grid.size), dtype=np.result_type(vec))
    flat[:, node_order(grid)] = np.asarray(vec).reshape(grid.size, k).T
    return flat.reshape((k,) + grid.shape)


def sym_to_vector(h, grid):
    return field_to_vector(tc.pack_sym(h), grid)


def vector_to_sym(vec, grid):
    n = grid.n
    return tc.unpack_sym(vector_to_field(vec, n * (n + 1) // 2, grid), n)


@dataclass(eq=False)
class SparseOperator:
    """A square sparse operator with its row classification.

    ``matrix`` is unscaled, so ``matrix @ v`` equals the matrix-free
    operator. ``row_scale`` (``1/spacing_t`` on boundary rows) is applied
    only inside factorizations and solves.
    """

    matrix: sp.csr_matrix
    row_kind: np.ndarray  # True on boundary rows
    grid: object = None
    ncomp: int = 1
    name: str = ""
    row_scale: np.ndarray | None = None
    _lu: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise ValueError("operator must be square")
        if self.row_scale is None:
            self.row_scale = np.ones(self.matrix.shape[0])

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def symmetric(self) -> bool:
        diff = self.matrix - self.matrix.T
        return diff.nnz == 0 or abs(diff).max() <= 1e-12 * max(abs(self.matrix).max(), 1.0)

    @property
    def mass(self) -> sp.dia_matrix:
        return sp.diags((~self.row_kind).astype(float))

    @property
    def scaled(self) -> sp.csr_matrix:
        return sp.diags(self.row_scale) @ self.matrix

    def __matmul__(self, v):
        return self.matrix @ v

    def shifted(self, c):
        """The operator plus ``c`` on interior rows."""
        return SparseOperator(
            (self.matrix + c * self.mass).tocsr(), self.row_kind, self.grid, self.ncomp, self.name, self.row_scale
        )

    def factorized(self):
        if "lu" not in self._lu:
            self._lu["lu"] = spla.splu(self.scaled.tocsc())
        return self._lu["lu"]

    def export_coo(self, path):
        export_coo(self.matrix, path)


def export_coo(matrix, path):
    """Header ``rows cols nnz`` then ``i j value`` triplets, 0-based."""
    coo = sp.coo_matrix(matrix)
    with open(path, "w") as fh:
        fh.write(f"{coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for i, j, v in zip(coo.row, coo.col, coo.data):
            fh.write(f"{i} {j} {v:.17g}\n")


def read_coo(path):
    with open(path) as fh:
        rows, cols, nnz = (int(x) for x in fh.readline().split())
        data = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    return sp.coo_matrix((data[:, 2], (data[:, 0].astype(int), data[:, 1].astype(int))), shape=(rows, cols)).tocsr()


# --- generic jet-coefficient assembly ----------------------------------------


def _slots(n):
    out = [()]
    out += [(l,) for l in range(n)]
    out += [(l, m) for l in range(n) for m in range(l, n)]
    return out


def _basis_jet(kind, comp, slot, n, shape):
    """Unit jet in one component and one derivative slot."""
    cshape = (n, n) if kind == "sym" else (n,)
    if kind == "sym":
        i, j = tc.sym_pairs(n)[comp]
        cidx = [(i, j), (j, i)] if i != j else [(i, j)]
    else:
        cidx = [(comp,)]
    val = np.zeros(cshape + shape)
    d = np.zeros((n,) + cshape + shape)
    dd = np.zeros((n, n) + cshape + shape)
    for c in cidx:
        if len(slot) == 0:
            val[c] = 1.0
        elif len(slot) == 1:
            d[(slot[0],) + c] = 1.0
        else:
            l, m = slot
            dd[(l, m) + c] = 1.0
            dd[(m, l) + c] = 1.0
    return Jet(val, d, dd, 2)


def assemble_jet_operator(ctx, kind, interior_fn, boundary_fn, name=""):
    """Assemble a linear operator given pointwise jet formulas.

    ``kind`` is ``"sym"`` (packed symmetric 2-tensor unknowns) or ``"form"``
    (1-forms). ``interior_fn(J)`` and ``boundary_fn(J)`` return row arrays of
    shape ``(k, *grid)`` on the full grid; the first is used on interior nodes,
    the second on boundary nodes.
    """
    grid = ctx.grid
    n, N = grid.n, grid.size
    k = n * (n + 1) // 2 if kind == "sym" else n
    bmask = grid.boundary_mask.ravel()
    rows, cols, vals = [], [], []
    for p in range(k):
        for slot in _slots(n):
            J = _basis_jet(kind, p, slot, n, grid.shape)
            coef = np.where(
                bmask, boundary_fn(J).reshape(k, N), interior_fn(J).reshape(k, N)
            )
            if not np.any(coef):
                continue
            D = grid.sparse_derivative(slot).tocoo()
            for r in range(k):
                c = coef[r]
                if not np.any(c):
                    continue
                v = c[D.row] * D.data
                keep = v != 0
                rows.append(D.row[keep] * k + r)
                cols.append(D.col[keep] * k + p)
                vals.append(v[keep])
    mat = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(N * k, N * k)
    ).tocsr()
    order = node_order(grid)
    perm = (order[:, None] * k + np.arange(k)).ravel()
    mat = mat[perm][:, perm].tocsr()
    row_kind = np.repeat(bmask[order], k)
    scale = np.where(row_kind, 1.0 / grid.spacing[-1], 1.0)
    return SparseOperator(mat, row_kind, grid, k, name, scale)


def _packed(T):
    return tc.pack_sym(T)


def _adn_boundary(ctx, kappa_variant):
    m = ctx.n - 1
    gt = ctx.g[:m, :m]

    def fn(J):
        first, second, third = bd.adn_rows(J, ctx, kappa_variant=kappa_variant, full=True)
        return bd.stack_boundary_rows(first, second, third, gt)

    return fn


def apply_adn(h, ctx, kappa_variant=False):
    """Boundary rows ``(k, *grid)`` of the ADN conditions (matrix-free)."""
    return _adn_boundary(ctx, kappa_variant)(op.as_field_jet(h, ctx))


# --- operators -----------------------------------------------------------------


def lc_interior(h, ctx, c):
    H = op.as_field_jet(h, ctx)
    return op.lichnerowicz_laplacian(H, ctx) + c * H.val


def assemble_L_c(ctx, c, adn_variant="standard"):
    """``(Delta_L + c) h`` in M with ADN (or ADN_kappa) boundary rows."""
    if adn_variant not in ("standard", "kappa"):
        raise ValueError("adn_variant must be 'standard' or 'kappa'")
    return assemble_jet_operator(
        ctx,
        "sym",
        lambda J: _packed(lc_interior(J, ctx, c)),
        _adn_boundary(ctx, adn_variant == "kappa"),
        name=f"L_c(c={c:g},{adn_variant})",
    )


def assemble_dirichlet_hodge(ctx, c):
    """``(Delta_H + c) w`` in M, ``w = 0`` on the boundary."""
    return assemble_jet_operator(
        ctx,
        "form",
        lambda J: op.hodge_laplacian(J, ctx) + c * J.val,
        lambda J: J.val,
        name=f"hodge_dirichlet(c={c:g})",
    )


def p_einstein_interior(h, ctx, shift=None):
    """``Delta_L h + 2 kappa n lambda h + 2 Lambda h + upsilon (tr h / n) g``.

    With ``shift`` given, the constant ``2 kappa n lambda + 2 Lambda`` is
    replaced by it (``shift = 0`` gives ``Delta_L + upsilon tr(.) g / n``).
    """
    H = op.as_field_jet(h, ctx)
    n = ctx.n
    if shift is None:
        shift = 2 * ctx.kappa * n * ctx.lam + 2 * ctx.lam_shift
    tr = tc.trace(H.val, ctx.g)
    return op.lichnerowicz_laplacian(H, ctx) + shift * H.val + ctx.upsilon * tr / n * ctx.g


def _check_kappa(ctx):
    n, k = ctx.n, ctx.kappa
    for bad in (-1.0 / n, -1.0 / (2 * (n - 1))):
        if abs(k - bad) < 1e-12:
            raise op.HypothesisError(f"kappa = {k} is excluded (-1/n and -1/(2(n-1)))")


def assemble_P_einstein(ctx, shift=None):
    _check_kappa(ctx)
    return assemble_jet_operator(
        ctx,
        "sym",
        lambda J: _packed(p_einstein_interior(J, ctx, shift)),
        _adn_boundary(ctx, True),
        name="P_einstein",
    )


def frozen_interior(h, ctx, family):
    """Interior block of ``D_h F(0, 0)`` for each family."""
    H = op.as_field_jet(h, ctx)
    half_lap = 0.5 * op.lichnerowicz_laplacian(H, ctx)
    L = ctx.lam_shift
    if family == "ricci":
        return half_lap + L * H.val
    if family == "ricci_contravariant":
        return half_lap - 2 * op.ric_action(H.val, ctx) - L * H.val
    if family == "einstein_type":
        n, k, tau = ctx.n, ctx.kappa, ctx.tau
        trj = op.trace_jet(H, ctx)
        zeroth = (n * k * tau * H.val + L * H.val - k * tau * trj.val * ctx.g) / (1 + k * n)
        return half_lap + zeroth - ctx.kappa_coupling * op.hessian(trj, ctx)
    raise ValueError(f"unknown family {family!r}")


def assemble_frozen_linearization(ctx, family):
    """Exact Jacobian of the gauged residual at ``(h, targets) = (0, 0)``."""
    ctx.check_family(family)
    return assemble_jet_operator(
        ctx,
        "sym",
        lambda J: _packed(frozen_interior(J, ctx, family)),
        _adn_boundary(ctx, family == "einstein_type"),
        name=f"frozen[{family}]",
    )


def apply_frozen(h, ctx, family):
    """Matrix-free action of the frozen linearization, packed rows ``(k, *grid)``."""
    H = op.as_field_jet(h, ctx)
    inner_rows = _packed(frozen_interior(H, ctx, family))
    brows = apply_adn(H, ctx, family == "einstein_type")
    return np.where(ctx.grid.boundary_mask, brows, inner_rows)


def apply_L_c(h, ctx, c, adn_variant="standard"):
    H = op.as_field_jet(h, ctx)
    inner_rows = _packed(lc_interior(H, ctx, c))
    brows = apply_adn(H, ctx, adn_variant == "kappa")
    return np.where(ctx.grid.boundary_mask, brows, inner_rows)


# --- solves and spectra --------------------------------------------------------


def _ilu(M):
    """Incomplete LU with full partial pivoting; boundary rows often have zero diagonals."""
    last = None
    for drop_tol, permc in ((1e-5, "COLAMD"), (1e-5, "MMD_ATA"), (1e-7, "COLAMD")):
        try:
            return spla.spilu(M, drop_tol=drop_tol, fill_factor=50, permc_spec=permc, diag_pivot_thresh=1.0)
        except RuntimeError as exc:
            last = exc
    raise LinearSolveError(f"incomplete factorization failed: {last}")


def solve_linear(A, rhs, cap=DIRECT_SOLVE_CAP, rtol=1e-10, restart=200, maxiter=50):
    """Solve ``A x = rhs``: sparse LU up to ``cap`` unknowns, else ILU-preconditioned GMRES."""
    if not isinstance(A, SparseOperator):
        A = SparseOperator(sp.csr_matrix(A), np.zeros(A.shape[0], dtype=bool))
    rhs = np.asarray(rhs, dtype=float)
    if not np.any(rhs):
        return np.zeros_like(rhs)
    b = A.row_scale * rhs
    M = A.scaled.tocsc()
    if A.shape[0] <= cap:
        try:
            x = A.factorized().solve(b)
        except RuntimeError as exc:
            raise LinearSolveError(f"singular factorization: {exc}") from exc
        if not np.all(np.isfinite(x)):
            raise LinearSolveError("singular factorization: non-finite solution")
    else:
        pre = spla.LinearOperator(M.shape, _ilu(M).solve)
        history = []
        x, info = spla.gmres(
            M, b, M=pre, rtol=rtol, restart=restart, maxiter=maxiter, callback=history.append, callback_type="pr_norm"
        )
        if info != 0:
            raise LinearSolveError(f"GMRES did not converge (info={info})", history)
    res = np.linalg.norm(M @ x - b) / np.linalg.norm(b)
    if res > rtol and A.shape[0] > cap:
        raise LinearSolveError(f"relative residual {res:.3e} above {rtol:g}")
    return x


@dataclass
class EigenResult:
    values: np.ndarray
    residuals: np.ndarray
    shift: float


def smallest_eigenvalues(A, k=6, shift=0.0, seed=0, tol=1e-12) -> EigenResult:
    """The ``k`` eigenvalues of ``A x = mu M x`` nearest ``shift``.

    ``M`` is the identity on interior rows and zero on boundary rows, so the
    boundary conditions act as constraints. Shift-invert Arnoldi with a
    deterministic start vector; the residual ``||(A - mu M) v|| / ||v||`` is
    reported per eigenpair.
    """
    if not isinstance(A, SparseOperator):
        A = SparseOperator(sp.csr_matrix(A), np.zeros(A.shape[0], dtype=bool))
    N = A.shape[0]
    if k <= 0:
        return EigenResult(np.zeros(0, complex), np.zeros(0), shift)
    Mass = A.mass
    shifted = (sp.diags(A.row_scale) @ (A.matrix - shift * Mass)).tocsc()
    try:
        lu = spla.splu(shifted)
    except RuntimeError as exc:
        raise SpectrumError(f"shift too close to spectrum: {exc}") from exc
    if not np.all(np.isfinite(lu.U.diagonal())) or np.min(np.abs(lu.U.diagonal())) < 1e-14 * abs(
        lu.U.diagonal()
    ).max():
        raise SpectrumError("shift too close to spectrum")
    mdiag = Mass.diagonal()
    rank = int(mdiag.sum())
    k_eff = min(k, rank)

    def matvec(x):
        return lu.solve(A.row_scale * (mdiag * x))

    if N <= 400 or k_eff >= N - 2:
        dense = np.linalg.solve(shifted.toarray(), np.diag(A.row_scale * mdiag))
        theta, vecs = np.linalg.eig(dense)
    else:
        lin = spla.LinearOperator((N, N), matvec=matvec, dtype=float)
        v0 = np.random.default_rng(seed).standard_normal(N)
        theta, vecs = spla.eigs(lin, k=k_eff, which="LM", v0=v0, tol=tol, ncv=min(N - 1, max(2 * k_eff + 1, 40)))
    order = np.argsort(-np.abs(theta))[:k_eff]
    theta, vecs = theta[order], vecs[:, order]
    mu = shift + 1.0 / theta
    res = np.array(
        [
            np.linalg.norm(A.matrix @ vecs[:, i] - mu[i] * (mdiag * vecs[:, i])) / np.linalg.norm(vecs[:, i])
            for i in range(k_eff)
        ]
    )
    srt = np.argsort(np.abs(mu - shift), kind="stable")
    return EigenResult(mu[srt], res[srt], shift)


def spectral_operators(ctx, family):
    """The two operators whose spectra the family's hypotheses constrain, and the critical value."""
    lam, L, k, n = ctx.lam, ctx.lam_shift, ctx.kappa, ctx.n
    crit = {"ricci": -2 * L, "ricci_contravariant": 4 * lam + 2 * L, "einstein_type": -2 * k * n * lam - 2 * L}[family]
    if family == "einstein_type":
        lich = assemble_P_einstein(ctx, shift=0.0)
    else:
        lich = assemble_L_c(ctx, 0.0)
    return {"lichnerowicz_adn": lich, "hodge_dirichlet": assemble_dirichlet_hodge(ctx, 0.0)}, crit


def spectral_margin(ctx, family, k=6, margin=1e-6):
    """Distances from the family's critical constant to the computed spectra.

    Returns a dict with one entry per operator plus ``flagged``; a shift that
    cannot be factorized counts as distance zero.
    """
    ctx.check_family(family)
    ops, crit = spectral_operators(ctx, family)
    report = {"family": family, "critical_value": crit, "margin_threshold": margin, "operators": {}}
    flagged = False
    for name, A in ops.items():
        try:
            eig = smallest_eigenvalues(A, k=k, shift=crit)
            dist = float(np.min(np.abs(eig.values - crit))) if eig.values.size else float("inf")
            entry = {
                "distance": dist,
                "nearest": [[float(v.real), float(v.imag)] for v in eig.values],
                "residuals": [float(r) for r in eig.residuals],
            }
        except SpectrumError as exc:
            dist = 0.0
            entry = {"distance": 0.0, "error": str(exc), "nearest": [], "residuals": []}
        entry["violated"] = bool(dist < margin)
        flagged |= entry["violated"]
        report["operators"][name] = entry
    report["flagged"] = flagged
    return report
