"""Tensor calculus on grid fields.

Conventions (fixed throughout the package):

* ``Gamma[m, i, j]`` is the Christoffel symbol of the second kind.
* ``R[i, j, k, l]`` is ``R^i_{jkl} = d_k Gamma^i_{lj} - d_l Gamma^i_{kj} + ...``;
  the lowered tensor is ``Rm[i, j, k, l] = g_{im} R^m_{jkl}`` and
  ``Ric_{jl} = R^i_{jil}``, which is positive on round spheres.
* Covariant derivatives put the new index first: ``(nabla T)[j, a, b] = nabla_j T_ab``.

Symmetric 2-tensors are stored as full ``(n, n, *grid)`` arrays; the packed
layout ``sym_pairs(n)`` is used only for unknown vectors and dumps.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import simpson

from .jets import Jet, as_jet, field_jet, jeinsum

DET_GUARD = 1e-12
_LETTERS = "abcdefghijkpqrstuvw"


class MetricError(ValueError):
    pass


def sym_pairs(n):
    return [(i, j) for i in range(n) for j in range(i, n)]


def pack_sym(h):
    n = h.shape[0]
    return np.stack([h[i, j] for i, j in sym_pairs(n)])


def unpack_sym(packed, n):
    out = np.empty((n, n) + packed.shape[1:], dtype=packed.dtype)
    for p, (i, j) in enumerate(sym_pairs(n)):
        out[i, j] = out[j, i] = packed[p]
    return out


def check_metric(g):
    """Raise if the metric is degenerate or indefinite at any node."""
    mats = np.moveaxis(g, (0, 1), (-2, -1))
    det = np.linalg.det(mats)
    if np.any(~np.isfinite(det)) or np.any(det <= DET_GUARD):
        raise MetricError("metric is degenerate (det <= 1e-12) at some node")
    if np.any(np.linalg.eigvalsh(mats)[..., 0] <= 0):
        raise MetricError("metric is not positive definite at some node")


def metric_jet(g, grid, order=2, check=True):
    if isinstance(g, Jet):
        return g
    if check:
        check_metric(g)
    return field_jet(g, grid, order)


def partial_derivative(field, grid, axis, order=1):
    return grid.diff(field, axis, order)


def christoffel(G: Jet) -> Jet:
    """``Gamma^m_ij = 1/2 g^mc (d_i g_jc + d_j g_ic - d_c g_ij)`` as a jet one order lower."""
    gi = G.inv()
    dg = G.diff()  # dg[l, a, b] = d_l g_ab
    k = dg + dg.transpose(1, 0, 2) - dg.transpose(1, 2, 0)
    return jeinsum("mc,ijc->mij", gi, k).scale(0.5)


def covariant_derivative(T: Jet, gamma: Jet) -> Jet:
    """``nabla_j T_{a1..ar}`` for a covariant tensor jet; new index first."""
    rank = T.val.ndim - gamma.val.ndim + 3
    letters = _LETTERS[:rank]
    out = "j" + letters
    res = T.diff()
    for s in range(rank):
        swapped = letters[:s] + "m" + letters[s + 1 :]
        res = res - jeinsum(f"mj{letters[s]},{swapped}->{out}", gamma, T)
    return res


def riemann_from(gamma: Jet) -> np.ndarray:
    """``R^i_{jkl}`` from a Christoffel jet of order >= 1."""
    dgam = gamma.d  # dgam[k, i, l, j] = d_k Gamma^i_lj
    gv = gamma.val
    r = np.einsum("kilj...->ijkl...", dgam) - np.einsum("likj...->ijkl...", dgam)
    r = r + np.einsum("ikm...,mlj...->ijkl...", gv, gv) - np.einsum("ilm...,mkj...->ijkl...", gv, gv)
    return r


def riemann(g, grid=None):
    """Return ``(R^i_jkl, R_ijkl)`` of a metric (array or jet)."""
    G = metric_jet(g, grid)
    r = riemann_from(christoffel(G))
    return r, lower_first(r, G.val)


def lower_first(r, g):
    return np.einsum("im...,mjkl...->ijkl...", g, r)


def ricci_from(gamma: Jet) -> np.ndarray:
    return np.einsum("ijil...->jl...", riemann_from(gamma))


def ricci(g, grid=None) -> np.ndarray:
    G = metric_jet(g, grid)
    return ricci_from(christoffel(G))


def inverse(g):
    return np.moveaxis(np.linalg.inv(np.moveaxis(g, (0, 1), (-2, -1))), (-2, -1), (0, 1))


def trace(h, g):
    return np.einsum("ab...,ab...->...", inverse(g), h)


def scalar_curvature(g, grid=None):
    G = metric_jet(g, grid)
    return trace(ricci(G), G.val)


def ric_lambda(g, lam_shift, grid=None):
    G = metric_jet(g, grid)
    return ricci(G) + lam_shift * G.val


def ric_lambda_contravariant(g, lam_shift, grid=None):
    G = metric_jet(g, grid)
    gi = inverse(G.val)
    return np.einsum("ik...,kl...,lj...->ij...", gi, ric_lambda(G, lam_shift), gi)


def raise_both(h, g):
    gi = inverse(g)
    return np.einsum("ia...,ab...,bj...->ij...", gi, h, gi)


def lower_both(h, g):
    return np.einsum("ia...,ab...,bj...->ij...", g, h, g)


def mixed(h, g):
    """``h^k_j = g^{ka} h_{aj}``."""
    return np.einsum("ka...,aj...->kj...", inverse(g), h)


def inner(h, k, g):
    gi = inverse(g)
    return np.einsum("ia...,jb...,ij...,ab...->...", gi, gi, h, k)


def traceless_part(h, g):
    n = g.shape[0]
    return h - trace(h, g) / n * g


def kulkarni_nomizu(A, B):
    """``(A o B)_ijkl = A_ik B_jl + A_jl B_ik - A_il B_jk - A_jk B_il``."""
    t1 = np.einsum("ik...,jl...->ijkl...", A, B)
    t2 = np.einsum("il...,jk...->ijkl...", A, B)
    return t1 + t1.transpose((1, 0, 3, 2) + tuple(range(4, t1.ndim))) - t2 - t2.transpose(
        (1, 0, 3, 2) + tuple(range(4, t2.ndim))
    )


def volume_density(g):
    return np.sqrt(np.linalg.det(np.moveaxis(g, (0, 1), (-2, -1))))


def integrate(f, g, grid):
    """Integral of ``f dmu_g``: rectangle rule on periodic axes, Simpson in ``t``."""
    vals = np.asarray(f) * volume_density(g)
    vals = simpson(vals, x=grid.axes[-1], axis=-1)
    for h in reversed(grid.spacing[:-1]):
        vals = vals.sum(axis=-1) * h
    return float(vals)


def tensor_norm(T, g, contravariant=False):
    """Pointwise norm of a 1-form or 2-tensor with respect to ``g``."""
    T = np.asarray(T)
    m = g if contravariant else inverse(g)
    if T.ndim == g.ndim - 1:
        return np.sqrt(np.abs(np.einsum("ij...,i...,j...->...", m, T, T)))
    return np.sqrt(np.abs(np.einsum("ia...,jb...,ij...,ab...->...", m, m, T, T)))


def sup_norm(T, g, contravariant=False, mask=None):
    vals = tensor_norm(T, g, contravariant)
    if mask is not None:
        vals = vals[mask]
    return float(np.max(vals)) if vals.size else 0.0
