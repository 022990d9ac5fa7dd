"""Second-order coordinate jets of grid fields.

A :class:`Jet` stores a field together with its first and second partial
derivatives at every node. All geometric formulas in this package are written
as pointwise algebra on jets, with the Leibniz rule applied exactly. Only the
derivatives of the *input* fields come from finite differences, so any
identity that holds pointwise for smooth fields (metric compatibility, Ricci
commutation, the linearization formulas) also holds for the discrete
quantities up to round-off.

Layout: ``val[comp..., *grid]``, ``d[l, comp..., *grid]``,
``dd[l, m, comp..., *grid]`` with ``dd`` symmetric in ``(l, m)``.
"""

from __future__ import annotations

import numpy as np


class Jet:
    __slots__ = ("val", "d", "dd", "order")

    def __init__(self, val, d=None, dd=None, order=None):
        self.val = np.asarray(val)
        self.d = d
        self.dd = dd
        if order is None:
            order = 0 if d is None else (1 if dd is None else 2)
        self.order = order

    @classmethod
    def constant(cls, val):
        """A field with vanishing derivatives to every order."""
        return cls(val, order=np.inf)

    def __repr__(self):
        return f"Jet(order={self.order}, shape={self.val.shape})"

    def truncate(self, order):
        if order >= self.order:
            return self
        return Jet(self.val, self.d if order >= 1 else None, self.dd if order >= 2 else None, order)

    def _terms(self):
        """(val, d, dd) with ``None`` for derivatives that are identically zero."""
        if self.order == np.inf:
            return self.val, None, None
        return self.val, self.d, self.dd

    def __add__(self, other):
        other = as_jet(other)
        order = min(self.order, other.order)
        return Jet(
            self.val + other.val,
            _add(self.d, other.d) if order >= 1 else None,
            _add(self.dd, other.dd) if order >= 2 else None,
            order,
        )

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        return self + (-as_jet(other))

    def __rsub__(self, other):
        return as_jet(other) - self

    def scale(self, c):
        return Jet(
            c * self.val,
            None if self.d is None else c * self.d,
            None if self.dd is None else c * self.dd,
            self.order,
        )

    def __mul__(self, c):
        if isinstance(c, Jet):
            return NotImplemented
        return self.scale(c)

    __rmul__ = __mul__

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        sl1 = (slice(None),) + idx
        sl2 = (slice(None),) * 2 + idx
        return Jet(
            self.val[idx],
            None if self.d is None else self.d[sl1],
            None if self.dd is None else self.dd[sl2],
            self.order,
        )

    def transpose(self, *perm):
        rank = len(perm)
        tail = tuple(range(rank, self.val.ndim))
        p0 = tuple(perm) + tail
        p1 = (0,) + tuple(p + 1 for p in p0)
        p2 = (0, 1) + tuple(p + 2 for p in p0)
        return Jet(
            self.val.transpose(p0),
            None if self.d is None else self.d.transpose(p1),
            None if self.dd is None else self.dd.transpose(p2),
            self.order,
        )

    def diff(self):
        """Jet of the gradient, derivative index first; loses one order."""
        if self.order == np.inf:
            return Jet.constant(np.zeros((self._ndirs(),) + self.val.shape))
        if self.order < 1:
            raise ValueError("cannot differentiate a jet of order 0")
        return Jet(self.d, self.dd, None, self.order - 1)

    def _ndirs(self):
        raise ValueError("dimension of a constant jet is unknown; differentiate a field jet")

    def apply(self, f, df, ddf):
        """Elementwise scalar function with its first two derivatives supplied."""
        v = self.val
        d = dd = None
        if self.order >= 1 and self.d is not None:
            d = df(v) * self.d
            if self.order >= 2:
                dd = ddf(v) * np.einsum("l...,m...->lm...", self.d, self.d)
                if self.dd is not None:
                    dd = dd + df(v) * self.dd
        return Jet(f(v), d, dd, self.order)

    def power(self, p):
        return self.apply(
            lambda v: v**p,
            lambda v: p * v ** (p - 1),
            lambda v: p * (p - 1) * v ** (p - 2),
        )

    def inv(self):
        """Inverse of a matrix-valued jet (first two component axes)."""
        val = np.moveaxis(np.linalg.inv(np.moveaxis(self.val, (0, 1), (-2, -1))), (-2, -1), (0, 1))
        gi = Jet.constant(val)
        if self.order == np.inf:
            return gi
        d = dd = None
        if self.order >= 1:
            d = -np.einsum("ab...,lbc...,cd...->lad...", val, self.d, val)
            if self.order >= 2:
                dd = -(
                    np.einsum("lab...,mbc...,cd...->lmad...", d, self.d, val)
                    + np.einsum("ab...,lmbc...,cd...->lmad...", val, self.dd, val)
                    + np.einsum("ab...,mbc...,lcd...->lmad...", val, self.d, d)
                )
        return Jet(val, d, dd, self.order)


def _add(x, y):
    if x is None:
        return y
    if y is None:
        return x
    return x + y


def as_jet(x):
    return x if isinstance(x, Jet) else Jet.constant(np.asarray(x, dtype=float))


def jeinsum(subscripts, *operands, order=None):
    """``np.einsum`` over component indices with the Leibniz rule for derivatives.

    Component subscripts must not use ``Y`` or ``Z``; the grid axes are
    matched implicitly (broadcasting allowed).
    """
    ins, out = subscripts.split("->")
    ins = ins.split(",")
    ops = [as_jet(o) for o in operands]
    if len(ins) != len(ops):
        raise ValueError("subscript/operand count mismatch")
    res_order = min(o.order for o in ops)
    if order is not None:
        res_order = min(res_order, order)

    def es(specs, arrays, out_prefix):
        expr = ",".join(s + "..." for s in specs) + "->" + out_prefix + out + "..."
        return np.einsum(expr, *arrays, optimize=len(arrays) > 2)

    vals = [o.val for o in ops]
    val = es(ins, vals, "")
    if res_order < 1:
        return Jet(val, order=res_order)

    d_terms = [(p, o.d) for p, o in enumerate(ops) if o.order != np.inf and o.d is not None]
    d = None
    for p, dp in d_terms:
        specs = list(ins)
        arrays = list(vals)
        specs[p] = "Y" + specs[p]
        arrays[p] = dp
        term = es(specs, arrays, "Y")
        d = term if d is None else d + term
    if d is None:
        return Jet.constant(val) if res_order == np.inf else Jet(val, None, None, res_order)
    if res_order < 2:
        return Jet(val, d, None, res_order)

    dd = None
    for p, o in enumerate(ops):
        if o.order != np.inf and o.dd is not None:
            specs = list(ins)
            arrays = list(vals)
            specs[p] = "YZ" + specs[p]
            arrays[p] = o.dd
            term = es(specs, arrays, "YZ")
            dd = term if dd is None else dd + term
    for p, dp in d_terms:
        for q, dq in d_terms:
            if p == q:
                continue
            specs = list(ins)
            arrays = list(vals)
            specs[p] = "Y" + specs[p]
            specs[q] = "Z" + specs[q]
            arrays[p] = dp
            arrays[q] = dq
            term = es(specs, arrays, "YZ")
            dd = term if dd is None else dd + term
    return Jet(val, d, dd, res_order)


def field_jet(arr, grid, order=2):
    """Finite-difference jet of a grid field.

    Pure second derivatives use the direct second-derivative stencils (no
    odd-even decoupling), mixed ones the product of first-derivative stencils.
    """
    arr = np.asarray(arr, dtype=float)
    if order == 0:
        return Jet(arr, order=0)
    n = grid.n
    d = np.stack([grid.diff(arr, ax, 1) for ax in range(n)])
    if order == 1:
        return Jet(arr, d, None, 1)
    dd = np.empty((n, n) + arr.shape)
    for l in range(n):
        dd[l, l] = grid.diff(arr, l, 2)
        for m in range(l + 1, n):
            dd[l, m] = dd[m, l] = grid.diff(d[m], l, 1)
    return Jet(arr, d, dd, 2)
