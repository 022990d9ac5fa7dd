import numpy as np
import pytest

from prescribed_ricci import grid as gr
from prescribed_ricci import operators as op


def make_ctx(kind="flat_slab", res=(8, 8, 17), lam_shift=1.0, kappa=0.0, fd_order=4, metric=None):
    grid = gr.build_grid(gr.ModelGeometry(kind), res, fd_order)
    return op.OperatorContext(grid, lam_shift=lam_shift, kappa=kappa, metric=metric)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
