import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from prescribed_ricci import boundary as bd
from prescribed_ricci import io
from prescribed_ricci import tensor_core as tc

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)


def sym_stack(a):
    return a + np.swapaxes(a, 0, 1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 3, 4), elements=finite))
def test_pack_unpack(a):
    h = sym_stack(a)
    assert np.array_equal(tc.unpack_sym(tc.pack_sym(h), 3), h)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 3), elements=finite), arrays(np.float64, (3, 3), elements=finite))
def test_kulkarni_nomizu_symmetries(a, b):
    A, B = a + a.T, b + b.T
    kn = tc.kulkarni_nomizu(A, B)
    assert np.allclose(kn, tc.kulkarni_nomizu(B, A))
    assert np.allclose(kn, -np.swapaxes(kn, 0, 1))
    assert np.allclose(kn, -np.swapaxes(kn, 2, 3))
    assert np.allclose(kn, np.transpose(kn, (2, 3, 0, 1)))
    bianchi = kn + np.transpose(kn, (0, 2, 3, 1)) + np.transpose(kn, (0, 3, 1, 2))
    assert np.allclose(bianchi, 0, atol=1e-9 * (1 + np.abs(kn).max()))


@settings(max_examples=50, deadline=None)
@given(
    arrays(np.float64, (2, 2, 3), elements=st.floats(-2, 2)),
    st.floats(0.1, 50.0),
)
def test_conformal_representative_scale_invariance(a, scale):
    gamma = np.einsum("ak...,bk...->ab...", a, a) + 0.5 * np.eye(2)[:, :, None]
    background = np.eye(2)[:, :, None] * np.array([1.0, 2.0, 0.5])
    rep = bd.conformal_representative(gamma, background)
    assert np.allclose(bd.conformal_representative(scale * gamma, background), rep)
    assert np.allclose(bd.boundary_determinant(rep, background), 1.0)


@settings(max_examples=20, deadline=None)
@given(arrays(np.float64, (3, 3, 2, 3), elements=finite))
def test_sym_field_csv_roundtrip(tmp_path_factory, a):
    h = sym_stack(a)
    path = tmp_path_factory.mktemp("io") / "h.csv"
    io.write_sym_field(h, path)
    assert np.array_equal(io.read_sym_field(path, 3, (2, 3)), h)
