"""Autodiff engine: forward contracts and gradients versus finite differences."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import gcmem.tensor as T

from _oracles import finite_diff_grad, max_rel_err

TOL = 1e-4


def grad_of(build, x0, extra=()):
    """Analytic gradient of a scalar-valued tensor expression wrt x0."""
    x = T.Tensor(x0, requires_grad=True)
    with T.Tape() as tape:
        loss = build(x, *extra)
        T.backward(loss)
    return x.grad


# ---------------------------------------------------------------------------
# forward examples


def test_matmul_identity():
    a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    eye = T.Tensor(np.eye(2))
    np.testing.assert_array_equal(T.matmul(a, eye).data, a.data)


def test_matmul_hand_value():
    # [[1,2]] @ [[3],[4]] = [[1*3 + 2*4]] = [[11]]
    out = T.matmul(T.Tensor([[1.0, 2.0]]), T.Tensor([[3.0], [4.0]]))
    np.testing.assert_array_equal(out.data, [[11.0]])


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        T.matmul(T.Tensor(np.ones((2, 3))), T.Tensor(np.ones((2, 3))))


def test_elementwise_values():
    assert T.tanh(T.Tensor(0.0)).item() == 0.0
    assert T.relu(T.Tensor(-3.0)).item() == 0.0
    assert T.relu(T.Tensor(3.0)).item() == 3.0
    assert T.sigmoid(T.Tensor(0.0)).item() == 0.5
    assert T.neg(T.Tensor(2.0)).item() == -2.0
    assert T.scale(T.Tensor(3.0), 2.0).item() == 6.0


def test_log_domain_error():
    with pytest.raises(ValueError):
        T.log(T.Tensor([1.0, 0.0]))


def test_exp_overflow_is_an_error():
    with pytest.raises(OverflowError):
        T.exp(T.Tensor(1000.0))


def test_strict_finite_mode(monkeypatch):
    monkeypatch.setattr(T, "STRICT_FINITE", True)
    big = T.Tensor(np.full(3, 3e38))
    with pytest.raises(OverflowError):
        T.add(big, big)


def test_reduce_values():
    assert T.reduce_sum(T.Tensor([1.0, 2.0, 3.0])).item() == 6.0
    assert T.reduce_mean(T.Tensor([5.0])).item() == 5.0


def test_reduce_mean_empty_extent_is_zero():
    x = T.Tensor(np.zeros((0, 4)))
    out = T.reduce_mean(x, axis=0)
    np.testing.assert_array_equal(out.data, np.zeros(4))
    out_all = T.reduce_mean(T.Tensor(np.zeros(0)))
    assert out_all.item() == 0.0


def test_gather_rows_selects():
    x = T.Tensor(np.arange(12.0).reshape(4, 3))
    np.testing.assert_array_equal(T.gather_rows(x, [2]).data, x.data[2:3])
    with pytest.raises(IndexError):
        T.gather_rows(x, [4])


def test_gather_rows_duplicate_backward_accumulates():
    x = T.Tensor(np.ones((4, 3)), requires_grad=True)
    with T.Tape():
        out = T.gather_rows(x, [2, 2])
        T.backward(T.reduce_sum(out))
    np.testing.assert_array_equal(x.grad[2], [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(x.grad[[0, 1, 3]], np.zeros((3, 3)))


def test_gather_scatter_conserves_gradient_mass():
    rng = np.random.default_rng(3)
    x = T.Tensor(rng.standard_normal((6, 4)), requires_grad=True)
    idx = [0, 2, 2, 5, 1]
    with T.Tape():
        out = T.gather_rows(x, idx)
        T.backward(T.reduce_sum(out))
    # upstream grad is all-ones over (5, 4); scattered mass must match
    assert x.grad.sum() == pytest.approx(5 * 4)


def test_take_per_row():
    x = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(T.take_per_row(x, [1, 0]).data, [2.0, 3.0])


def test_concat_slice_roundtrip():
    a = T.Tensor(np.ones((2, 3)))
    b = T.Tensor(np.zeros((1, 3)))
    cat = T.concat_rows([a, b])
    assert cat.data.shape == (3, 3)
    cols = T.slice_cols(cat, 1, 3)
    assert cols.data.shape == (3, 2)


# ---------------------------------------------------------------------------
# softmax head


def test_softmax_uniform():
    ops = T.softmax_logits_ops(T.Tensor([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(ops.probs.data, np.full(3, 1 / 3), rtol=1e-6)
    assert ops.entropy.item() == pytest.approx(np.log(3.0), rel=1e-6)


def test_softmax_extreme_logits_stable():
    ops = T.softmax_logits_ops(T.Tensor([1000.0, 0.0]))
    assert np.all(np.isfinite(ops.log_probs.data))
    np.testing.assert_allclose(ops.probs.data, [1.0, 0.0], atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=6))
def test_softmax_contracts(logit_list):
    ops = T.softmax_logits_ops(T.Tensor(np.array(logit_list, dtype=np.float32)))
    assert abs(float(ops.probs.data.sum()) - 1.0) < 1e-6
    assert ops.entropy.item() >= 0.0
    assert np.all(np.isfinite(ops.log_probs.data))


def test_entropy_gradient_matches_fd():
    logits0 = np.array([0.3, -0.8, 1.1])

    def entropy64(v):
        s = v - v.max()
        p = np.exp(s) / np.exp(s).sum()
        return -(p * np.log(p)).sum()

    analytic = grad_of(lambda x: T.softmax_logits_ops(x).entropy, logits0)
    assert max_rel_err(analytic, finite_diff_grad(entropy64, logits0)) < TOL


# ---------------------------------------------------------------------------
# backward semantics


def test_backward_identity_leaf():
    x = T.Tensor(2.5, requires_grad=True)
    with T.Tape() as tape:
        tape.backward(x)
    np.testing.assert_array_equal(x.grad, np.ones(()))


def test_backward_requires_scalar():
    x = T.Tensor(np.ones(3), requires_grad=True)
    with T.Tape() as tape:
        with pytest.raises(ValueError):
            tape.backward(x)


def test_unreachable_leaf_gets_no_gradient():
    x = T.Tensor(1.0, requires_grad=True)
    other = T.Tensor(1.0, requires_grad=True)
    with T.Tape():
        loss = T.mul(x, x)
        T.backward(loss)
    assert other.grad is None  # equivalently zero


def test_grads_accumulate_until_cleared():
    x = T.Tensor(3.0, requires_grad=True)
    for _ in range(2):
        with T.Tape():
            T.backward(T.mul(x, x))
    np.testing.assert_allclose(x.grad, 2 * 2.0 * 3.0)
    x.grad = None
    with T.Tape():
        T.backward(T.mul(x, x))
    np.testing.assert_allclose(x.grad, 6.0)


def test_backward_linearity():
    rng = np.random.default_rng(0)
    w0 = rng.standard_normal((3, 3)).astype(np.float32)
    x = T.Tensor(rng.standard_normal((2, 3)))

    def one_loss(build):
        w = T.Tensor(w0, requires_grad=True)
        with T.Tape():
            T.backward(build(w))
        return w.grad

    g_a = one_loss(lambda w: T.reduce_sum(T.matmul(x, w)))
    g_b = one_loss(lambda w: T.reduce_sum(T.tanh(T.matmul(x, w))))
    w = T.Tensor(w0, requires_grad=True)
    with T.Tape():
        loss = T.add(T.reduce_sum(T.matmul(x, w)),
                     T.reduce_sum(T.tanh(T.matmul(x, w))))
        T.backward(loss)
    np.testing.assert_allclose(w.grad, g_a + g_b, rtol=1e-5, atol=1e-6)


def test_no_recording_outside_tape():
    x = T.Tensor(1.0, requires_grad=True)
    out = T.mul(x, x)
    assert not out.requires_grad
    with T.Tape() as tape:
        pass
    assert len(tape) == 0


def test_forward_deterministic():
    rng = np.random.default_rng(5)
    a = rng.standard_normal((8, 8)).astype(np.float32)
    b = rng.standard_normal((8, 8)).astype(np.float32)
    r1 = T.tanh(T.matmul(T.Tensor(a), T.Tensor(b))).data
    r2 = T.tanh(T.matmul(T.Tensor(a), T.Tensor(b))).data
    np.testing.assert_array_equal(r1, r2)


# ---------------------------------------------------------------------------
# gradient checks for every primitive (float64 shadow oracle)


def _rand(shape, seed):
    return np.random.default_rng(seed).standard_normal(shape)


B_CONST = _rand((4, 3), 99)
ROW_FACTORS = np.abs(_rand(5, 98)) + 0.5
SRC = np.array([0, 1, 1, 3, 4], dtype=np.int64)
DST = np.array([2, 2, 0, 4, 4], dtype=np.int64)

PRIMITIVE_CASES = [
    ("matmul_lhs", (3, 4),
     lambda x: T.reduce_sum(T.matmul(x, T.Tensor(B_CONST))),
     lambda v: (v @ B_CONST).sum()),
    ("matmul_rhs", (4, 3),
     lambda x: T.reduce_sum(T.matmul(T.Tensor(B_CONST.T), x)),
     lambda v: (B_CONST.T @ v).sum()),
    ("add", (5,),
     lambda x: T.reduce_sum(T.add(x, x)),
     lambda v: (v + v).sum()),
    ("sub", (5,),
     lambda x: T.reduce_sum(T.sub(T.scale(x, 3.0), x)),
     lambda v: (3 * v - v).sum()),
    ("mul", (5,),
     lambda x: T.reduce_sum(T.mul(x, T.tanh(x))),
     lambda v: (v * np.tanh(v)).sum()),
    ("tanh", (6,),
     lambda x: T.reduce_sum(T.tanh(x)),
     lambda v: np.tanh(v).sum()),
    ("sigmoid", (6,),
     lambda x: T.reduce_sum(T.sigmoid(x)),
     lambda v: (1 / (1 + np.exp(-v))).sum()),
    ("relu", (6,),
     lambda x: T.reduce_sum(T.relu(x)),
     lambda v: np.maximum(v, 0).sum()),
    ("exp", (5,),
     lambda x: T.reduce_sum(T.exp(x)),
     lambda v: np.exp(v).sum()),
    ("log", (5,),
     lambda x: T.reduce_sum(T.log(T.exp(x))),
     lambda v: np.log(np.exp(v)).sum()),
    ("neg", (5,),
     lambda x: T.reduce_sum(T.neg(T.square(x))),
     lambda v: -(v * v).sum()),
    ("scale", (5,),
     lambda x: T.reduce_sum(T.scale(x, -1.7)),
     lambda v: (-1.7 * v).sum()),
    ("square", (5,),
     lambda x: T.reduce_sum(T.square(x)),
     lambda v: (v * v).sum()),
    ("minimum", (7,),
     lambda x: T.reduce_sum(T.minimum(x, T.scale(x, -1.0))),
     lambda v: np.minimum(v, -v).sum()),
    ("maximum", (7,),
     lambda x: T.reduce_sum(T.maximum(x, T.scale(x, 0.5))),
     lambda v: np.maximum(v, 0.5 * v).sum()),
    ("clip", (7,),
     lambda x: T.reduce_sum(T.clip(x, -0.6, 0.9)),
     lambda v: np.clip(v, -0.6, 0.9).sum()),
    ("add_bias", (3,),
     lambda x: T.reduce_sum(T.tanh(T.add_bias(T.Tensor(B_CONST), x))),
     lambda v: np.tanh(B_CONST + v).sum()),
    ("reduce_sum_axis0", (4, 3),
     lambda x: T.reduce_sum(T.tanh(T.reduce_sum(x, axis=0))),
     lambda v: np.tanh(v.sum(axis=0)).sum()),
    ("reduce_mean_axis1", (4, 3),
     lambda x: T.reduce_sum(T.square(T.reduce_mean(x, axis=1))),
     lambda v: (v.mean(axis=1) ** 2).sum()),
    ("reduce_mean_all", (4, 3),
     lambda x: T.square(T.reduce_mean(x)),
     lambda v: v.mean() ** 2),
    ("gather_rows", (5, 3),
     lambda x: T.reduce_sum(T.tanh(T.gather_rows(x, [0, 2, 2]))),
     lambda v: np.tanh(v[[0, 2, 2]]).sum()),
    ("take_per_row", (4, 3),
     lambda x: T.reduce_sum(T.square(T.take_per_row(x, [0, 2, 1, 1]))),
     lambda v: (v[np.arange(4), [0, 2, 1, 1]] ** 2).sum()),
    ("slice_cols", (4, 5),
     lambda x: T.reduce_sum(T.tanh(T.slice_cols(x, 1, 4))),
     lambda v: np.tanh(v[:, 1:4]).sum()),
    ("concat_rows", (3, 4),
     lambda x: T.reduce_sum(T.tanh(T.concat_rows([x, T.scale(x, 2.0)]))),
     lambda v: np.tanh(np.concatenate([v, 2 * v])).sum()),
    ("reshape", (6,),
     lambda x: T.reduce_sum(T.square(T.reshape(x, (2, 3)))),
     lambda v: (v.reshape(2, 3) ** 2).sum()),
    ("scale_rows", (5, 3),
     lambda x: T.reduce_sum(T.scale_rows(x, ROW_FACTORS)),
     lambda v: (v * ROW_FACTORS[:, None]).sum()),
    ("segment_sum_rows", (5, 3),
     lambda x: T.reduce_sum(T.tanh(T.segment_sum_rows(x, SRC, DST, 5))),
     lambda v: np.tanh(_segsum64(v)).sum()),
    ("log_softmax_rows", (3, 4),
     lambda x: T.reduce_sum(T.square(T.log_softmax_rows(x))),
     lambda v: (_logsoftmax64(v) ** 2).sum()),
]


def _segsum64(v):
    out = np.zeros((5, v.shape[1]))
    for s, d in zip(SRC, DST):
        out[d] += v[s]
    return out


def _logsoftmax64(v):
    s = v - v.max(axis=1, keepdims=True)
    return s - np.log(np.exp(s).sum(axis=1, keepdims=True))


@pytest.mark.parametrize("name,shape,build,shadow", PRIMITIVE_CASES,
                         ids=[c[0] for c in PRIMITIVE_CASES])
def test_primitive_gradients_match_finite_differences(name, shape, build, shadow):
    for seed in range(3):
        x0 = _rand(shape, seed) * 0.8
        analytic = grad_of(build, x0.astype(np.float32))
        expected = finite_diff_grad(shadow, x0)
        assert max_rel_err(analytic, expected) < TOL, name


def test_tanh_scalar_gradient_value():
    analytic = grad_of(lambda x: T.tanh(x), np.array(0.7))
    expected = finite_diff_grad(lambda v: np.tanh(v).sum(), np.array(0.7))
    assert max_rel_err(analytic, expected) < TOL


def test_composite_affine_tanh_gradients():
    rng = np.random.default_rng(11)
    w0 = rng.standard_normal((3, 2))
    b0 = rng.standard_normal(2)
    x0 = rng.standard_normal((4, 3))

    def build_w(w):
        return T.reduce_sum(T.tanh(T.add_bias(T.matmul(T.Tensor(x0), w), T.Tensor(b0))))

    analytic = grad_of(build_w, w0.astype(np.float32))
    expected = finite_diff_grad(lambda v: np.tanh(x0 @ v + b0).sum(), w0)
    assert max_rel_err(analytic, expected) < TOL

    b_t = T.Tensor(b0, requires_grad=True)
    with T.Tape():
        loss = T.reduce_sum(T.tanh(T.add_bias(
            T.matmul(T.Tensor(x0), T.Tensor(w0)), b_t)))
        T.backward(loss)
    expected_b = finite_diff_grad(lambda v: np.tanh(x0 @ w0 + v).sum(), b0)
    assert max_rel_err(b_t.grad, expected_b) < TOL


def test_tape_clear_drops_records():
    x = T.Tensor(1.0, requires_grad=True)
    with T.Tape() as tape:
        T.mul(x, x)
        assert len(tape) == 1
        tape.clear()
        assert len(tape) == 0
