import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gtalign import numerics as ad
from gtalign.numerics import ShapeError, Tensor, build_tape, grad_check
from gtalign.structattn import rope_freqs

from oracles import central_difference, rotate_complex, softmax_rows


def param(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


def test_softmax_of_zeros_is_uniform():
    assert np.array_equal(ad.softmax(Tensor(np.zeros(2))).data, [0.5, 0.5])


def test_identity_matmul():
    m = np.random.default_rng(0).standard_normal((3, 4))
    assert np.array_equal(ad.matmul(Tensor(np.eye(3)), Tensor(m)).data, m)


def test_cross_entropy_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    z = rng.standard_normal((1, 5))
    x = param(z)
    ad.cross_entropy(x, [3]).backward()

    def f(v):
        return -np.log(softmax_rows(v)[0, 3])

    num = central_difference(f, z.copy())
    rel = np.max(np.abs(x.grad - num)) / np.max(np.abs(num))
    assert rel < 1e-6


def test_cross_entropy_sum_and_mean():
    logits = np.random.default_rng(2).standard_normal((4, 6))
    t = [0, 5, 2, 2]
    ref = -np.log(softmax_rows(logits)[np.arange(4), t])
    assert ad.cross_entropy(Tensor(logits), t).data == pytest.approx(ref.sum(), abs=1e-12)
    assert ad.cross_entropy(Tensor(logits), t, reduction="mean").data == pytest.approx(ref.mean(), abs=1e-12)


def test_shape_errors_name_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(3, 2\)"):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_no_general_broadcasting():
    # only leading-batch expansion is allowed; (3,) + (3, 1) is not that
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.zeros(3)), Tensor(np.zeros((3, 1))))
    out = ad.add(Tensor(np.ones((2, 3))), Tensor(np.arange(3.0)))
    assert out.shape == (2, 3)


def test_quadratic_grad_check():
    x = param([1.0, 2.0])
    ad.sum(ad.mul(x, x)).backward()
    assert np.allclose(x.grad, [2.0, 4.0], atol=0)
    (rep,) = grad_check(lambda: ad.sum(ad.mul(x, x)), [x])
    assert rep.max_abs_error < 1e-8 and rep.passed


def test_constant_function_has_zero_gradient():
    x = param([1.0, -3.0])
    c = Tensor(np.array(4.0))
    (rep,) = grad_check(lambda: ad.add(ad.scale(ad.sum(x), 0.0), c), [x])
    assert rep.max_abs_error == 0.0
    assert rep.passed


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_grad_check_rejects_non_finite():
    x = param([0.0])
    with pytest.raises(FloatingPointError):
        grad_check(lambda: ad.sum(ad.scale(x, np.inf)), [x])


def test_gradients_accumulate_until_zeroed():
    x = param([1.0, 2.0])
    ad.sum(x).backward()
    ad.sum(x).backward()
    assert np.array_equal(x.grad, [2.0, 2.0])
    ad.zero_grad([x])
    assert x.grad is None


def test_tape_is_topological():
    a, b = param(np.ones(3)), param(np.ones(3))
    c = ad.mul(a, b)
    d = ad.add(c, a)
    e = ad.sum(ad.mul(d, c))
    tape = build_tape(e)
    pos = {id(t): k for k, t in enumerate(tape)}
    for t in tape:
        for p in t.parents:
            assert pos[id(p)] < pos[id(t)]


def test_frozen_tensors_get_no_gradient():
    w = Tensor(np.ones((2, 2)))
    x = param(np.ones((3, 2)))
    ad.sum(ad.matmul(x, w)).backward()
    assert w.grad is None and x.grad is not None


# every primitive passes the checker on random shapes <= 8

dims = st.integers(1, 8)


def _check(f, params, tol=1e-6):
    for rep in grad_check(f, params):
        assert rep.max_rel_error < tol, rep


@settings(max_examples=15, deadline=None)
@given(dims, dims, dims, st.integers(0, 2**31))
def test_primitive_gradients(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = param(rng.standard_normal((n, k))), param(rng.standard_normal((k, m)))
    c = param(rng.standard_normal((n, k)))
    w = rng.standard_normal((n, m))
    _check(lambda: ad.sum(ad.mul(ad.matmul(a, b), Tensor(w))), [a, b])
    _check(lambda: ad.sum(ad.mul(ad.sub(ad.add(a, c), ad.neg(c)), a)), [a, c])
    _check(lambda: ad.sum(ad.mul(ad.softmax(a), c)), [a])
    _check(lambda: ad.sum(ad.mul(ad.log_softmax(a), c)), [a])
    _check(lambda: ad.mean(ad.mul(ad.transpose(a), ad.transpose(c))), [a, c])
    _check(lambda: ad.sum(ad.mul(ad.concat([a, c], axis=1), ad.concat([c, a], axis=1))), [a, c])
    idx = rng.integers(0, n, size=m + 1)
    _check(lambda: ad.sum(ad.mul(ad.gather(a, idx), ad.gather(c, idx))), [a, c])
    _check(lambda: ad.sum(ad.mul(ad.getitem(a, slice(0, max(1, n // 2))), ad.getitem(c, slice(0, max(1, n // 2))))), [a, c])
    _check(lambda: ad.sum(ad.mul(ad.reshape(a, (k, n)), ad.reshape(c, (k, n)))), [a, c])
    tgt = rng.integers(0, k, size=n)
    _check(lambda: ad.cross_entropy(a, tgt), [a])
    _check(lambda: ad.sum(ad.mul(ad.gelu(a), c)), [a, c])
    _check(lambda: ad.sum(ad.scale(ad.mul(a, a), 0.3)), [a])


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 8), st.sampled_from([2, 4, 6, 8]), st.integers(0, 2**31))
def test_layer_norm_rotary_masked_gradients(T, d, seed):
    rng = np.random.default_rng(seed)
    x = param(rng.standard_normal((T, d)))
    g, bb = param(rng.standard_normal(d)), param(rng.standard_normal(d))
    w = rng.standard_normal((T, d))
    _check(lambda: ad.sum(ad.mul(ad.layer_norm(x, g, bb), Tensor(w))), [x, g, bb])

    xr = param(rng.standard_normal((T, 2, d)))
    pos = param(rng.standard_normal(T) * 3)
    wr = rng.standard_normal((T, 2, d))
    _check(lambda: ad.sum(ad.mul(ad.rotary(xr, pos, rope_freqs(d)), Tensor(wr))), [xr, pos])

    allowed = np.tril(np.ones((T, T), dtype=bool))
    s = param(rng.standard_normal((T, T)))
    ws = Tensor(rng.standard_normal((T, T)))
    _check(lambda: ad.sum(ad.mul(ad.softmax(ad.masked_fill(s, allowed)), ws)), [s])


def test_batched_matmul_gradient_with_shared_right_operand():
    rng = np.random.default_rng(3)
    a = param(rng.standard_normal((3, 4, 5)))
    b = param(rng.standard_normal((5, 2)))
    w = Tensor(rng.standard_normal((3, 4, 2)))
    _check(lambda: ad.sum(ad.mul(ad.matmul(a, b), w)), [a, b])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_softmax_rows_are_distributions(k, seed):
    z = np.random.default_rng(seed).standard_normal((5, k)) * 30
    p = ad.softmax(Tensor(z)).data
    assert np.all((p >= 0) & (p <= 1))
    assert np.allclose(p.sum(-1), 1.0, atol=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([2, 4, 8, 16]), st.floats(-500, 500), st.integers(0, 2**31))
def test_rotary_preserves_norm_and_matches_complex_form(d, pos, seed):
    v = np.random.default_rng(seed).standard_normal((1, 1, d))
    r = ad.rotary(Tensor(v), Tensor(np.array([pos])), rope_freqs(d)).data[0, 0]
    assert abs(np.linalg.norm(r) - np.linalg.norm(v)) < 1e-9
    assert np.allclose(r, rotate_complex(v[0, 0], pos), atol=1e-9)
