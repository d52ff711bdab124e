import numpy as np
import pytest

from reasoner import tensor as T
from conftest import finite_diff_grad, rel_err


def grad_of(build, x0):
    """Reverse-mode gradient of a scalar-valued tensor expression."""
    xt = T.tensor(x0)
    tape = T.Tape()
    out = build(xt, tape)
    grads = T.gradient(tape, out)
    return out, grads[xt].arr


class TestElementwise:
    def test_add(self):
        assert T.add(T.tensor([1.0, 2.0]), T.tensor([3.0, 4.0])).tolist() == [4.0, 6.0]

    def test_mul_zero(self):
        assert T.mul(T.tensor([2.0, 3.0]), 0).tolist() == [0.0, 0.0]

    def test_exp_identity(self):
        assert T.exp(T.tensor([0.0])).tolist() == [1.0]

    def test_shape_mismatch_reports_both_shapes(self):
        with pytest.raises(ValueError) as err:
            T.add(T.tensor([1.0, 2.0]), T.tensor([1.0, 2.0, 3.0]))
        assert "(2,)" in str(err.value) and "(3,)" in str(err.value)

    def test_elementwise_dispatch(self):
        out = T.elementwise("mul", T.tensor([2.0]), T.tensor([21.0]))
        assert out.tolist() == [42.0]
        with pytest.raises(ValueError):
            T.elementwise("convolve", T.tensor([1.0]))


class TestMatvec:
    def test_identity(self):
        eye = T.constant(np.eye(2))
        assert T.matvec(eye, T.tensor([5.0, 7.0])).tolist() == [5.0, 7.0]

    def test_hand_computed(self):
        w = T.constant([[1.0, 1.0], [0.0, 1.0]])
        assert T.matvec(w, T.tensor([1.0, 2.0])).tolist() == [3.0, 2.0]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            T.matvec(T.constant(np.eye(3)), T.tensor([1.0, 2.0]))

    def test_adjoint_is_column_sums(self, rng):
        w = rng.normal(size=(4, 6))
        x0 = rng.uniform(-2, 2, size=6)
        _, grad = grad_of(lambda xt, tape: T.sum(T.matvec(T.constant(w), xt, tape), tape), x0)
        assert np.allclose(grad, w.sum(axis=0), atol=1e-12)
        fd = finite_diff_grad(lambda x: w @ x @ np.ones(4), x0)
        assert rel_err(grad, fd) < 1e-5

    def test_weight_adjoint_outer_product(self, rng):
        w0 = rng.normal(size=(3, 4))
        x = T.constant(rng.normal(size=4))
        wt = T.tensor(w0)
        tape = T.Tape()
        out = T.sum(T.matvec(wt, x, tape), tape)
        gw = T.gradient(tape, out)[wt].arr
        assert np.allclose(gw, np.outer(np.ones(3), x.arr), atol=1e-12)


class TestSoftmax:
    def test_symmetry(self):
        assert T.softmax(T.tensor([0.0, 0.0])).tolist() == [0.5, 0.5]

    def test_large_magnitude_no_overflow(self):
        out = T.softmax(T.tensor([1000.0, 0.0])).arr
        assert out[0] == pytest.approx(1.0) and out[1] < 1e-300
        assert np.isfinite(out).all()

    def test_sums_to_one_up_to_1e3(self, rng):
        for _ in range(50):
            z = rng.uniform(-1e3, 1e3, size=rng.integers(2, 12))
            out = T.softmax(T.tensor(z)).arr
            assert abs(out.sum() - 1.0) <= 1e-12
            assert (out > 0).all() or out.min() >= 0.0

    def test_nan_rejected(self):
        with pytest.raises(ValueError):
            T.softmax(T.tensor([np.nan, 0.0]))

    def test_vjp_matches_finite_differences(self, rng):
        v = rng.normal(size=5)
        x0 = rng.uniform(-2, 2, size=5)
        _, grad = grad_of(
            lambda xt, tape: T.sum(T.mul(T.softmax(xt, tape), T.constant(v), tape), tape),
            x0)
        fd = finite_diff_grad(
            lambda x: float(np.dot(np.exp(x - x.max()) / np.exp(x - x.max()).sum(), v)), x0)
        assert rel_err(grad, fd) < 1e-5


class TestGradient:
    def test_square(self):
        _, grad = grad_of(lambda xt, tape: T.sum(T.mul(xt, xt, tape), tape), [3.0])
        assert grad.tolist() == [6.0]

    def test_standard_gaussian_log_prior(self, rng):
        x0 = rng.normal(size=8)
        _, grad = grad_of(
            lambda xt, tape: T.muls(T.sum(T.mul(xt, xt, tape), tape), -0.5, tape), x0)
        assert np.allclose(grad, -x0, atol=1e-12)

    def test_non_scalar_output_rejected(self):
        xt = T.tensor([1.0, 2.0])
        tape = T.Tape()
        out = T.mul(xt, xt, tape)
        with pytest.raises(ValueError):
            T.gradient(tape, out)

    def test_tape_consumed_once(self):
        xt = T.tensor([1.0])
        tape = T.Tape()
        out = T.sum(T.mul(xt, xt, tape), tape)
        T.gradient(tape, out)
        with pytest.raises(RuntimeError):
            T.gradient(tape, out)

    def test_shared_input_accumulates(self):
        xt = T.tensor([2.0])
        tape = T.Tape()
        out = T.sum(T.add(xt, xt, tape), tape)
        assert T.gradient(tape, out)[xt].tolist() == [2.0]

    def test_constants_excluded(self):
        xt = T.tensor([1.0, 2.0])
        c = T.constant([3.0, 4.0])
        tape = T.Tape()
        out = T.sum(T.mul(xt, c, tape), tape)
        grads = T.gradient(tape, out)
        assert c not in grads and np.allclose(grads[xt].arr, c.arr)


def _primitive_cases(rng):
    v = rng.uniform(-2, 2, size=6)
    pos = rng.uniform(0.5, 2, size=6)
    w = rng.uniform(-2, 2, size=(3, 6))
    m = rng.uniform(-2, 2, size=(6, 2))
    return [
        ("add", v, lambda xt, tp: T.add(xt, T.constant(pos), tp),
         lambda x: x + pos),
        ("sub", v, lambda xt, tp: T.sub(T.constant(pos), xt, tp),
         lambda x: pos - x),
        ("mul", v, lambda xt, tp: T.mul(xt, xt, tp), lambda x: x * x),
        ("div", v, lambda xt, tp: T.div(xt, T.constant(pos), tp),
         lambda x: x / pos),
        ("div_denom", pos, lambda xt, tp: T.div(T.constant(v), xt, tp),
         lambda x: v / x),
        ("adds", v, lambda xt, tp: T.adds(xt, 1.5, tp), lambda x: x + 1.5),
        ("muls", v, lambda xt, tp: T.muls(xt, -2.5, tp), lambda x: -2.5 * x),
        ("exp", v, lambda xt, tp: T.exp(xt, tp), np.exp),
        ("log", pos, lambda xt, tp: T.log(xt, tp), np.log),
        ("tanh", v, lambda xt, tp: T.tanh(xt, tp), np.tanh),
        ("relu", v, lambda xt, tp: T.relu(xt, tp),
         lambda x: np.maximum(x, 0.0)),
        ("leaky", v, lambda xt, tp: T.leaky_relu(xt, 0.1, tp),
         lambda x: np.where(x > 0, x, 0.1 * x)),
        ("sigmoid", v, lambda xt, tp: T.sigmoid(xt, tp),
         lambda x: 1 / (1 + np.exp(-x))),
        ("softmax", v, lambda xt, tp: T.softmax(xt, tp),
         lambda x: np.exp(x - x.max()) / np.exp(x - x.max()).sum()),
        ("matvec", v, lambda xt, tp: T.matvec(T.constant(w), xt, tp),
         lambda x: w @ x),
        ("matmul", v, lambda xt, tp: T.reshape(
            T.matmul(T.reshape(xt, (1, 6), tp), T.constant(m), tp), (2,), tp),
         lambda x: x @ m),
        ("reshape", v, lambda xt, tp: T.reshape(xt, (2, 3), tp),
         lambda x: x.reshape(2, 3)),
        ("slice", v, lambda xt, tp: T.slice(xt, 1, 4, tp), lambda x: x[1:4]),
        ("concat", v, lambda xt, tp: T.concat([xt, T.mul(xt, xt, tp)], tp),
         lambda x: np.concatenate([x, x * x])),
        ("sum", v, lambda xt, tp: T.sum(xt, tp), lambda x: x.sum()),
    ]


def test_every_primitive_matches_central_differences(rng):
    """Reverse mode vs central differences, h=1e-6, rtol 1e-5, inputs in [-2,2]."""
    probe = rng.normal(size=64)
    for name, x0, build, ref in _primitive_cases(rng):
        weights = probe[:np.asarray(ref(x0)).size].reshape(np.asarray(ref(x0)).shape)

        def scalar_build(xt, tape):
            out = build(xt, tape)
            flat = out if len(out.shape) == 1 else T.reshape(out, (out.size,), tape)
            return T.sum(T.mul(flat, T.constant(weights.reshape(-1)), tape), tape)

        _, grad = grad_of(scalar_build, x0)
        fd = finite_diff_grad(lambda x: float(
            (np.asarray(ref(x)).reshape(-1) * weights.reshape(-1)).sum()), x0)
        assert rel_err(grad, fd, floor=1e-6) < 1e-5, name


def test_forward_bitwise_identical_with_and_without_tape(rng):
    x = T.tensor(rng.normal(size=10))
    w = T.constant(rng.normal(size=(4, 10)))

    def run(tape):
        h = T.tanh(T.matvec(w, x, tape), tape)
        return T.softmax(h, tape).arr

    plain = run(None)
    taped = run(T.Tape())
    assert (plain == taped).all()


def test_composed_network_gradient(rng):
    """Chained dense/activation/softmax stack vs finite differences."""
    w1 = rng.normal(size=(8, 5))
    w2 = rng.normal(size=(3, 8))

    def build(xt, tape):
        h = T.tanh(T.matvec(T.constant(w1), xt, tape), tape)
        p = T.softmax(T.matvec(T.constant(w2), h, tape), tape)
        return T.sum(T.log(p, tape), tape)

    def ref(x):
        h = np.tanh(w1 @ x)
        z = w2 @ h
        p = np.exp(z - z.max()) / np.exp(z - z.max()).sum()
        return float(np.log(p).sum())

    for _ in range(20):
        x0 = rng.uniform(-2, 2, size=5)
        _, grad = grad_of(build, x0)
        assert rel_err(grad, finite_diff_grad(lambda x: ref(x), x0)) < 1e-5


def test_tensor_invariants():
    t = T.tensor([[1.0, 2.0], [3.0, 4.0]])
    assert t.shape == (2, 2) and t.data.shape == (4,)
    assert int(np.prod(t.shape)) == t.data.size
    with pytest.raises(ValueError):
        t.arr[0, 0] = 9.0
