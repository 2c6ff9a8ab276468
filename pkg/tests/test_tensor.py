import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from graphkd import tensor as T
from graphkd.gradcheck import gradcheck, numerical_grad, relative_error
from graphkd.tensor import Adam, ShapeError, StepSchedule, Tensor, TensorError, backward, op_forward


@pytest.fixture(autouse=True)
def fresh_tape():
    T.reset_tape()
    yield
    T.reset_tape()


def rand(rng, *shape, away_from_zero=False):
    x = rng.standard_normal(shape)
    if away_from_zero:
        x = np.where(np.abs(x) < 1e-3, np.sign(x) * 1e-3 + x, x)
    return Tensor(x, requires_grad=True)


class TestForward:
    def test_matmul_identity(self):
        out = op_forward("matmul", [Tensor([[1, 2], [3, 4]]), Tensor(np.eye(2))])
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_sigmoid_zero(self):
        np.testing.assert_array_equal(op_forward("sigmoid", [Tensor(np.zeros(3))]).data, [0.5] * 3)

    def test_softmax_uniform(self):
        np.testing.assert_allclose(op_forward("softmax", [Tensor([[0.0, 0.0, 0.0]])]).data, [[1 / 3] * 3])

    def test_mean_abs(self):
        x = Tensor([[1, -3], [0, 2]])
        assert op_forward("mean", [op_forward("abs", [x])]).item() == 1.5

    def test_row_broadcast_add(self):
        out = T.add(Tensor(np.zeros((2, 3))), Tensor([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.data, [[1, 2, 3], [1, 2, 3]])

    def test_masked_mean_rows(self):
        x = Tensor([[1.0, 2.0], [3.0, 4.0], [100.0, 100.0]])
        out = T.masked_mean_rows(x, Tensor([1.0, 1.0, 0.0]))
        np.testing.assert_array_equal(out.data, [2.0, 3.0])

    def test_concat_rows(self):
        out = T.concat_rows([Tensor(np.ones((1, 2))), Tensor(np.zeros((2, 2)))])
        assert out.shape == (3, 2)

    def test_sigmoid_extremes_are_finite(self):
        out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
        np.testing.assert_array_equal(out, [0.0, 1.0])

    @pytest.mark.parametrize(
        "kind,shapes",
        [("matmul", [(2, 3), (2, 3)]), ("add", [(2, 3), (4,)]), ("mul", [(3,), (2,)]), ("concat_rows", [(1, 2), (1, 3)])],
    )
    def test_shape_mismatch_names_shapes(self, kind, shapes):
        with pytest.raises(ShapeError, match=r"\(2|\(1|\(3"):
            op_forward(kind, [Tensor(np.zeros(s)) for s in shapes])

    def test_unknown_kind(self):
        with pytest.raises(TensorError, match="unknown operation"):
            op_forward("conv2d", [Tensor(np.zeros(2))])

    def test_no_recording_without_grad(self):
        T.add(Tensor(np.ones(2)), Tensor(np.ones(2)))
        assert len(T.active_tape()) == 0

    def test_no_grad_context(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with T.no_grad():
            y = T.relu(x)
        assert not y.requires_grad and len(T.active_tape()) == 0


class TestBackward:
    def test_sum_grad_is_ones(self):
        x = Tensor(np.arange(4.0), requires_grad=True)
        backward(T.sum(x))
        np.testing.assert_array_equal(x.grad, [1, 1, 1, 1])

    def test_mean_abs_subgradient(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal(6), requires_grad=True)
        c = Tensor(rng.standard_normal(6))

        def loss():
            return T.mean(T.absolute(T.sub(x, c)))

        backward(loss())
        expected = np.sign(x.data - c.data) / 6
        np.testing.assert_allclose(x.grad, expected)
        np.testing.assert_allclose(numerical_grad(loss, x), expected, atol=1e-9)

    def test_abs_at_zero_has_zero_subgradient(self):
        x = Tensor([0.0, 2.0], requires_grad=True)
        backward(T.sum(T.absolute(x)))
        np.testing.assert_array_equal(x.grad, [0.0, 1.0])

    def test_gradients_accumulate(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        backward(T.sum(x))
        backward(T.sum(T.scalar_mul(x, 3.0)))
        np.testing.assert_array_equal(x.grad, [4.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError, match="scalar"):
            backward(T.relu(x))

    def test_tape_is_topological(self):
        rng = np.random.default_rng(1)
        x = rand(rng, 3, 4)
        w = rand(rng, 4, 2)
        T.sum(T.tanh(T.matmul(x, w)))
        seen = {id(x), id(w)}
        for op in T.active_tape().ops:
            assert all(id(i) in seen or not i.requires_grad for i in op.inputs)
            seen.add(id(op.output))

    def test_straight_through_passes_gradient_to_soft(self):
        hard = Tensor([[0.0, 1.0]])
        soft = Tensor([[0.3, 0.7]], requires_grad=True)
        out = T.straight_through(hard, soft)
        np.testing.assert_array_equal(out.data, hard.data)
        backward(T.sum(T.mul(out, Tensor([[2.0, 5.0]]))))
        np.testing.assert_array_equal(soft.grad, [[2.0, 5.0]])

    def test_reused_tensor_sums_paths(self):
        x = Tensor([3.0], requires_grad=True)
        backward(T.sum(T.mul(x, x)))
        np.testing.assert_allclose(x.grad, [6.0])


def _op_cases():
    """(name, builder(rng) -> (loss_fn, inputs)) for every differentiable kind on 3x4 inputs."""

    def unary(fn, **kw):
        def build(rng):
            x = rand(rng, 3, 4, **kw)
            return (lambda: T.sum(T.tanh(fn(x)))), {"x": x}

        return build

    def binary(fn, shape_b=(3, 4)):
        def build(rng):
            a, b = rand(rng, 3, 4), rand(rng, *shape_b)
            return (lambda: T.sum(T.tanh(fn(a, b)))), {"a": a, "b": b}

        return build

    def positive(fn):
        def build(rng):
            x = Tensor(rng.uniform(0.5, 2.0, (3, 4)), requires_grad=True)
            return (lambda: T.sum(fn(x))), {"x": x}

        return build

    def matmul_case(rng):
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        return (lambda: T.sum(T.tanh(T.matmul(a, b)))), {"a": a, "b": b}

    def batched_matmul(rng):
        a, b = rand(rng, 2, 3, 4), rand(rng, 4, 3)
        return (lambda: T.sum(T.tanh(T.matmul(a, b)))), {"a": a, "b": b}

    def div_case(rng):
        a = rand(rng, 3, 4)
        b = Tensor(rng.uniform(0.5, 2.0, (3, 1)), requires_grad=True)
        return (lambda: T.sum(T.tanh(T.div(a, b)))), {"a": a, "b": b}

    def masked_mean(rng):
        x = rand(rng, 2, 3, 4)
        mask = Tensor([[1, 1, 0], [1, 0, 0]])
        return (lambda: T.sum(T.tanh(T.masked_mean_rows(x, mask)))), {"x": x}

    def concat_case(rng):
        a, b = rand(rng, 3, 4), rand(rng, 1, 4)
        return (lambda: T.sum(T.tanh(T.concat_rows([a, b])))), {"a": a, "b": b}

    w = Tensor(np.linspace(-1, 1, 12).reshape(3, 4))
    return {
        "matmul": matmul_case,
        "batched_matmul": batched_matmul,
        "transpose": unary(lambda x: T.matmul(T.transpose(x), Tensor(np.ones((3, 4))))),
        "add": binary(T.add),
        "add_row_broadcast": binary(T.add, (4,)),
        "sub": binary(T.sub),
        "mul": binary(T.mul),
        "div": div_case,
        "scalar_mul": unary(lambda x: T.scalar_mul(x, -2.5)),
        "relu": unary(T.relu, away_from_zero=True),
        "leaky_relu": unary(lambda x: T.leaky_relu(x, 0.2), away_from_zero=True),
        "tanh": unary(T.tanh),
        "sigmoid": unary(T.sigmoid),
        "softmax": unary(T.softmax),
        "log_softmax": unary(T.log_softmax),
        "exp": unary(T.exp),
        "log": positive(T.log),
        "pow": positive(lambda x: T.power(x, -0.5)),
        "abs": unary(T.absolute, away_from_zero=True),
        "sum_axis": unary(lambda x: T.mul(T.sum(x, axis=1, keepdims=True), Tensor(np.ones((3, 4))))),
        "mean": unary(lambda x: T.mul(T.mean(x, axis=0), Tensor(np.ones((3, 4))))),
        "masked_mean_rows": masked_mean,
        "concat_rows": concat_case,
        "reshape": unary(lambda x: T.reshape(T.mul(x, w), (4, 3))),
        "permute": unary(lambda x: T.permute(T.reshape(T.mul(x, w), (3, 2, 2)), (2, 0, 1))),
    }


@pytest.mark.parametrize("name,build", list(_op_cases().items()))
def test_op_gradients_match_finite_differences(name, build):
    rng = np.random.default_rng(zlib.crc32(name.encode()))
    loss_fn, inputs = build(rng)
    report = gradcheck(loss_fn, inputs, step=1e-5, tolerance=1e-4)
    assert report.ok, f"{name}: {report}"


class TestAdam:
    def test_first_step_moves_by_lr(self):
        p = Tensor([1.0], requires_grad=True, name="p")
        p.grad = np.array([1.0])
        Adam([p], lr=0.1).step()
        # m_hat = v_hat = 1 after bias correction
        assert p.data[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)
        assert p.grad is None

    def test_zero_grad_leaves_params(self):
        p = Tensor([1.0, -2.0], requires_grad=True)
        p.grad = np.zeros(2)
        Adam([p], lr=0.1).step()
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_decoupled_weight_decay(self):
        p = Tensor([2.0], requires_grad=True)
        p.grad = np.zeros(1)
        Adam([p], lr=0.1, weight_decay=0.5).step()
        assert p.data[0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0)

    def test_missing_grad_names_parameter(self):
        p = Tensor([1.0], requires_grad=True, name="conv0.w")
        with pytest.raises(TensorError, match="conv0.w"):
            Adam([p]).step()

    def test_quadratic_loss_decreases(self):
        p = Tensor([3.0], requires_grad=True)
        opt = Adam([p], lr=0.1)
        losses = []
        for _ in range(3):
            T.reset_tape()
            loss = T.sum(T.mul(p, p))
            losses.append(loss.item())
            backward(loss)
            opt.step()
        assert losses[0] > losses[1] > losses[2]
        assert opt.step_count == 3

    def test_moments_match_shapes(self):
        params = [Tensor(np.zeros((2, 3)), True), Tensor(np.zeros(4), True)]
        opt = Adam(params)
        assert [m.shape for m in opt.m] == [(2, 3), (4,)]
        assert [v.shape for v in opt.v] == [(2, 3), (4,)]


class TestSchedule:
    def test_all_milestones(self):
        s = StepSchedule(1e-3, 100)
        assert s.milestone_epochs() == [10, 30, 50]
        assert s.lr_at(99) == 1e-3 * 0.3**3
        assert s.lr_at(0) == 1e-3
        assert s.lr_at(10) == pytest.approx(3e-4)
        assert s.lr_at(29) == pytest.approx(3e-4)

    def test_apply_sets_optimizer_lr(self):
        opt = Adam([Tensor([0.0], True)], lr=1.0)
        StepSchedule(1.0, 10).apply(opt, 5)
        assert opt.lr == pytest.approx(0.027)


finite_rows = arrays(np.float64, (3, 5), elements=st.floats(-50, 50, allow_nan=False))


@settings(max_examples=50, deadline=None)
@given(finite_rows)
def test_softmax_rows_sum_to_one(x):
    out = T.softmax(Tensor(x)).data
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(T.log_softmax(Tensor(x)).data, np.log(out), atol=1e-9)


def test_relative_error_scale():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_determinism_same_seed_same_trajectory():
    def run():
        T.reset_tape()
        rng = np.random.default_rng(7)
        w = Tensor(rng.standard_normal((4, 2)), requires_grad=True)
        x = Tensor(rng.standard_normal((5, 4)))
        opt = Adam([w], lr=0.05)
        for _ in range(5):
            backward(T.mean(T.absolute(T.tanh(T.matmul(x, w)))))
            opt.step()
        return w.data.tobytes()

    assert run() == run()
