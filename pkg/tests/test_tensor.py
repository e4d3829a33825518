import numpy as np
import pytest

from src.autodiff import Tensor, grad_check, no_grad
from src.autodiff import functional as F
from src.core.errors import ContractError, DomainError, ShapeError


class TestArithmetic:
    def test_broadcast_add_reduces_gradient(self):
        a = Tensor(np.ones((3, 4)), requires_grad=True)
        b = Tensor(np.ones(4), requires_grad=True)
        (a + b).sum().backward()
        np.testing.assert_allclose(a.grad, np.ones((3, 4)))
        np.testing.assert_allclose(b.grad, np.full(4, 3.0))

    def test_product_rule(self):
        x = Tensor(np.array([2.0, -3.0]), requires_grad=True)
        (x * x * x).sum().backward()
        np.testing.assert_allclose(x.grad, 3 * x.data ** 2)

    def test_reused_node_accumulates(self):
        x = Tensor(np.array(1.5), requires_grad=True)
        y = x * 2.0
        (y + y * y).backward()
        # d/dx (2x + 4x^2) = 2 + 8x
        np.testing.assert_allclose(x.grad, 2 + 8 * 1.5)

    def test_backward_twice_accumulates_until_zero_grad(self):
        x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        (x * 3.0).sum().backward()
        (x * 3.0).sum().backward()
        np.testing.assert_allclose(x.grad, [6.0, 6.0])
        x.zero_grad()
        assert x.grad is None

    def test_matmul_gradients(self, rng):
        a = rng.normal(size=(3, 4))
        b = rng.normal(size=(4, 2))
        report = grad_check(lambda x, y: ((x @ y) ** 2).sum(), [a, b])
        assert report.passed(1e-6)

    def test_gather_scatters_back(self):
        x = Tensor(np.arange(5.0), requires_grad=True)
        x[np.array([0, 0, 3])].sum().backward()
        np.testing.assert_allclose(x.grad, [2.0, 0.0, 0.0, 1.0, 0.0])


class TestErrors:
    def test_matmul_shape_error_names_shapes(self):
        with pytest.raises(ShapeError) as info:
            Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))
        assert info.value.op == "matmul"
        assert (2, 3) in info.value.shapes

    def test_incompatible_broadcast(self):
        with pytest.raises(ShapeError):
            Tensor(np.ones(3)) + Tensor(np.ones(4))

    def test_log_of_non_positive(self):
        with pytest.raises(DomainError):
            Tensor(np.array([1.0, 0.0])).log()

    def test_division_by_zero(self):
        with pytest.raises(DomainError):
            Tensor(np.ones(2)) / Tensor(np.array([1.0, 0.0]))

    def test_backward_needs_scalar(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(ContractError):
            (x * 2.0).backward()


class TestReductions:
    def test_max_gradient_goes_to_first_argmax(self):
        x = Tensor(np.array([[1.0, 3.0, 3.0], [2.0, 0.0, 1.0]]), requires_grad=True)
        x.max(axis=1).sum().backward()
        np.testing.assert_allclose(x.grad, [[0, 1, 0], [1, 0, 0]])

    def test_mean_gradient(self):
        x = Tensor(np.ones((2, 5)), requires_grad=True)
        x.mean(axis=1).sum().backward()
        np.testing.assert_allclose(x.grad, np.full((2, 5), 0.2))


class TestNoGrad:
    def test_no_graph_recorded(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with no_grad():
            y = (x * 2.0).sum()
        assert not y.requires_grad
        assert y.is_leaf

    def test_state_restored_after_exception(self):
        x = Tensor(np.ones(3), requires_grad=True)
        with pytest.raises(RuntimeError):
            with no_grad():
                raise RuntimeError("boom")
        assert (x * 2.0).requires_grad


class TestFunctional:
    def test_softmax_rows_sum_to_one(self, rng):
        out = F.softmax(rng.normal(size=(4, 6)) * 50, axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), np.ones(4))

    def test_log_softmax_stable_for_large_logits(self):
        out = F.log_softmax(Tensor(np.array([[1000.0, 0.0]])), axis=1)
        np.testing.assert_allclose(out.data, [[0.0, -1000.0]])

    def test_softplus_matches_definition(self):
        x = np.array([-30.0, -1.0, 0.0, 2.0, 40.0])
        np.testing.assert_allclose(F.softplus(x).data, np.logaddexp(0.0, x))

    def test_sliding_windows_shape_and_order(self):
        x = np.arange(2 * 4 * 4 * 3, dtype=np.float64).reshape(2, 4, 4, 3)
        out = F.sliding_windows(x, 3, stride=1, padding=1)
        assert out.shape == (2, 4, 4, 27)
        # centre window at (1, 1): rows 0..2, cols 0..2, channels innermost
        np.testing.assert_allclose(out.data[0, 1, 1], x[0, 0:3, 0:3, :].reshape(-1))

    def test_squared_distance_self_is_zero(self, rng):
        a = rng.normal(size=(5, 3))
        np.testing.assert_array_equal(np.diag(F.squared_distance(a, a).data), np.zeros(5))

    @pytest.mark.parametrize("name,fn", [
        ("gelu", lambda x: (F.gelu(x) ** 2).sum()),
        ("sigmoid", lambda x: (F.sigmoid(x) * np.arange(12.0).reshape(3, 4)).sum()),
        ("log_softmax", lambda x: (F.log_softmax(x, axis=1) * np.arange(12.0).reshape(3, 4)).sum()),
        ("l2_normalize", lambda x: (F.l2_normalize(x) * np.arange(12.0).reshape(3, 4)).sum()),
        ("layer_norm", lambda x: (F.layer_norm(x, np.full(4, 1.5), np.zeros(4)) * np.arange(12.0).reshape(3, 4)).sum()),
    ])
    def test_gradients(self, rng, name, fn):
        report = grad_check(fn, rng.normal(size=(3, 4)))
        assert report.passed(1e-5), f"{name}: {report.max_rel_error}"

    def test_sliding_window_gradient(self, rng):
        probe = rng.normal(size=(1, 2, 2, 18))
        report = grad_check(lambda x: (F.sliding_windows(x, 3, 2, 1) * probe).sum(), rng.normal(size=(1, 4, 4, 2)))
        assert report.passed(1e-6)


WEIGHTS = np.arange(12.0).reshape(3, 4) - 5.0


def positive(rng):
    return rng.uniform(0.5, 2.0, size=(3, 4))


def centred(rng):
    return rng.normal(size=(3, 4))


class TestAdjoints:
    @pytest.mark.parametrize("name,fn,sample", [
        ("exp", lambda x: (x.exp() * WEIGHTS).sum(), centred),
        ("log", lambda x: (x.log() * WEIGHTS).sum(), positive),
        ("sqrt", lambda x: (x.sqrt() * WEIGHTS).sum(), positive),
        ("reciprocal", lambda x: (x.reciprocal() * WEIGHTS).sum(), positive),
        ("div", lambda x: (x / (x * x + 1.0) * WEIGHTS).sum(), centred),
        ("rdiv", lambda x: (2.0 / x * WEIGHTS).sum(), positive),
        ("pow_int", lambda x: (x ** 3 * WEIGHTS).sum(), centred),
        ("pow_frac", lambda x: (x ** 1.5 * WEIGHTS).sum(), positive),
        ("max", lambda x: (x.max(axis=1) * np.array([1.0, -2.0, 3.0])).sum(), centred),
        ("softmax", lambda x: (F.softmax(x, axis=1) * WEIGHTS).sum(), centred),
        ("relu", lambda x: (F.relu(x) * WEIGHTS).sum(), centred),
        ("concatenate", lambda x: (F.concatenate([x, x * 2.0], axis=1) * np.arange(24.0).reshape(3, 8)).sum(),
         centred),
        ("transpose", lambda x: (x.transpose() * WEIGHTS.T).sum(), centred),
    ])
    def test_matches_central_differences(self, rng, name, fn, sample):
        report = grad_check(fn, sample(rng))
        assert report.passed(1e-5), f"{name}: {report.max_rel_error}"

    @pytest.mark.parametrize("seed", range(20))
    def test_composite_at_random_points(self, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=(4, 5))

        def composite(x):
            h = F.gelu(x @ w)
            return (F.log_softmax(h, axis=1) * np.arange(5.0)).sum() + (F.sigmoid(x) ** 2).mean()

        assert grad_check(composite, rng.normal(size=(3, 4))).passed(1e-5)

    def test_gradient_is_linear(self, rng):
        x0 = rng.normal(size=(3, 4))

        def f(x):
            return (F.softmax(x, axis=1) * WEIGHTS).sum()

        def g(x):
            return (x * x * x).sum()

        def gradient(fn):
            x = Tensor(x0.copy(), requires_grad=True)
            fn(x).backward()
            return x.grad

        a, b = 0.7, -2.5
        combined = gradient(lambda x: a * f(x) + b * g(x))
        np.testing.assert_allclose(combined, a * gradient(f) + b * gradient(g), rtol=1e-12, atol=1e-12)


class TestWorkedValues:
    def test_softmax_of_equal_logits(self):
        np.testing.assert_allclose(F.softmax(Tensor(np.array([0.0, 0.0]))).data, [0.5, 0.5])

    def test_identity_matmul(self, rng):
        a = rng.normal(size=(3, 2))
        np.testing.assert_array_equal((Tensor(np.eye(3)) @ Tensor(a)).data, a)

    def test_sigmoid_of_zero(self):
        assert F.sigmoid(Tensor(np.array(0.0))).item() == 0.5

    def test_square_derivative(self):
        x = Tensor(np.array(3.0), requires_grad=True)
        (x * x).backward()
        assert x.grad == pytest.approx(6.0)

    def test_softmax_total_has_zero_gradient(self, rng):
        x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        F.softmax(x, axis=1).sum().backward()
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)
