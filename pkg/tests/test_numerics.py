import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gatefusion import numerics as nx
from gatefusion.numerics import ShapeError, Tensor, grad_check, parameter

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


class TestMatmul:
    def test_identity(self):
        b = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_array_equal(nx.matmul(Tensor(np.eye(2)), Tensor(b)).data, b)

    def test_zero_annihilates(self, rng):
        a = Tensor(rng.standard_normal((3, 4)))
        assert not nx.matmul(a, Tensor(np.zeros((4, 2)))).data.any()

    def test_hand_product(self):
        out = nx.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert out.data.tolist() == [[11.0]]

    def test_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
            nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))

    @pytest.mark.parametrize("seed", range(5))
    def test_associativity(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = (Tensor(r.standard_normal(s)) for s in ((3, 4), (4, 5), (5, 2)))
        left = nx.matmul(nx.matmul(a, b), c).data
        right = nx.matmul(a, nx.matmul(b, c)).data
        np.testing.assert_allclose(left, right, rtol=0, atol=1e-9)

    def test_batched_matches_loop(self, rng):
        a, w = rng.standard_normal((3, 4, 5)), rng.standard_normal((5, 2))
        out = nx.matmul(Tensor(a), Tensor(w)).data
        for i in range(3):
            np.testing.assert_allclose(out[i], a[i] @ w, atol=1e-14)


class TestSigmoid:
    def test_zero(self):
        assert nx.sigmoid(Tensor(0.0)).item() == 0.5

    def test_known_value(self):
        assert nx.sigmoid(Tensor(3.0)).item() == pytest.approx(0.952574, abs=1e-6)

    @given(arrays(np.float64, 6, elements=finite))
    def test_antisymmetry(self, x):
        np.testing.assert_allclose(nx.sigmoid(Tensor(-x)).data, 1 - nx.sigmoid(Tensor(x)).data, atol=1e-15)

    def test_saturates_without_nan(self):
        out = nx.sigmoid(Tensor([-1000.0, 1000.0])).data
        assert np.isfinite(out).all()

    @given(arrays(np.float64, 8, elements=st.floats(-30, 30)))
    def test_open_interval(self, x):
        out = nx.sigmoid(Tensor(x)).data
        assert ((out > 0) & (out < 1)).all()


class TestSoftmax:
    def test_uniform(self):
        assert nx.softmax_rows(Tensor([[0.0, 0.0]])).data.tolist() == [[0.5, 0.5]]

    def test_two_class_closed_form(self):
        np.testing.assert_allclose(nx.softmax_rows(Tensor([[0.0, math.log(3)]])).data, [[0.25, 0.75]], atol=1e-15)

    @given(arrays(np.float64, (3, 4), elements=finite), st.floats(-100, 100))
    def test_shift_invariance(self, x, c):
        np.testing.assert_allclose(nx.softmax_rows(Tensor(x + c)).data, nx.softmax_rows(Tensor(x)).data,
                                   atol=1e-12)

    # logit spreads beyond ~36 round the top probability to exactly 1.0 in float64
    @given(arrays(np.float64, (4, 5), elements=st.floats(-15, 15)))
    def test_rows_are_distributions(self, x):
        out = nx.softmax_rows(Tensor(x)).data
        np.testing.assert_allclose(out.sum(-1), 1.0, atol=1e-12)
        assert ((out > 0) & (out < 1)).all()

    def test_needs_two_classes(self):
        with pytest.raises(ShapeError):
            nx.softmax_rows(Tensor([[1.0]]))


class TestLayerNorm:
    ones, zeros = np.ones(2), np.zeros(2)

    def test_constant_row_is_zero(self):
        out = nx.layer_norm(Tensor([[5.0, 5.0, 5.0]]), np.ones(3), np.zeros(3)).data
        assert np.all(out == 0.0)

    def test_two_element_closed_form(self):
        out = nx.layer_norm(Tensor([[1.0, 3.0]]), self.ones, self.zeros, eps=1e-15).data
        np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-12)

    def test_default_eps(self):
        out = nx.layer_norm(Tensor([[1.0, 3.0]]), self.ones, self.zeros).data
        np.testing.assert_allclose(out, [[-1.0, 1.0]], atol=1e-5)

    @given(arrays(np.float64, (3, 6), elements=st.floats(-10, 10)))
    def test_idempotent(self, x):
        # skip rows whose spread is swamped by eps
        if (x.std(axis=1) < 1e-2).any():
            return
        g, b = np.ones(6), np.zeros(6)
        once = nx.layer_norm(Tensor(x), g, b, eps=1e-12).data
        twice = nx.layer_norm(Tensor(once), g, b, eps=1e-12).data
        np.testing.assert_allclose(twice, once, atol=1e-9)

    def test_affine(self, rng):
        x = rng.standard_normal((4, 3))
        g, b = rng.standard_normal(3), rng.standard_normal(3)
        plain = nx.layer_norm(Tensor(x), np.ones(3), np.zeros(3)).data
        np.testing.assert_allclose(nx.layer_norm(Tensor(x), g, b).data, plain * g + b, atol=1e-14)


class TestStopGrad:
    def test_forward_identity(self, rng):
        x = Tensor(rng.standard_normal((2, 3)))
        np.testing.assert_array_equal(nx.stop_grad(x).data, x.data)

    def test_no_gradient_through_detached_edge(self):
        w = parameter(2.0)
        loss = nx.stop_grad(w * 5.0)
        assert not loss.requires_grad

    def test_mixed_loss_gradient(self):
        w = parameter(3.0)
        (w * w + nx.stop_grad(w) * nx.stop_grad(w)).backward()
        assert w.grad == 6.0

    def test_fd_oracle_on_non_detached_term(self):
        # derivative of the live term alone, by central differences
        h = 1e-3
        fd = ((3.0 + h) ** 2 - (3.0 - h) ** 2) / (2 * h)
        w = parameter(3.0)
        (w * w + nx.stop_grad(w) * nx.stop_grad(w)).backward()
        assert w.grad == pytest.approx(fd, abs=1e-9)

    def test_detached_branch_acts_as_constant(self, rng):
        a = parameter(rng.standard_normal((3, 2)))
        b = parameter(rng.standard_normal((3, 2)))

        def grads(detached):
            a.zero_grad()
            b.zero_grad()
            nx.sum(a * a * detached(b * b) + a).backward()
            return a.grad.copy(), b.grad

        ga, gb = grads(nx.stop_grad)
        ga_const, _ = grads(lambda t: Tensor(t.data.copy()))
        assert np.array_equal(ga, ga_const)
        assert gb is None

    def test_upstream_parameters_receive_nothing(self, rng):
        a = parameter(rng.standard_normal(4))
        b = parameter(rng.standard_normal(4))
        nx.sum(a * nx.stop_grad(nx.exp(b) * 3.0)).backward()
        assert a.grad is not None and b.grad is None


class TestGradCheck:
    def test_quadratic_exact(self):
        w = parameter(3.0)
        rep = grad_check(lambda: w * w, {"w": w})
        assert rep.passed and rep.params[0].max_abs_err < 1e-9

    def test_sigmoid_at_zero(self):
        x = parameter(0.0)
        nx.sigmoid(x).backward()
        assert x.grad == 0.25
        assert grad_check(lambda: nx.sigmoid(x), [x]).passed

    def test_detects_wrong_gradient(self):
        x = parameter(np.array([0.3, -0.7]))

        def bad_square(t):
            return nx.tensor._make(t.data ** 2, (t,), lambda g: (g * t.data,), "bad")

        rep = grad_check(lambda: nx.sum(bad_square(x)), {"x": x})
        assert not rep.passed and rep.failures()[0].name == "x"

    @pytest.mark.filterwarnings("ignore:overflow encountered in exp:RuntimeWarning")
    def test_nonfinite_raises(self):
        x = parameter(1.0)
        with pytest.raises(nx.GradCheckError):
            grad_check(lambda: nx.exp(x * 1e6), [x])

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            grad_check(lambda: parameter(1.0), [], h=0.0)

    def test_frozen_stop_grad_oracle(self):
        w = parameter(3.0)
        rep = grad_check(lambda: w * w + nx.stop_grad(w) * nx.stop_grad(w), {"w": w})
        assert rep.passed


class TestTape:
    def test_shared_input_accumulates(self):
        x = parameter(2.0)
        y = x * x + x
        y.backward()
        assert x.grad == 5.0

    def test_diamond_graph_visits_once(self):
        x = parameter(1.5)
        a = x * 2.0
        b = a * a + a * 3.0
        b.backward()
        # d/dx (4x^2 + 6x) = 8x + 6
        assert x.grad == pytest.approx(18.0)

    def test_no_grad_builds_no_tape(self):
        x = parameter(1.0)
        with nx.no_grad():
            y = x * 3.0
        assert not y.requires_grad and y._parents == ()

    def test_inputs_without_grad_are_detached(self):
        y = Tensor(2.0) * Tensor(3.0)
        assert not y.requires_grad

    def test_backward_needs_scalar(self):
        x = parameter(np.ones(3))
        with pytest.raises(ShapeError):
            (x * 2.0).backward()

    def test_log_clamp(self):
        x = parameter(np.array([0.0, 1.0]))
        y = nx.log(x)
        assert y.data[0] == pytest.approx(math.log(1e-12))
        nx.sum(y).backward()
        assert x.grad[0] == 0.0 and x.grad[1] == 1.0

    def test_gelu_erf_form(self):
        assert nx.gelu(Tensor(1.0)).item() == pytest.approx(0.841345, abs=1e-6)
        assert nx.gelu(Tensor(0.0)).item() == 0.0

    def test_select_rows_mask(self):
        x = parameter(np.arange(6.0).reshape(3, 2))
        y = nx.select_rows(x, np.array([True, False, True]))
        assert y.data.tolist() == [[0, 1], [4, 5]]
        nx.sum(y).backward()
        assert x.grad.tolist() == [[1, 1], [0, 0], [1, 1]]


@pytest.mark.parametrize("name,op", [
    ("sigmoid", nx.sigmoid), ("exp", nx.exp), ("gelu", nx.gelu), ("softmax", nx.softmax_rows),
])
@pytest.mark.parametrize("seed", range(20))
def test_unary_ops_pass_grad_check(name, op, seed):
    r = np.random.default_rng(seed)
    x = parameter(r.standard_normal((r.integers(1, 5), r.integers(2, 9))))
    w = r.standard_normal(x.shape)
    assert grad_check(lambda: nx.sum(op(x) * w), {"x": x}).passed


@pytest.mark.parametrize("seed", range(20))
def test_layer_norm_grad_check(seed):
    r = np.random.default_rng(seed)
    f = r.integers(2, 9)
    x, g, b = (parameter(r.standard_normal(s)) for s in ((r.integers(1, 5), f), (f,), (f,)))
    w = r.standard_normal(x.shape)
    assert grad_check(lambda: nx.sum(nx.layer_norm(x, g, b) * w), [x, g, b]).passed


def test_gradcheck_flags_injected_sigmoid_sign_error(monkeypatch):
    from gatefusion.gradcheck_suite import format_report, run_suite
    from gatefusion.numerics import tensor as tmod

    real_make = tmod._make

    def mutated(out, parents, backward, name):
        if name == "sigmoid":
            inner = backward
            backward = lambda g: tuple(-d for d in inner(g))  # noqa: E731
        return real_make(out, parents, backward, name)

    monkeypatch.setattr(tmod, "_make", mutated)
    results = run_suite(instances=3, only={"sigmoid", "gelu"})
    failed = [r.op for r in results if not r.passed]
    assert failed == ["sigmoid"]
    assert "sigmoid" in format_report(results) and "FAIL" in format_report(results)
