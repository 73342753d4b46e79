import numpy as np
import pytest

from ufe.autograd import Tensor, check_gradient
from ufe.nn import Dropout, Linear, Lstm, Module, Parameter, RecurrentStack

TOL = 1e-4


def project(out):
    w = np.random.default_rng(out.data.size + 7).standard_normal(out.shape)
    return (out * Tensor(w)).sum()


class TestLinear:
    def test_shapes(self, rng):
        layer = Linear(5, 3, rng)
        out = layer(Tensor(rng.standard_normal((7, 2, 5))))
        assert out.shape == (7, 2, 3)

    def test_grads(self, rng):
        layer = Linear(4, 3, rng)
        x = Tensor(rng.standard_normal((6, 4)), requires_grad=True)
        fn = lambda x, w, b: project(x @ w + b)
        tensors = [x, layer.weight, layer.bias]
        for index in range(3):
            assert check_gradient(fn, tensors, index) < TOL

    def test_named_parameters(self, rng):
        layer = Linear(4, 3, rng, name="proj")
        names = dict(layer.named_parameters())
        assert set(names) == {"weight", "bias"}
        assert names["weight"].name == "proj.weight"
        assert names["weight"].requires_grad


class TestLstm:
    def test_output_shape_and_state(self, rng):
        layer = Lstm(3, 5, rng)
        out, (h, c) = layer(Tensor(rng.standard_normal((4, 2, 3))))
        assert out.shape == (4, 2, 5)
        assert h.shape == (2, 5) and c.shape == (2, 5)
        np.testing.assert_array_equal(out.data[-1], h.data)

    def test_forget_bias_open(self, rng):
        layer = Lstm(3, 5, rng)
        np.testing.assert_array_equal(layer.bias.data[5:10], 1.0)
        np.testing.assert_array_equal(layer.bias.data[:5], 0.0)

    def test_state_carry_equals_full_run(self, rng):
        layer = Lstm(3, 4, rng)
        x = Tensor(rng.standard_normal((6, 2, 3)))
        full, _ = layer(x)
        first, state = layer(x[:4])
        second, _ = layer(x[4:], state=state)
        np.testing.assert_allclose(first.data, full.data[:4], atol=1e-12)
        np.testing.assert_allclose(second.data, full.data[4:], atol=1e-12)

    def test_all_parameter_grads(self, rng):
        layer = Lstm(3, 4, rng)
        x = Tensor(rng.standard_normal((3, 2, 3)), requires_grad=True)

        def fn(x, wx, wh, b):
            out, _ = layer(x)
            return project(out)

        tensors = [x, layer.w_input, layer.w_hidden, layer.bias]
        for index in range(4):
            assert check_gradient(fn, tensors, index, coords=20,
                                  rng=rng) < TOL

    def test_zero_initial_state(self, rng):
        layer = Lstm(3, 4, rng)
        h, c = layer.initial_state(5)
        assert not h.requires_grad
        np.testing.assert_array_equal(h.data, 0.0)
        np.testing.assert_array_equal(c.data, 0.0)


class TestDropout:
    def test_eval_identity(self, rng):
        drop = Dropout(0.5)
        drop.set_training(False)
        x = Tensor(rng.standard_normal((4, 5)))
        np.testing.assert_array_equal(drop(x).data, x.data)

    def test_zero_rate_identity(self, rng):
        drop = Dropout(0.0)
        x = Tensor(rng.standard_normal((4, 5)))
        np.testing.assert_array_equal(drop(x, rng).data, x.data)

    def test_training_needs_generator(self, rng):
        with pytest.raises(ValueError, match="generator"):
            Dropout(0.5)(Tensor(rng.standard_normal(3)))

    def test_scaling_preserves_mean(self):
        drop = Dropout(0.3)
        x = Tensor(np.ones((100, 100)))
        out = drop(x, np.random.default_rng(0))
        assert abs(out.data.mean() - 1.0) < 0.02
        kept = out.data[out.data != 0]
        np.testing.assert_allclose(kept, 1.0 / 0.7, atol=1e-12)

    def test_bad_rate(self):
        with pytest.raises(ValueError):
            Dropout(1.0)


class TestRecurrentStack:
    def test_shapes_and_states(self, rng):
        stack = RecurrentStack(3, 6, num_layers=3, rng=rng)
        out, states = stack(Tensor(rng.standard_normal((5, 2, 3))))
        assert out.shape == (5, 2, 6)
        assert len(states) == 3

    def test_parameter_names_unique(self, rng):
        stack = RecurrentStack(3, 6, num_layers=3, rng=rng)
        names = [n for n, _ in stack.named_parameters()]
        assert len(names) == len(set(names)) == 9

    def test_dropout_only_between_layers(self, rng):
        stack = RecurrentStack(3, 4, num_layers=2, rng=rng, dropout=0.9)
        stack.set_training(False)
        x = Tensor(rng.standard_normal((4, 1, 3)))
        a, _ = stack(x)
        b, _ = stack(x)
        np.testing.assert_array_equal(a.data, b.data)

    def test_set_training_recurses(self, rng):
        stack = RecurrentStack(3, 4, num_layers=2, rng=rng, dropout=0.5)
        stack.set_training(False)
        assert stack.drop.training is False
        stack.set_training(True)
        assert stack.drop.training is True


class TestModuleDiscovery:
    def test_nested_modules_and_lists(self, rng):
        class Inner(Module):
            def __init__(self):
                self.p = Parameter(np.zeros(2), name="p")

        class Outer(Module):
            def __init__(self):
                self.one = Inner()
                self.many = [Inner(), Inner()]

        outer = Outer()
        names = [n for n, _ in outer.named_parameters()]
        assert names == ["one.p", "many.0.p", "many.1.p"]

    def test_zero_grad(self, rng):
        layer = Linear(3, 2, rng)
        out = layer(Tensor(rng.standard_normal((4, 3)))).sum()
        out.backward()
        assert layer.weight.grad is not None
        layer.zero_grad()
        assert layer.weight.grad is None
