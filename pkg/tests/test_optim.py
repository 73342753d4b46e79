import numpy as np
import pytest

from ufe.nn import Parameter
from ufe.optim import Adam, EarlyStopper, PlateauHalver


def quadratic_params(rng):
    target = np.array([1.0, -2.0, 3.0])
    p = Parameter(rng.standard_normal(3), name="x")
    return p, target


class TestAdam:
    def test_converges_on_quadratic(self, rng):
        p, target = quadratic_params(rng)
        opt = Adam([("x", p)], lr=0.1, weight_decay=0.0)
        for _ in range(300):
            p.grad = 2.0 * (p.data - target)
            opt.step()
        np.testing.assert_allclose(p.data, target, atol=1e-3)

    def test_first_step_is_signed_lr(self):
        p = Parameter(np.array([1.0, 1.0]), name="x")
        opt = Adam([("x", p)], lr=0.01, weight_decay=0.0, eps=0.0)
        p.grad = np.array([3.0, -0.25])
        opt.step()
        # bias-corrected first step moves by exactly lr * sign(grad)
        np.testing.assert_allclose(p.data, [0.99, 1.01], atol=1e-12)

    def test_decoupled_decay_without_gradient(self):
        p = Parameter(np.array([2.0]), name="x")
        opt = Adam([("x", p)], lr=0.5, weight_decay=0.1)
        p.grad = None
        opt.step()
        np.testing.assert_allclose(p.data, [2.0 * (1 - 0.5 * 0.1)],
                                   atol=1e-15)
        assert np.all(opt.first_moment["x"] == 0.0)

    def test_decay_multiplicative_not_gradient_coupled(self):
        # the decay factor must not depend on the gradient magnitude
        a = Parameter(np.array([10.0]), name="x")
        opt_a = Adam([("x", a)], lr=0.1, weight_decay=0.01, eps=0.0)
        a.grad = np.array([1.0])
        opt_a.step()
        b = Parameter(np.array([10.0]), name="x")
        opt_b = Adam([("x", b)], lr=0.1, weight_decay=0.01, eps=0.0)
        b.grad = np.array([100.0])
        opt_b.step()
        # both first steps are lr*sign(g) after the same decay shrink
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_grads_finite(self, rng):
        p, _ = quadratic_params(rng)
        opt = Adam([("x", p)])
        assert not opt.grads_finite()  # None grad
        p.grad = np.ones(3)
        assert opt.grads_finite()
        p.grad = np.array([1.0, np.nan, 0.0])
        assert not opt.grads_finite()
        p.grad = np.array([1.0, np.inf, 0.0])
        assert not opt.grads_finite()

    def test_state_roundtrip_resumes_identically(self, rng):
        grads = [rng.standard_normal(3) for _ in range(10)]

        def run(split):
            p = Parameter(np.zeros(3), name="x")
            opt = Adam([("x", p)], lr=0.05)
            for g in grads[:split]:
                p.grad = g.copy()
                opt.step()
            if split < len(grads):
                state = opt.state_dict()
                data = p.data.copy()
                p2 = Parameter(data, name="x")
                opt2 = Adam([("x", p2)], lr=0.05)
                opt2.load_state_dict(state)
                for g in grads[split:]:
                    p2.grad = g.copy()
                    opt2.step()
                return p2.data
            return p.data

        np.testing.assert_array_equal(run(10), run(4))

    def test_duplicate_names_rejected(self):
        p = Parameter(np.zeros(1), name="x")
        q = Parameter(np.zeros(1), name="x")
        with pytest.raises(ValueError, match="unique"):
            Adam([("x", p), ("x", q)])


class TestPlateauHalver:
    def test_halves_after_two_stale_epochs(self):
        opt = Adam([("x", Parameter(np.zeros(1), name="x"))], lr=1e-3)
        sched = PlateauHalver(opt, patience=2)
        assert sched.step(10.0)
        assert sched.step(9.0)
        assert not sched.step(9.5)
        assert opt.lr == 1e-3
        assert not sched.step(9.2)
        assert opt.lr == 5e-4

    def test_counter_resets_on_improvement(self):
        opt = Adam([("x", Parameter(np.zeros(1), name="x"))], lr=1e-3)
        sched = PlateauHalver(opt, patience=2)
        sched.step(10.0)
        sched.step(11.0)
        sched.step(9.0)   # improvement resets the stale count
        sched.step(9.5)
        assert opt.lr == 1e-3
        sched.step(9.5)
        assert opt.lr == 5e-4

    def test_counter_resets_after_halving(self):
        opt = Adam([("x", Parameter(np.zeros(1), name="x"))], lr=1e-3)
        sched = PlateauHalver(opt, patience=2)
        sched.step(10.0)
        for _ in range(4):
            sched.step(12.0)
        assert opt.lr == 2.5e-4


class TestEarlyStopper:
    def test_stops_after_patience(self):
        stop = EarlyStopper(patience=3)
        assert not stop.update(5.0)
        assert not stop.update(6.0)
        assert not stop.update(6.0)
        assert stop.update(6.0)

    def test_improvement_resets(self):
        stop = EarlyStopper(patience=2)
        stop.update(5.0)
        stop.update(6.0)
        assert not stop.update(4.0)
        assert not stop.update(5.0)
        assert stop.update(5.0)
