"""Optimizer exactness and property tests.

Both update rules are checked bitwise against scalar reference loops written
independently here with plain Python floats and the math module.
"""

import math

import numpy as np
import pytest

from vvids.errors import ConfigError, DimensionError
from vvids.numerics import Tensor, make_rng
from vvids.optim import AdamW, Lion, adamw_step, default_decay_filter, lion_step


def scalar_lion(params, grads_per_step, lr, wd, beta1, beta2):
    """Reference Lion trajectory, one float at a time."""
    p = [float(x) for x in params]
    m = [0.0] * len(p)
    for grads in grads_per_step:
        for i, g in enumerate(grads):
            g = float(g)
            c = beta1 * m[i] + (1.0 - beta1) * g
            sign = 0.0 if c == 0.0 else math.copysign(1.0, c)
            p[i] = p[i] - lr * (sign + wd * p[i])
            m[i] = beta2 * m[i] + (1.0 - beta2) * g
    return p, m


def scalar_adamw(params, grads_per_step, lr, wd, beta1, beta2, eps):
    """Reference AdamW trajectory, one float at a time."""
    p = [float(x) for x in params]
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    t = 0
    for grads in grads_per_step:
        t += 1
        for i, g in enumerate(grads):
            g = float(g)
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * (g * g)
            mhat = m[i] / (1.0 - beta1 ** t)
            vhat = v[i] / (1.0 - beta2 ** t)
            p[i] = p[i] - lr * (mhat / (math.sqrt(vhat) + eps) + wd * p[i])
    return p, m, v


class TestLionStep:
    def test_sign_forced_first_step(self):
        param = np.zeros(3)
        grad = np.array([3.0, -7.0, 0.0])
        lr = 1e-4
        lion_step(param, grad, {}, lr=lr, weight_decay=0.0)
        np.testing.assert_array_equal(param, [-lr, lr, 0.0])

    def test_default_hyperparameters(self):
        opt = Lion({"p": Tensor([0.0], requires_grad=True)})
        assert opt.lr == 1e-4 and opt.weight_decay == 1e-4
        assert opt.beta1 == 0.9 and opt.beta2 == 0.99

    def test_trajectory_matches_scalar_oracle_bitwise(self):
        rng = make_rng(0)
        n = 17
        param = rng.normal(size=n)
        grads = [rng.normal(size=n) for _ in range(50)]
        expect_p, expect_m = scalar_lion(param, grads, lr=1e-3, wd=0.01,
                                         beta1=0.9, beta2=0.99)
        p = param.copy()
        state = {}
        for g in grads:
            lion_step(p, g, state, lr=1e-3, weight_decay=0.01)
        np.testing.assert_array_equal(p, np.array(expect_p))
        np.testing.assert_array_equal(state["m"], np.array(expect_m))

    def test_sign_invariance_under_gradient_scaling(self):
        rng = make_rng(1)
        for _ in range(100):
            grad = rng.normal(size=8)
            k = float(rng.uniform(0.01, 100.0))
            p1, p2 = np.ones(8), np.ones(8)
            lion_step(p1, grad, {}, lr=1e-3, weight_decay=0.0)
            lion_step(p2, k * grad, {}, lr=1e-3, weight_decay=0.0)
            np.testing.assert_array_equal(p1, p2)

    def test_updates_lie_on_lr_lattice(self):
        # from zero parameters the realized delta IS the update term exactly
        rng = make_rng(2)
        lr = 3e-4
        for _ in range(1000):
            param = np.zeros(5)
            state = {"m": rng.normal(size=5) * (rng.random() < 0.5)}
            lion_step(param, rng.normal(size=5), state, lr=lr, weight_decay=0.0)
            allowed = {0.0, lr, -lr}
            assert all(-d in allowed for d in param.tolist())

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            lion_step(np.zeros(3), np.zeros(4), {}, lr=1e-3)


class TestAdamWStep:
    def test_first_step_is_normalized_gradient(self):
        rng = make_rng(3)
        grad = rng.normal(size=6)
        param = np.zeros(6)
        lr, eps = 1e-3, 1e-8
        adamw_step(param, grad, {}, lr=lr, weight_decay=0.0, eps=eps)
        # mathematical identity; bias-correction division reorders rounding
        np.testing.assert_allclose(param, -lr * grad / (np.abs(grad) + eps),
                                   rtol=1e-12)

    def test_zero_gradient_leaves_param_unchanged(self):
        param = np.array([1.0, -2.0])
        adamw_step(param, np.zeros(2), {}, lr=1e-3, weight_decay=0.0)
        np.testing.assert_array_equal(param, [1.0, -2.0])

    def test_trajectory_matches_scalar_oracle_bitwise(self):
        rng = make_rng(4)
        n = 11
        param = rng.normal(size=n)
        grads = [rng.normal(size=n) for _ in range(50)]
        expect_p, expect_m, expect_v = scalar_adamw(
            param, grads, lr=2e-3, wd=0.02, beta1=0.9, beta2=0.999, eps=1e-8)
        p = param.copy()
        state = {}
        for g in grads:
            adamw_step(p, g, state, lr=2e-3, weight_decay=0.02)
        np.testing.assert_array_equal(p, np.array(expect_p))
        np.testing.assert_array_equal(state["m"], np.array(expect_m))
        np.testing.assert_array_equal(state["v"], np.array(expect_v))


class TestOptimizerState:
    def _params(self):
        rng = make_rng(5)
        return {
            "layer.w": Tensor(rng.normal(size=(4, 4)), requires_grad=True),
            "layer.b": Tensor(rng.normal(size=4), requires_grad=True),
        }

    def _fill_grads(self, params):
        rng = make_rng(6)
        for p in params.values():
            p.grad = rng.normal(size=p.data.shape)

    def test_lion_keeps_one_buffer_per_parameter(self):
        params = self._params()
        opt = Lion(params, lr=1e-3)
        self._fill_grads(params)
        opt.step()
        total = sum(p.data.size for p in params.values())
        assert opt.state_floats() == total
        assert opt.buffers_per_param == 1

    def test_adamw_keeps_two_buffers_per_parameter(self):
        params = self._params()
        opt = AdamW(params, lr=1e-3)
        self._fill_grads(params)
        opt.step()
        total = sum(p.data.size for p in params.values())
        assert opt.state_floats() == 2 * total
        assert opt.buffers_per_param == 2

    def test_decay_filter_exempts_norms_and_biases(self):
        assert default_decay_filter("enc.attn.wq")
        assert default_decay_filter("enc.attn.memory.mem_keys")
        assert default_decay_filter("query_seeds")
        assert not default_decay_filter("enc.ln1_gain")
        assert not default_decay_filter("enc.ln1_bias")
        assert not default_decay_filter("enc.attn.bq")
        assert not default_decay_filter("enc.ffn.b1")

    def test_unknown_optimizer_rejected(self):
        from vvids.optim import make_optimizer
        with pytest.raises(ConfigError):
            make_optimizer("sgd", self._params(), 1e-3, 0.0)


class TestQuadraticBowl:
    """Both optimizers must descend monotonically after step 5 at lr=1e-3."""

    @pytest.mark.parametrize("kind", ["lion", "adamw"])
    def test_monotone_descent(self, kind):
        x = Tensor(np.array([1.0, -1.5]), requires_grad=True)
        opt = (Lion if kind == "lion" else AdamW)({"x": x}, lr=1e-3,
                                                  weight_decay=0.0)

        def loss_and_grad():
            val = 0.5 * (x.data[0] ** 2 + 4.0 * x.data[1] ** 2)
            x.grad = np.array([x.data[0], 4.0 * x.data[1]])
            return val

        losses = []
        for _ in range(100):
            losses.append(loss_and_grad())
            opt.step()
        losses.append(loss_and_grad())
        diffs = np.diff(losses[5:])
        assert (diffs < 0).all()
