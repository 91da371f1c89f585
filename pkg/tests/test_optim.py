"""Adam optimizer tests."""

import numpy as np
import pytest

from diffmvr.errors import ContractError
from diffmvr.numerics import Adam, Rng, Tensor


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        # With g=1 the bias-corrected moments are both exactly 1, so the
        # first update is lr/(1+eps).
        p = Tensor(np.zeros(1), requires_grad=True, dtype=np.float64)
        opt = Adam([p], lr=0.02)
        p.grad = np.ones(1)
        opt.step()
        assert abs(-p.data[0] - 0.02 / (1 + 1e-8)) < 1e-15

    def test_zero_gradient_leaves_parameter_unchanged(self):
        p = Tensor(np.array([1.5, -2.0]), requires_grad=True, dtype=np.float64)
        before = p.data.copy()
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(p.data, before)

    def test_missing_gradient_is_contract_error(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        opt = Adam([p])
        with pytest.raises(ContractError):
            opt.step()

    def test_zero_grad_clears(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        p.grad = np.ones(1)
        Adam([p]).zero_grad()
        assert p.grad is None

    def test_quadratic_convergence(self):
        p = Tensor(np.array([10.0]), requires_grad=True, dtype=np.float64)
        opt = Adam([p], lr=0.1)
        for _ in range(400):
            opt.zero_grad()
            loss = ((p - 3.0) * (p - 3.0)).sum()
            loss.backward()
            opt.step()
        assert abs(p.data[0] - 3.0) < 1e-2

    def test_deterministic_updates(self):
        def run():
            rng = Rng(8)
            p = Tensor(rng.normal((4, 4)), requires_grad=True)
            opt = Adam([p], lr=0.01)
            for k in range(20):
                opt.zero_grad()
                ((p * p).sum() * (1.0 + 0.1 * k)).backward()
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run())

    def test_config_validation(self):
        p = Tensor(np.zeros(1), requires_grad=True)
        with pytest.raises(ContractError):
            Adam([p], lr=-0.01)
        with pytest.raises(ContractError):
            Adam([p], beta1=1.0)
        with pytest.raises(ContractError):
            Adam([])

    def test_zero_lr_leaves_parameters_bitwise_unchanged(self):
        p = Tensor(Rng(5).normal((3, 3)), requires_grad=True)
        before = p.data.copy()
        opt = Adam([p], lr=0.0)
        for _ in range(4):
            (p * p).sum().backward()
            opt.step()
            opt.zero_grad()
        assert np.array_equal(p.data, before)
