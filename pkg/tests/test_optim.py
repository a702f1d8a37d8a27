import math

import numpy as np
import pytest

from protodiff import autodiff as ad
from protodiff.autodiff import Tensor
from protodiff.errors import ContractError
from protodiff.optim import AdamW, cosine_lr

rng = np.random.default_rng(99)


class TestCosine:
    def test_endpoints_and_midpoint(self):
        assert cosine_lr(0, 100, 1e-4) == 1e-4
        assert abs(cosine_lr(100, 100, 1e-4)) < 1e-20
        assert math.isclose(cosine_lr(50, 100, 1e-4), 5e-5, rel_tol=1e-12)

    def test_clamps_past_total(self):
        assert cosine_lr(150, 100, 1e-4) == cosine_lr(100, 100, 1e-4)

    def test_rejects_bad_args(self):
        with pytest.raises(ContractError):
            cosine_lr(0, 0, 1e-4)
        with pytest.raises(ContractError):
            cosine_lr(-1, 10, 1e-4)


class TestAdamW:
    def test_single_step_closed_form(self):
        p0 = rng.standard_normal(6)
        g = rng.standard_normal(6)
        p = Tensor(p0.copy(), requires_grad=True)
        p.grad = g.copy()
        opt = AdamW({"p": p}, lr=1e-3, weight_decay=0.0)
        opt.step()
        # t=1: m_hat = g, v_hat = g^2  ->  update = -lr * g / (|g| + eps)
        want = p0 - 1e-3 * g / (np.abs(g) + 1e-8)
        assert np.allclose(p.data, want, rtol=1e-12, atol=1e-15)

    def test_zero_grad_zero_decay_is_identity(self):
        p = Tensor(rng.standard_normal(4), requires_grad=True)
        before = p.data.copy()
        p.grad = np.zeros(4)
        AdamW({"p": p}, lr=1e-2, weight_decay=0.0).step()
        assert np.array_equal(p.data, before)

    def test_decoupled_decay_shrink_factor(self):
        p = Tensor(np.array([2.0, -3.0]), requires_grad=True)
        before = p.data.copy()
        p.grad = np.zeros(2)
        AdamW({"p": p}, lr=0.1, weight_decay=0.5).step()
        assert np.allclose(p.data, before * (1 - 0.1 * 0.5), rtol=1e-15)

    def test_missing_grad_rejected(self):
        p = Tensor(np.zeros(3), requires_grad=True)
        opt = AdamW({"p": p})
        with pytest.raises(ContractError, match="p"):
            opt.step()

    def test_grads_left_untouched(self):
        p = Tensor(rng.standard_normal(3), requires_grad=True)
        g = rng.standard_normal(3)
        p.grad = g.copy()
        opt = AdamW({"p": p}, lr=1e-3)
        opt.step()
        assert np.array_equal(p.grad, g)
        opt.zero_grad()
        assert p.grad is None

    def test_bit_identical_trajectories(self):
        def run():
            r = np.random.default_rng(5)
            p = Tensor(r.standard_normal(8), requires_grad=True)
            opt = AdamW({"p": p}, lr=1e-2, weight_decay=1e-3)
            for _ in range(25):
                loss = ad.sum_all(p * p)
                opt.zero_grad()
                loss.backward()
                opt.step()
            return p.data.copy()

        assert np.array_equal(run(), run())
