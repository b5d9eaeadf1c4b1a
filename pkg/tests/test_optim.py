import numpy as np
import pytest
from numpy.testing import assert_allclose

from toothnet.errors import ConfigError, GradientError
from toothnet.optim import SGD, Adam, OptimizerConfig, build_optimizer, optimizer_step
from toothnet.tensor import Parameter


class TestSGD:
    def test_definition(self):
        p = Parameter(1.0, "p")
        p.grad = np.array(1.0)
        optimizer_step(SGD([p], OptimizerConfig(kind="sgd", learning_rate=0.1)))
        assert float(p.values) == pytest.approx(0.9)
        assert p.grad is None

    def test_zero_gradient_keeps_value(self):
        p = Parameter([1.0, -2.0], "p")
        p.grad = np.zeros(2)
        optimizer_step(SGD([p], OptimizerConfig(kind="sgd", learning_rate=0.5)))
        assert_allclose(p.values, [1.0, -2.0])

    def test_missing_gradient_rejected(self):
        p = Parameter(1.0, "p")
        with pytest.raises(GradientError, match="'p'"):
            optimizer_step(SGD([p], OptimizerConfig(kind="sgd")))

    def test_frozen_parameter_skipped(self):
        frozen = Parameter(1.0, "frozen", trainable=False)
        live = Parameter(1.0, "live")
        live.grad = np.array(2.0)
        optimizer_step(SGD([frozen, live], OptimizerConfig(kind="sgd", learning_rate=0.25)))
        assert float(frozen.values) == 1.0
        assert float(live.values) == pytest.approx(0.5)


class TestAdam:
    def test_first_step_matches_hand_unrolled(self):
        cfg = OptimizerConfig(kind="adam", learning_rate=0.01)
        p = Parameter(2.0, "p")
        p.grad = np.array(0.3)
        optimizer_step(Adam([p], cfg))
        m = (1 - cfg.beta1) * 0.3
        v = (1 - cfg.beta2) * 0.3 ** 2
        m_hat = m / (1 - cfg.beta1)
        v_hat = v / (1 - cfg.beta2)
        expected = 2.0 - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        assert float(p.values) == pytest.approx(expected, abs=1e-15)

    def test_second_step_uses_moments(self):
        cfg = OptimizerConfig(kind="adam", learning_rate=0.1)
        p = Parameter(0.0, "p")
        optimizer = Adam([p], cfg)
        for _ in range(2):
            p.grad = np.array(1.0)
            optimizer.step()
        # constant gradient: each bias-corrected step moves by ~lr
        assert float(p.values) == pytest.approx(-0.2, rel=1e-6)


class TestConfig:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            OptimizerConfig(kind="rmsprop")

    def test_negative_rate(self):
        with pytest.raises(ConfigError):
            OptimizerConfig(learning_rate=-1.0)

    def test_build(self):
        params = [Parameter(0.0, "p")]
        assert isinstance(build_optimizer(params, OptimizerConfig()), Adam)
        assert isinstance(build_optimizer(params, OptimizerConfig(kind="sgd")), SGD)


class TestAdamFrozenSteps:
    def test_bias_correction_counts_own_updates(self):
        cfg = OptimizerConfig(kind="adam", learning_rate=0.1)
        late = Parameter(0.0, "late", trainable=False)
        early = Parameter(0.0, "early")
        optimizer = Adam([early, late], cfg)
        for _ in range(5):
            early.grad = np.array(1.0)
            optimizer.step()
        late.trainable = True
        early.grad, late.grad = np.array(1.0), np.array(1.0)
        optimizer.step()
        # the first update of a released parameter is a full lr step
        assert float(late.values) == pytest.approx(-0.1, rel=1e-6)
        assert optimizer.counts == [6, 1]
