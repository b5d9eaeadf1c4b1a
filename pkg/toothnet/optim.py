"""
Optimizer Module

Parameter update rules for training. It provides:
- OptimizerConfig: rule name and its hyper-parameters
- SGD: plain gradient descent
- Adam: adaptive moment estimation with bias correction
- build_optimizer / optimizer_step helpers

Every step consumes the gradients and then zeroes them.
"""

from dataclasses import dataclass

import numpy as np

from toothnet.errors import ConfigError, GradientError


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer '{self.kind}' (expected sgd or adam)")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be non-negative")


class Optimizer:
    def __init__(self, params, config):
        self.params = list(params)
        self.config = config
        self.steps = 0

    def _gradients(self):
        grads = []
        for param in self.params:
            if not param.trainable:
                grads.append(None)
                continue
            if param.grad is None:
                raise GradientError(f"trainable parameter '{param.name}' has no gradient")
            grads.append(param.grad)
        return grads

    def zero_grad(self):
        for param in self.params:
            param.grad = None

    def step(self):
        grads = self._gradients()
        self.steps += 1
        for index, (param, grad) in enumerate(zip(self.params, grads)):
            if grad is not None:
                self._update(index, param, grad)
        self.zero_grad()

    def _update(self, index, param, grad):
        raise NotImplementedError


class SGD(Optimizer):
    def _update(self, index, param, grad):
        param.values -= self.config.learning_rate * grad


class Adam(Optimizer):
    def __init__(self, params, config):
        super().__init__(params, config)
        self.first = [np.zeros_like(p.values) for p in self.params]
        self.second = [np.zeros_like(p.values) for p in self.params]
        # bias correction counts the updates each parameter actually received
        self.counts = [0] * len(self.params)

    def _update(self, index, param, grad):
        cfg = self.config
        self.counts[index] += 1
        t = self.counts[index]
        m = self.first[index] = cfg.beta1 * self.first[index] + (1.0 - cfg.beta1) * grad
        v = self.second[index] = cfg.beta2 * self.second[index] + (1.0 - cfg.beta2) * grad * grad
        m_hat = m / (1.0 - cfg.beta1 ** t)
        v_hat = v / (1.0 - cfg.beta2 ** t)
        param.values -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)


def build_optimizer(params, config):
    if config.kind == "sgd":
        return SGD(params, config)
    return Adam(params, config)


def optimizer_step(optimizer):
    """Apply one update with the gradients currently held by the parameters."""
    optimizer.step()
