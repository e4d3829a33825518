import math

import numpy as np

from src.core.errors import ConfigError


class AdamW:
    """
    Adaptive moments with decoupled weight decay. Decay only touches
    matrices (ndim >= 2); norms, biases and gates are left alone.
    """

    def __init__(self, params, lr=3e-4, betas=(0.9, 0.999), eps=1e-8, weight_decay=1e-4):
        if lr < 0 or weight_decay < 0:
            raise ConfigError(f"lr and weight_decay must be non-negative, got {lr}, {weight_decay}")
        if not all(0.0 <= b < 1.0 for b in betas):
            raise ConfigError(f"betas must lie in [0, 1), got {betas}")
        self.params = list(params)
        self.lr = lr
        self.betas = tuple(betas)
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.exp_avg = [np.zeros_like(p.data) for p in self.params]
        self.exp_avg_sq = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        beta1, beta2 = self.betas
        bias1 = 1.0 - beta1 ** self.step_count
        bias2 = 1.0 - beta2 ** self.step_count
        for p, m, v in zip(self.params, self.exp_avg, self.exp_avg_sq):
            if p.grad is None:
                continue
            grad = p.grad
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            update = (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            if self.weight_decay and p.ndim >= 2:
                p.data = p.data - self.lr * self.weight_decay * p.data
            p.data = p.data - self.lr * update

    def state_dict(self):
        state = {"step_count": np.array(self.step_count)}
        for i, (m, v) in enumerate(zip(self.exp_avg, self.exp_avg_sq)):
            state[f"exp_avg.{i}"] = m.copy()
            state[f"exp_avg_sq.{i}"] = v.copy()
        return state

    def load_state_dict(self, state):
        self.step_count = int(state["step_count"])
        for i in range(len(self.params)):
            self.exp_avg[i] = np.array(state[f"exp_avg.{i}"], dtype=self.params[i].dtype)
            self.exp_avg_sq[i] = np.array(state[f"exp_avg_sq.{i}"], dtype=self.params[i].dtype)


class CosineSchedule:
    """lr(e) = min + (base - min) * (1 + cos(pi * e / T)) / 2, no warmup."""

    def __init__(self, base_lr, total_epochs, min_ratio=0.01):
        if base_lr < 0:
            raise ConfigError(f"base learning rate must be non-negative, got {base_lr}")
        if total_epochs < 1:
            raise ConfigError(f"total_epochs must be >= 1, got {total_epochs}")
        self.base_lr = base_lr
        self.min_lr = min_ratio * base_lr
        self.total_epochs = total_epochs

    def __call__(self, epoch):
        progress = min(max(epoch, 0), self.total_epochs) / self.total_epochs
        return self.min_lr + 0.5 * (self.base_lr - self.min_lr) * (1.0 + math.cos(math.pi * progress))
