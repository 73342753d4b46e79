"""Adam with decoupled weight decay, plus the small scheduling helpers
the training loop uses."""

import numpy as np


class Adam:
    def __init__(self, named_params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8,
                 weight_decay=1e-5):
        self.named_params = list(named_params)
        names = [n for n, _ in self.named_params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.first_moment = {n: np.zeros_like(p.data)
                             for n, p in self.named_params}
        self.second_moment = {n: np.zeros_like(p.data)
                              for n, p in self.named_params}

    def grads_finite(self):
        return all(p.grad is not None and np.all(np.isfinite(p.grad))
                   for _, p in self.named_params)

    def zero_grad(self):
        for _, p in self.named_params:
            p.grad = None

    def step(self):
        """One update; parameters without a gradient are left alone
        except for the decoupled decay, which is absent gradient too."""
        self.step_count += 1
        correct1 = 1.0 - self.beta1 ** self.step_count
        correct2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.named_params:
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            if p.grad is None:
                continue
            m = self.first_moment[name]
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * p.grad
            v *= self.beta2
            v += (1.0 - self.beta2) * p.grad ** 2
            p.data -= self.lr * (m / correct1) / \
                (np.sqrt(v / correct2) + self.eps)

    def state_dict(self):
        return {
            "lr": self.lr,
            "step_count": self.step_count,
            "first_moment": {n: m.copy()
                             for n, m in self.first_moment.items()},
            "second_moment": {n: v.copy()
                              for n, v in self.second_moment.items()},
        }

    def load_state_dict(self, state):
        self.lr = state["lr"]
        self.step_count = state["step_count"]
        for n in self.first_moment:
            self.first_moment[n] = state["first_moment"][n].copy()
            self.second_moment[n] = state["second_moment"][n].copy()


class PlateauHalver:
    """Halve the learning rate after `patience` consecutive validation
    epochs without improvement."""

    def __init__(self, optimizer, patience=2, factor=0.5, min_delta=0.0):
        self.optimizer = optimizer
        self.patience = patience
        self.factor = factor
        self.min_delta = min_delta
        self.best = None
        self.stale = 0

    def step(self, metric):
        """Report a validation loss (lower is better). Returns True when
        this epoch improved on the best seen."""
        if self.best is None or metric < self.best - self.min_delta:
            self.best = metric
            self.stale = 0
            return True
        self.stale += 1
        if self.stale >= self.patience:
            self.optimizer.lr *= self.factor
            self.stale = 0
        return False


class EarlyStopper:
    """Stop after `patience` consecutive epochs without improvement."""

    def __init__(self, patience=6, min_delta=0.0):
        self.patience = patience
        self.min_delta = min_delta
        self.best = None
        self.stale = 0

    def update(self, metric):
        """Returns True when training should stop."""
        if self.best is None or metric < self.best - self.min_delta:
            self.best = metric
            self.stale = 0
        else:
            self.stale += 1
        return self.stale >= self.patience
