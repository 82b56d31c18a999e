"""Adam and a reduce-on-plateau learning-rate rule."""
import numpy as np


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m, self.v = {}, {}

    def step(self, grads=None):
        """Apply one update. ``grads`` maps names to arrays; defaults to each parameter's ``.grad``."""
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.trainable():
            g = p.grad if grads is None else grads.get(name)
            if g is None:
                continue
            if g.shape != p.shape:
                raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p.data = p.data - (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


class ReduceLROnPlateau:
    """Multiply the optimizer's lr by ``factor`` after ``patience`` epochs without improvement.

    Improvement in ``mode="max"`` means ``metric > best * (1 + threshold)``
    (relative threshold, as in the common PyTorch rule).
    """

    def __init__(self, optimizer, mode="max", factor=0.5, patience=5, min_lr=1e-6, threshold=1e-4):
        if mode not in ("max", "min"):
            raise ValueError(mode)
        self.optimizer = optimizer
        self.mode = mode
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = -np.inf if mode == "max" else np.inf
        self.bad_epochs = 0

    def _better(self, value):
        if not np.isfinite(self.best):
            return value > self.best if self.mode == "max" else value < self.best
        if self.mode == "max":
            return value > self.best * (1 + self.threshold) if self.best > 0 else value > self.best + abs(self.best) * self.threshold
        return value < self.best * (1 - self.threshold) if self.best > 0 else value < self.best - abs(self.best) * self.threshold

    def step(self, value):
        """Feed one epoch's metric; returns True when the lr was reduced."""
        if self._better(value):
            self.best = value
            self.bad_epochs = 0
            return False
        self.bad_epochs += 1
        if self.bad_epochs > self.patience:
            self.bad_epochs = 0
            new = max(self.optimizer.lr * self.factor, self.min_lr)
            changed = new < self.optimizer.lr
            self.optimizer.lr = new
            return changed
        return False

    def state(self):
        return {"best": float(self.best), "bad_epochs": self.bad_epochs, "lr": self.optimizer.lr}
