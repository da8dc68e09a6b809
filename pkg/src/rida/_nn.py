"""Small numerical building blocks for the hand-differentiated models."""

import numpy as np

from .exceptions import DivergenceError


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def cross_entropy(logits, targets):
    """Mean cross-entropy and its gradient with respect to ``logits``."""
    m = logits.shape[0]
    logp = log_softmax(logits)
    rows = np.arange(m)
    loss = -logp[rows, targets].sum() / m
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    grad /= m
    return loss, grad


def glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class Adam:
    """Adam over a dict of named numpy arrays, updated in place."""

    def __init__(self, params, lr, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k in sorted(self.params):
            g = grads[k]
            self.m[k] *= self.b1
            self.m[k] += (1.0 - self.b1) * g
            self.v[k] *= self.b2
            self.v[k] += (1.0 - self.b2) * g * g
            self.params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def fit_adam(params, loss_and_grad, *, epochs, lr, where):
    """Run full-batch Adam for ``epochs`` steps; return the loss history."""
    opt = Adam(params, lr)
    history = []
    for epoch in range(epochs):
        loss, grads = loss_and_grad(params)
        if not np.isfinite(loss):
            raise DivergenceError(epoch, where)
        history.append(float(loss))
        opt.step(grads)
    return history
