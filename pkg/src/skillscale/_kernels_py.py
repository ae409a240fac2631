"""Pure numpy implementation of the fitting kernels.

Mirrors ``_kernels_c.pyx`` argument for argument.  Gradient outputs are
overwritten, not accumulated.  ``ggam`` receives d(loss)/d(gamma) for every
benchmark; callers chain it through their own gamma parameterization.
"""

import numpy as np


def _sigmoid(x):
    # branch-free stable form
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _huber_and_slope(r, W, delta):
    a = np.abs(r)
    quad = a <= delta
    loss = np.where(quad, 0.5 * r * r, delta * (a - 0.5 * delta))
    g = np.clip(r, -delta, delta)
    return float(np.sum(W * loss)), W * g


def sigmoid_loss_grad(X, B, L, b, gam, Y, W, delta, gB, gL, gb, ggam):
    theta = X @ B
    eta = theta @ L.T + b
    s = _sigmoid(eta)
    mu = gam + (1.0 - gam) * s
    loss, g = _huber_and_slope(mu - Y, W, delta)
    ggam[:] = np.sum(g * (1.0 - s), axis=0)
    de = g * (1.0 - gam) * s * (1.0 - s)
    gb[:] = de.sum(axis=0)
    gL[:] = de.T @ theta
    gB[:] = X.T @ (de @ L)
    return loss


def mono_forward(eta, W1, c1, W2, c2, w3, c3):
    """Monotone link nets applied column-wise to ``eta`` (n x J)."""
    h1 = np.tanh(eta[:, :, None] * W1[None] + c1[None])
    h2 = np.tanh(np.einsum("jab,njb->nja", W2, h1) + c2[None])
    out = np.einsum("ja,nja->nj", w3, h2) + c3[None]
    return h1, h2, _sigmoid(out)


def mono_loss_grad(X, B, L, b, gam, Y, W, delta, W1, c1, W2, c2, w3, c3,
                   gB, gL, gb, ggam, gW1, gc1, gW2, gc2, gw3, gc3):
    theta = X @ B
    eta = theta @ L.T + b
    h1, h2, s = mono_forward(eta, W1, c1, W2, c2, w3, c3)
    mu = gam + (1.0 - gam) * s
    loss, g = _huber_and_slope(mu - Y, W, delta)
    ggam[:] = np.sum(g * (1.0 - s), axis=0)
    go = g * (1.0 - gam) * s * (1.0 - s)
    gc3[:] = go.sum(axis=0)
    gw3[:] = np.einsum("nj,nja->ja", go, h2)
    da2 = go[:, :, None] * w3[None] * (1.0 - h2 * h2)
    gc2[:] = da2.sum(axis=0)
    gW2[:] = np.einsum("nja,njb->jab", da2, h1)
    da1 = np.einsum("nja,jab->njb", da2, W2) * (1.0 - h1 * h1)
    gc1[:] = da1.sum(axis=0)
    gW1[:] = np.einsum("njb,nj->jb", da1, eta)
    de = np.einsum("njb,jb->nj", da1, W1)
    gb[:] = de.sum(axis=0)
    gL[:] = de.T @ theta
    gB[:] = X.T @ (de @ L)
    return loss


def adam_update(theta, grad, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    step = lr / (1.0 - beta1 ** t)
    theta -= step * m / (np.sqrt(v / (1.0 - beta2 ** t)) + eps)


def clamp_nonneg(theta, start, stop):
    np.maximum(theta[start:stop], 0.0, out=theta[start:stop])
