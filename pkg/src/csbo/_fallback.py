"""Pure-Python reference implementations of the inner loops in ``_core.pyx``.

Signatures and floating-point semantics match the compiled module; results
agree to rounding. These are used when the extension is not built, or when
``CSBO_PURE_PYTHON=1`` is set.
"""
import numpy as np


def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


def _finish(avg, y, n):
    if n > 0:
        return avg / n
    return y.copy()


@np.errstate(over="ignore", invalid="ignore")
def linear_epoch(A, c, noise, noise_scale, y0, step):
    y = np.array(y0, dtype=np.float64)
    avg = np.zeros_like(y)
    n = noise.shape[0]
    for j in range(n):
        avg += y
        y = y - step * (A @ y - c - noise_scale * noise[j])
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(j)
    return _finish(avg, y, n)


def linear_neumann(A, r0, n, scale):
    r = np.array(r0, dtype=np.float64)
    for _ in range(n):
        r = r - scale * (A @ r)
    return r


def _softmax(z):
    z = z - z.max()
    e = np.exp(z)
    return e / e.sum()


@np.errstate(over="ignore", invalid="ignore")
def logistic_epoch(x, y0, feats, labels, lam, step, n_classes):
    n, B, d = feats.shape
    y = np.array(y0, dtype=np.float64)
    avg = np.zeros_like(y)
    for j in range(n):
        avg += y
        Y = y.reshape(d, n_classes)
        G = lam * (Y - x.reshape(d, n_classes))
        for bb in range(B):
            a = feats[j, bb]
            p = _softmax(a @ Y)
            p[labels[j, bb]] -= 1.0
            G += np.outer(a, p) / B
        y = y - step * G.ravel()
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(j)
    return _finish(avg, y, n)


def logistic_neumann(y, r0, feats, lam, scale, n_classes):
    n, B, d = feats.shape
    Y = y.reshape(d, n_classes)
    r = np.array(r0, dtype=np.float64)
    for j in range(n - 1, -1, -1):
        R = r.reshape(d, n_classes)
        hv = lam * R
        for bb in range(B):
            a = feats[j, bb]
            p = _softmax(a @ Y)
            s = a @ R
            hv = hv + np.outer(a, p * s - p * (p @ s)) / B
        r = r - scale * hv.ravel()
    return r


def _newsvendor_derivs(w, eta, h, b, beta):
    sg = _sigmoid(beta * (w - eta))
    return h * sg - b * (1.0 - sg), beta * (h + b) * sg * (1.0 - sg)


@np.errstate(over="ignore", invalid="ignore")
def newsvendor_epoch(x, xi, y0, eta, lam, h, b, beta, step):
    y = np.array(y0, dtype=np.float64)
    avg = np.zeros_like(y)
    x0, x1 = x[0], x[1:]
    n = eta.shape[0]
    for j in range(n):
        avg += y
        d1, _ = _newsvendor_derivs(x0 + x1 @ y, eta[j], h, b, beta)
        y = y - step * (-d1 * x1 + 2.0 * lam * (y - xi))
        if not np.all(np.isfinite(y)):
            raise FloatingPointError(j)
    return _finish(avg, y, n)


def newsvendor_neumann(x, y, r0, eta, lam, h, b, beta, scale):
    x0, x1 = x[0], x[1:]
    w = x0 + x1 @ y
    r = np.array(r0, dtype=np.float64)
    for j in range(eta.shape[0] - 1, -1, -1):
        _, d2 = _newsvendor_derivs(w, eta[j], h, b, beta)
        r = r - scale * (-d2 * (x1 @ r) * x1 + 2.0 * lam * r)
    return r
