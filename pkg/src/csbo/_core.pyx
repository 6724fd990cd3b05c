# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the built-in problem instances.

Every function mirrors one in :mod:`csbo._fallback` operation for operation;
the two are interchangeable and are selected in :mod:`csbo._backend`.
Noise is always pre-drawn by the caller so that both backends consume the
random stream identically.
"""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp, isfinite

cnp.import_array()


cdef inline double _sigmoid(double z) noexcept nogil:
    cdef double e
    if z >= 0:
        return 1.0 / (1.0 + exp(-z))
    e = exp(z)
    return e / (1.0 + e)


cdef inline bint _all_finite(double[::1] y) noexcept nogil:
    cdef Py_ssize_t i
    for i in range(y.shape[0]):
        if not isfinite(y[i]):
            return False
    return True


def linear_epoch(const double[:, ::1] A, const double[::1] c,
                 const double[:, ::1] noise, double noise_scale,
                 const double[::1] y0, double step):
    """SGD on grad = A y - c - noise_scale * eta_j; returns the mean of the
    pre-update iterates y^0 .. y^{n-1}."""
    cdef Py_ssize_t n = noise.shape[0], d = y0.shape[0], j, i, l
    cdef cnp.ndarray[double, ndim=1] y_arr = np.array(y0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] avg_arr = np.zeros(d)
    cdef cnp.ndarray[double, ndim=1] g_arr = np.empty(d)
    cdef double[::1] y = y_arr, avg = avg_arr, g = g_arr
    cdef double acc
    for j in range(n):
        for i in range(d):
            avg[i] += y[i]
        for i in range(d):
            acc = 0.0
            for l in range(d):
                acc += A[i, l] * y[l]
            g[i] = acc - c[i] - noise_scale * noise[j, i]
        for i in range(d):
            y[i] -= step * g[i]
        if not _all_finite(y):
            raise FloatingPointError(j)
    if n > 0:
        for i in range(d):
            avg[i] /= n
    else:
        for i in range(d):
            avg[i] = y[i]
    return avg_arr


def linear_neumann(const double[:, ::1] A, const double[::1] r0,
                   Py_ssize_t n, double scale):
    """n applications of r <- r - scale * A r."""
    cdef Py_ssize_t d = r0.shape[0], j, i, l
    cdef cnp.ndarray[double, ndim=1] r_arr = np.array(r0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] t_arr = np.empty(d)
    cdef double[::1] r = r_arr, t = t_arr
    cdef double acc
    for j in range(n):
        for i in range(d):
            acc = 0.0
            for l in range(d):
                acc += A[i, l] * r[l]
            t[i] = acc
        for i in range(d):
            r[i] -= scale * t[i]
    return r_arr


cdef void _softmax_logits(const double[::1] y, const double* a,
                          Py_ssize_t d, Py_ssize_t C, double* p) noexcept nogil:
    cdef Py_ssize_t i, k
    cdef double m, s
    for k in range(C):
        p[k] = 0.0
    for i in range(d):
        for k in range(C):
            p[k] += y[i * C + k] * a[i]
    m = p[0]
    for k in range(1, C):
        if p[k] > m:
            m = p[k]
    s = 0.0
    for k in range(C):
        p[k] = exp(p[k] - m)
        s += p[k]
    for k in range(C):
        p[k] /= s


def logistic_epoch(const double[::1] x, const double[::1] y0,
                   const double[:, :, ::1] feats, const cnp.int64_t[:, ::1] labels,
                   double lam, double step, Py_ssize_t n_classes):
    """SGD on the minibatch multiclass logistic loss plus (lam/2)||y - x||^2.

    ``y`` is the row-major flattening of a (d, C) classifier.
    """
    cdef Py_ssize_t n = feats.shape[0], B = feats.shape[1], d = feats.shape[2]
    cdef Py_ssize_t C = n_classes, D = d * n_classes, j, bb, i, k
    cdef cnp.ndarray[double, ndim=1] y_arr = np.array(y0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] avg_arr = np.zeros(D)
    cdef cnp.ndarray[double, ndim=1] g_arr = np.empty(D)
    cdef cnp.ndarray[double, ndim=1] p_arr = np.empty(C)
    cdef double[::1] y = y_arr, avg = avg_arr, g = g_arr, p = p_arr
    cdef double inv_b = 1.0 / B
    for j in range(n):
        for i in range(D):
            avg[i] += y[i]
            g[i] = lam * (y[i] - x[i])
        for bb in range(B):
            _softmax_logits(y, &feats[j, bb, 0], d, C, &p[0])
            p[labels[j, bb]] -= 1.0
            for i in range(d):
                for k in range(C):
                    g[i * C + k] += inv_b * feats[j, bb, i] * p[k]
        for i in range(D):
            y[i] -= step * g[i]
        if not _all_finite(y):
            raise FloatingPointError(j)
    if n > 0:
        for i in range(D):
            avg[i] /= n
    else:
        for i in range(D):
            avg[i] = y[i]
    return avg_arr


def logistic_neumann(const double[::1] y, const double[::1] r0,
                     const double[:, :, ::1] feats, double lam, double scale,
                     Py_ssize_t n_classes):
    """Backward product of (I - scale * H_j) applied to r0, H_j the Hessian of
    the regularized minibatch logistic loss for noise draw j."""
    cdef Py_ssize_t n = feats.shape[0], B = feats.shape[1], d = feats.shape[2]
    cdef Py_ssize_t C = n_classes, D = d * n_classes, j, bb, i, k
    cdef cnp.ndarray[double, ndim=1] r_arr = np.array(r0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] h_arr = np.empty(D)
    cdef cnp.ndarray[double, ndim=1] p_arr = np.empty(C)
    cdef cnp.ndarray[double, ndim=1] s_arr = np.empty(C)
    cdef double[::1] r = r_arr, hv = h_arr, p = p_arr, s = s_arr
    cdef double ps, inv_b = 1.0 / B
    for j in range(n - 1, -1, -1):
        for i in range(D):
            hv[i] = lam * r[i]
        for bb in range(B):
            _softmax_logits(y, &feats[j, bb, 0], d, C, &p[0])
            for k in range(C):
                s[k] = 0.0
            for i in range(d):
                for k in range(C):
                    s[k] += r[i * C + k] * feats[j, bb, i]
            ps = 0.0
            for k in range(C):
                ps += p[k] * s[k]
            for k in range(C):
                s[k] = p[k] * s[k] - p[k] * ps
            for i in range(d):
                for k in range(C):
                    hv[i * C + k] += inv_b * feats[j, bb, i] * s[k]
        for i in range(D):
            r[i] -= scale * hv[i]
    return r_arr


cdef inline void _newsvendor_derivs(double w, double eta, double h, double b,
                                    double beta, double* d1, double* d2) noexcept nogil:
    cdef double sg = _sigmoid(beta * (w - eta))
    d1[0] = h * sg - b * (1.0 - sg)
    d2[0] = beta * (h + b) * sg * (1.0 - sg)


def newsvendor_epoch(const double[::1] x, const double[::1] xi,
                     const double[::1] y0, const double[::1] eta,
                     double lam, double h, double b, double beta, double step):
    """SGD on -l_beta(x1.y + x0, eta) + lam ||xi - y||^2 over the adversarial
    context y; x = (x0, x1)."""
    cdef Py_ssize_t n = eta.shape[0], d = y0.shape[0], j, i
    cdef cnp.ndarray[double, ndim=1] y_arr = np.array(y0, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] avg_arr = np.zeros(d)
    cdef double[::1] y = y_arr, avg = avg_arr
    cdef double w, d1, d2
    for j in range(n):
        w = x[0]
        for i in range(d):
            avg[i] += y[i]
            w += x[i + 1] * y[i]
        _newsvendor_derivs(w, eta[j], h, b, beta, &d1, &d2)
        for i in range(d):
            y[i] -= step * (-d1 * x[i + 1] + 2.0 * lam * (y[i] - xi[i]))
        if not _all_finite(y):
            raise FloatingPointError(j)
    if n > 0:
        for i in range(d):
            avg[i] /= n
    else:
        for i in range(d):
            avg[i] = y[i]
    return avg_arr


def newsvendor_neumann(const double[::1] x, const double[::1] y,
                       const double[::1] r0, const double[::1] eta,
                       double lam, double h, double b, double beta, double scale):
    """Backward product of (I - scale * H_j) applied to r0 with
    H_j = -l''(w, eta_j) x1 x1^T + 2 lam I."""
    cdef Py_ssize_t n = eta.shape[0], d = y.shape[0], j, i
    cdef cnp.ndarray[double, ndim=1] r_arr = np.array(r0, dtype=np.float64)
    cdef double[::1] r = r_arr
    cdef double w, d1, d2, xr
    w = x[0]
    for i in range(d):
        w += x[i + 1] * y[i]
    for j in range(n - 1, -1, -1):
        _newsvendor_derivs(w, eta[j], h, b, beta, &d1, &d2)
        xr = 0.0
        for i in range(d):
            xr += x[i + 1] * r[i]
        for i in range(d):
            r[i] -= scale * (-d2 * xr * x[i + 1] + 2.0 * lam * r[i])
    return r_arr
