# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fitting kernels.  Same contract as ``_kernels_py``."""

from libc.math cimport exp, expm1, fabs, sqrt, pow
from libc.stdlib cimport malloc, calloc, free


cdef inline double _sigmoid(double x) nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _tanh(double x) nogil:
    # expm1 form: within a few ulp of libm tanh and about twice as cheap
    cdef double e
    if x > 20.0:
        return 1.0
    if x < -20.0:
        return -1.0
    e = expm1(2.0 * x)
    return e / (e + 2.0)


cdef inline double _huber(double r, double delta) nogil:
    cdef double a = fabs(r)
    if a <= delta:
        return 0.5 * r * r
    return delta * (a - 0.5 * delta)


cdef inline double _clip(double r, double delta) nogil:
    if r > delta:
        return delta
    if r < -delta:
        return -delta
    return r


cdef void _skills(const double[:, ::1] X, const double[:, ::1] B, double* theta) nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], d = B.shape[1]
    cdef Py_ssize_t i, c, k
    cdef double x
    for i in range(n * d):
        theta[i] = 0.0
    for i in range(n):
        for c in range(p):
            x = X[i, c]
            if x != 0.0:
                for k in range(d):
                    theta[i * d + k] += x * B[c, k]


cdef void _backprop_B(const double[:, ::1] X, double* dtheta, double[:, ::1] gB) nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], d = gB.shape[1]
    cdef Py_ssize_t i, c, k
    cdef double x
    for c in range(p):
        for k in range(d):
            gB[c, k] = 0.0
    for i in range(n):
        for c in range(p):
            x = X[i, c]
            if x != 0.0:
                for k in range(d):
                    gB[c, k] += x * dtheta[i * d + k]


def sigmoid_loss_grad(const double[:, ::1] X, const double[:, ::1] B, const double[:, ::1] L,
                      const double[::1] b, const double[::1] gam, const double[:, ::1] Y,
                      const double[:, ::1] W, double delta,
                      double[:, ::1] gB, double[:, ::1] gL, double[::1] gb, double[::1] ggam):
    cdef Py_ssize_t n = X.shape[0], d = B.shape[1], J = L.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double eta, s, mu, r, g, de, w, loss = 0.0
    cdef double* theta = <double*> malloc(n * d * sizeof(double))
    cdef double* dtheta = <double*> calloc(n * d, sizeof(double))
    if theta == NULL or dtheta == NULL:
        free(theta)
        free(dtheta)
        raise MemoryError()
    with nogil:
        _skills(X, B, theta)
        for j in range(J):
            gb[j] = 0.0
            ggam[j] = 0.0
            for k in range(d):
                gL[j, k] = 0.0
        for i in range(n):
            for j in range(J):
                w = W[i, j]
                if w == 0.0:
                    continue
                eta = b[j]
                for k in range(d):
                    eta += L[j, k] * theta[i * d + k]
                s = _sigmoid(eta)
                mu = gam[j] + (1.0 - gam[j]) * s
                r = mu - Y[i, j]
                loss += w * _huber(r, delta)
                g = w * _clip(r, delta)
                ggam[j] += g * (1.0 - s)
                de = g * (1.0 - gam[j]) * s * (1.0 - s)
                gb[j] += de
                for k in range(d):
                    gL[j, k] += de * theta[i * d + k]
                    dtheta[i * d + k] += de * L[j, k]
        _backprop_B(X, dtheta, gB)
    free(theta)
    free(dtheta)
    return loss


def mono_loss_grad(const double[:, ::1] X, const double[:, ::1] B, const double[:, ::1] L,
                   const double[::1] b, const double[::1] gam, const double[:, ::1] Y,
                   const double[:, ::1] W, double delta,
                   const double[:, ::1] W1, const double[:, ::1] c1, const double[:, :, ::1] W2,
                   const double[:, ::1] c2, const double[:, ::1] w3, const double[::1] c3,
                   double[:, ::1] gB, double[:, ::1] gL, double[::1] gb, double[::1] ggam,
                   double[:, ::1] gW1, double[:, ::1] gc1, double[:, :, ::1] gW2,
                   double[:, ::1] gc2, double[:, ::1] gw3, double[::1] gc3):
    # Benchmark-major: for one benchmark, every hidden unit is a contiguous
    # row over the observed cells, so the inner loops run over cells.
    cdef Py_ssize_t n = X.shape[0], d = B.shape[1], J = L.shape[0], H = W1.shape[1]
    cdef Py_ssize_t i, j, k, a, c, m, cnt
    cdef double s, mu, r, g, w, t, acc, gj, loss = 0.0
    cdef const double *pW1
    cdef const double *pc1
    cdef const double *pW2
    cdef const double *pc2
    cdef const double *pw3
    cdef double *ha
    cdef double *hc
    cdef double *da
    cdef double *dc
    cdef double* theta = <double*> malloc(n * d * sizeof(double))
    cdef double* dtheta = <double*> calloc(n * d, sizeof(double))
    cdef Py_ssize_t* idx = <Py_ssize_t*> malloc(n * sizeof(Py_ssize_t))
    cdef double* eta = <double*> malloc(n * sizeof(double))
    cdef double* go = <double*> malloc(n * sizeof(double))
    cdef double* de = <double*> malloc(n * sizeof(double))
    cdef double* h1 = <double*> malloc(H * n * sizeof(double))
    cdef double* h2 = <double*> malloc(H * n * sizeof(double))
    cdef double* d1 = <double*> malloc(H * n * sizeof(double))
    cdef double* d2 = <double*> malloc(H * n * sizeof(double))
    if (theta == NULL or dtheta == NULL or idx == NULL or eta == NULL or go == NULL or de == NULL
            or h1 == NULL or h2 == NULL or d1 == NULL or d2 == NULL):
        free(theta); free(dtheta); free(idx); free(eta); free(go); free(de)
        free(h1); free(h2); free(d1); free(d2)
        raise MemoryError()
    with nogil:
        _skills(X, B, theta)
        for j in range(J):
            pW1 = &W1[j, 0]
            pc1 = &c1[j, 0]
            pW2 = &W2[j, 0, 0]
            pc2 = &c2[j, 0]
            pw3 = &w3[j, 0]
            gb[j] = 0.0
            ggam[j] = 0.0
            gc3[j] = 0.0
            for k in range(d):
                gL[j, k] = 0.0
            for a in range(H):
                gW1[j, a] = 0.0
                gc1[j, a] = 0.0
                gc2[j, a] = 0.0
                gw3[j, a] = 0.0
                for c in range(H):
                    gW2[j, a, c] = 0.0
            cnt = 0
            for i in range(n):
                if W[i, j] != 0.0:
                    idx[cnt] = i
                    t = b[j]
                    for k in range(d):
                        t += L[j, k] * theta[i * d + k]
                    eta[cnt] = t
                    cnt += 1
            if cnt == 0:
                continue
            # forward
            for a in range(H):
                ha = h1 + a * n
                for m in range(cnt):
                    ha[m] = _tanh(pW1[a] * eta[m] + pc1[a])
            for a in range(H):
                ha = h2 + a * n
                for m in range(cnt):
                    ha[m] = pc2[a]
                for c in range(H):
                    hc = h1 + c * n
                    t = pW2[a * H + c]
                    for m in range(cnt):
                        ha[m] += t * hc[m]
                for m in range(cnt):
                    ha[m] = _tanh(ha[m])
            gj = 0.0
            for m in range(cnt):
                acc = c3[j]
                for a in range(H):
                    acc += pw3[a] * h2[a * n + m]
                s = _sigmoid(acc)
                i = idx[m]
                w = W[i, j]
                mu = gam[j] + (1.0 - gam[j]) * s
                r = mu - Y[i, j]
                loss += w * _huber(r, delta)
                g = w * _clip(r, delta)
                ggam[j] += g * (1.0 - s)
                go[m] = g * (1.0 - gam[j]) * s * (1.0 - s)
                gj += go[m]
            gc3[j] = gj
            # backward through the second layer
            for a in range(H):
                ha = h2 + a * n
                da = d2 + a * n
                acc = 0.0
                t = 0.0
                for m in range(cnt):
                    acc += go[m] * ha[m]
                    da[m] = go[m] * pw3[a] * (1.0 - ha[m] * ha[m])
                    t += da[m]
                gw3[j, a] = acc
                gc2[j, a] = t
            for c in range(H):
                hc = h1 + c * n
                dc = d1 + c * n
                for m in range(cnt):
                    dc[m] = 0.0
                for a in range(H):
                    da = d2 + a * n
                    t = pW2[a * H + c]
                    acc = 0.0
                    for m in range(cnt):
                        acc += da[m] * hc[m]
                        dc[m] += da[m] * t
                    gW2[j, a, c] = acc
            # first layer and the linear predictor
            for m in range(cnt):
                de[m] = 0.0
            for c in range(H):
                hc = h1 + c * n
                dc = d1 + c * n
                acc = 0.0
                t = 0.0
                for m in range(cnt):
                    dc[m] *= 1.0 - hc[m] * hc[m]
                    acc += dc[m]
                    t += dc[m] * eta[m]
                    de[m] += dc[m] * pW1[c]
                gc1[j, c] = acc
                gW1[j, c] = t
            for m in range(cnt):
                i = idx[m]
                gb[j] += de[m]
                for k in range(d):
                    gL[j, k] += de[m] * theta[i * d + k]
                    dtheta[i * d + k] += de[m] * L[j, k]
        _backprop_B(X, dtheta, gB)
    free(theta); free(dtheta); free(idx); free(eta); free(go); free(de)
    free(h1); free(h2); free(d1); free(d2)
    return loss


def adam_update(double[::1] theta, const double[::1] grad, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long t):
    cdef Py_ssize_t i, n = theta.shape[0]
    cdef double step = lr / (1.0 - pow(beta1, t))
    cdef double bc2 = 1.0 - pow(beta2, t)
    cdef double g
    with nogil:
        for i in range(n):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            theta[i] -= step * m[i] / (sqrt(v[i] / bc2) + eps)


def clamp_nonneg(double[::1] theta, Py_ssize_t start, Py_ssize_t stop):
    cdef Py_ssize_t i
    with nogil:
        for i in range(start, stop):
            if theta[i] < 0.0:
                theta[i] = 0.0
