# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops. Signatures mirror ``_pykernels``."""

from libc.math cimport exp, log, INFINITY
from libc.stdlib cimport malloc, free

import numpy as np

backend = "cython"


cdef inline double _lse(double* buf, Py_ssize_t n) noexcept nogil:
    cdef double m = -INFINITY
    cdef double s = 0.0
    cdef Py_ssize_t i
    for i in range(n):
        if buf[i] > m:
            m = buf[i]
    if m == -INFINITY:
        return -INFINITY
    for i in range(n):
        s += exp(buf[i] - m)
    return m + log(s)


def logistic_normal_lse(const double[:, ::1] z, const double[::1] log_jac,
                        const double[:, ::1] mu, const double[:, :, ::1] linv,
                        const double[::1] logc, const double[::1] logw,
                        double[::1] out):
    """out[g] = logsumexp_m(logw[m] + logc[m] - |Linv[m] (z[g] - mu[m])|^2 / 2) - log_jac[g]."""
    cdef Py_ssize_t G = z.shape[0], k = z.shape[1], M = mu.shape[0]
    cdef Py_ssize_t g, m, a, b
    cdef double q, u
    cdef double* buf
    cdef double* r
    with nogil:
        buf = <double*> malloc(M * sizeof(double))
        r = <double*> malloc(k * sizeof(double))
        for g in range(G):
            for m in range(M):
                for a in range(k):
                    r[a] = z[g, a] - mu[m, a]
                q = 0.0
                for a in range(k):
                    u = 0.0
                    for b in range(a + 1):
                        u = u + linv[m, a, b] * r[b]
                    q = q + u * u
                buf[m] = logw[m] + logc[m] - 0.5 * q
            out[g] = _lse(buf, M) - log_jac[g]
        free(buf)
        free(r)


def dirichlet_lse(const double[:, ::1] logp, const double[:, ::1] am1,
                  const double[::1] logc, const double[::1] logw,
                  double[::1] out):
    """out[g] = logsumexp_m(logw[m] + logc[m] + sum_j am1[m, j] logp[g, j])."""
    cdef Py_ssize_t G = logp.shape[0], J = logp.shape[1], M = am1.shape[0]
    cdef Py_ssize_t g, m, j
    cdef double s
    cdef double* buf
    with nogil:
        buf = <double*> malloc(M * sizeof(double))
        for g in range(G):
            for m in range(M):
                s = 0.0
                for j in range(J):
                    s = s + am1[m, j] * logp[g, j]
                buf[m] = logw[m] + logc[m] + s
            out[g] = _lse(buf, M)
        free(buf)


cdef inline void _rhs(double S, double E, double I, double beta, double gamma,
                      double eta, bint seir, double inv_n,
                      double* dS, double* dE, double* dI) noexcept nogil:
    cdef double inf = beta * S * I * inv_n
    dS[0] = -inf
    if seir:
        dE[0] = inf - eta * E
        dI[0] = eta * E - gamma * I
    else:
        dE[0] = 0.0
        dI[0] = inf - gamma * I


def rk4_compartments(const double[::1] beta, const double[::1] gamma,
                     const double[::1] eta, bint seir, double population,
                     double initial_infected, Py_ssize_t n_days,
                     const long long[::1] steps_per_day, double[:, :, ::1] out):
    """Fixed-step RK4; out[s, t] holds (S, E, I, R) at day t + 1."""
    cdef Py_ssize_t n = beta.shape[0]
    cdef Py_ssize_t s, day, step, nsteps
    cdef double S, E, I, R, h, b, c, e, inv_n = 1.0 / population
    cdef double k1S, k1E, k1I, k2S, k2E, k2I, k3S, k3E, k3I, k4S, k4E, k4I
    cdef double I2, I3, I4
    with nogil:
        for s in range(n):
            b = beta[s]
            c = gamma[s]
            e = eta[s]
            nsteps = steps_per_day[s]
            h = 1.0 / nsteps
            S = population - initial_infected
            E = 0.0
            I = initial_infected
            R = 0.0
            for day in range(n_days):
                for step in range(nsteps):
                    _rhs(S, E, I, b, c, e, seir, inv_n, &k1S, &k1E, &k1I)
                    _rhs(S + 0.5 * h * k1S, E + 0.5 * h * k1E, I + 0.5 * h * k1I,
                         b, c, e, seir, inv_n, &k2S, &k2E, &k2I)
                    _rhs(S + 0.5 * h * k2S, E + 0.5 * h * k2E, I + 0.5 * h * k2I,
                         b, c, e, seir, inv_n, &k3S, &k3E, &k3I)
                    _rhs(S + h * k3S, E + h * k3E, I + h * k3I,
                         b, c, e, seir, inv_n, &k4S, &k4E, &k4I)
                    S = S + h / 6.0 * (k1S + 2.0 * k2S + 2.0 * k3S + k4S)
                    E = E + h / 6.0 * (k1E + 2.0 * k2E + 2.0 * k3E + k4E)
                    I2 = I + 0.5 * h * k1I
                    I3 = I + 0.5 * h * k2I
                    I4 = I + h * k3I
                    R = R + h / 6.0 * c * (I + 2.0 * I2 + 2.0 * I3 + I4)
                    I = I + h / 6.0 * (k1I + 2.0 * k2I + 2.0 * k3I + k4I)
                out[s, day, 0] = S
                out[s, day, 1] = E
                out[s, day, 2] = I
                out[s, day, 3] = R
