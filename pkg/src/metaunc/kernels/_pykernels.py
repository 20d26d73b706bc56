"""Pure numpy versions of the compiled kernels.

Each function fills ``out`` in place and has the same signature as its
counterpart in ``_ckernels``.
"""

import numpy as np
from scipy.special import logsumexp

backend = "numpy"

# bound on the (points x draws) temporaries
_BLOCK = 1 << 21


def _rows_per_block(M):
    return max(1, _BLOCK // max(M, 1))


def logistic_normal_lse(z, log_jac, mu, linv, logc, logw, out):
    G = z.shape[0]
    M = mu.shape[0]
    base = logw + logc
    step = _rows_per_block(M)
    for start in range(0, G, step):
        stop = min(start + step, G)
        r = z[start:stop, None, :] - mu[None, :, :]
        u = np.einsum("mab,gmb->gma", linv, r)
        vals = base[None, :] - 0.5 * np.sum(u * u, axis=-1)
        out[start:stop] = logsumexp(vals, axis=1) - log_jac[start:stop]


def dirichlet_lse(logp, am1, logc, logw, out):
    G = logp.shape[0]
    M = am1.shape[0]
    base = logw + logc
    step = _rows_per_block(M)
    for start in range(0, G, step):
        stop = min(start + step, G)
        vals = logp[start:stop] @ am1.T + base[None, :]
        out[start:stop] = logsumexp(vals, axis=1)


def _rhs(S, E, I, beta, gamma, eta, seir, inv_n):
    inf = beta * S * I * inv_n
    if seir:
        return -inf, inf - eta * E, eta * E - gamma * I
    return -inf, np.zeros_like(E), inf - gamma * I


def _rk4_group(beta, gamma, eta, seir, population, initial_infected, n_days, nsteps):
    h = 1.0 / nsteps
    inv_n = 1.0 / population
    S = np.full(beta.shape, population - initial_infected)
    E = np.zeros_like(S)
    I = np.full(beta.shape, float(initial_infected))
    R = np.zeros_like(S)
    out = np.empty(beta.shape + (n_days, 4))
    for day in range(n_days):
        for _ in range(nsteps):
            k1 = _rhs(S, E, I, beta, gamma, eta, seir, inv_n)
            I2 = I + 0.5 * h * k1[2]
            k2 = _rhs(S + 0.5 * h * k1[0], E + 0.5 * h * k1[1], I2, beta, gamma, eta, seir, inv_n)
            I3 = I + 0.5 * h * k2[2]
            k3 = _rhs(S + 0.5 * h * k2[0], E + 0.5 * h * k2[1], I3, beta, gamma, eta, seir, inv_n)
            I4 = I + h * k3[2]
            k4 = _rhs(S + h * k3[0], E + h * k3[1], I4, beta, gamma, eta, seir, inv_n)
            S = S + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
            E = E + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
            R = R + h / 6.0 * gamma * (I + 2.0 * I2 + 2.0 * I3 + I4)
            I = I + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2])
        out[:, day, 0] = S
        out[:, day, 1] = E
        out[:, day, 2] = I
        out[:, day, 3] = R
    return out


def rk4_compartments(beta, gamma, eta, seir, population, initial_infected, n_days,
                     steps_per_day, out):
    steps_per_day = np.asarray(steps_per_day)
    for nsteps in np.unique(steps_per_day):
        idx = np.flatnonzero(steps_per_day == nsteps)
        out[idx] = _rk4_group(beta[idx], gamma[idx], eta[idx], bool(seir), float(population),
                              float(initial_infected), int(n_days), int(nsteps))
