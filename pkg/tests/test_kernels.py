import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.special import logsumexp

from metaunc import kernels

BACKENDS = sorted(kernels.available_backends())


@pytest.fixture
def ln_inputs(rng):
    G, M, k = 300, 40, 2
    z = rng.normal(size=(G, k))
    log_jac = rng.normal(size=G)
    mu = rng.normal(size=(M, k))
    L = np.tril(rng.normal(scale=0.3, size=(M, k, k)))
    L[:, range(k), range(k)] = np.abs(L[:, range(k), range(k)]) + 0.5
    linv = np.linalg.inv(L)
    logc = -np.log(np.abs(np.linalg.det(L))) - k / 2 * np.log(2 * np.pi)
    logw = np.full(M, -np.log(M))
    return z, log_jac, mu, linv, logc, logw


def test_backend_selected():
    assert kernels.BACKEND in BACKENDS
    with pytest.raises(ValueError):
        kernels.logistic_normal_lse(np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)),
                                    np.ones((1, 1, 1)), np.zeros(1), np.zeros(1), backend="fortran")


@pytest.mark.parametrize("backend", BACKENDS)
def test_logistic_normal_direct(ln_inputs, backend):
    z, log_jac, mu, linv, logc, logw = ln_inputs
    r = z[:, None, :] - mu[None]
    q = np.einsum("mab,gmb->gma", linv, r)
    ref = logsumexp(logw + logc - 0.5 * (q ** 2).sum(-1), axis=1) - log_jac
    np.testing.assert_allclose(kernels.logistic_normal_lse(*ln_inputs, backend=backend), ref,
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_dirichlet_direct(rng, backend):
    logp = np.log(rng.dirichlet([1, 1, 1], size=200))
    am1 = rng.gamma(2.0, size=(30, 3)) - 0.5
    logc, logw = rng.normal(size=30), np.full(30, -np.log(30))
    ref = logsumexp(logp @ am1.T + logw + logc, axis=1)
    np.testing.assert_allclose(kernels.dirichlet_lse(logp, am1, logc, logw, backend=backend), ref,
                               rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("seir", [False, True])
@pytest.mark.parametrize("backend", BACKENDS)
def test_rk4_against_adaptive_solver(seir, backend):
    beta, gamma, eta, n, i0 = 1.7, 0.45, 0.9, 763.0, 1.0
    out = kernels.rk4_compartments([beta], [gamma], [eta], seir, n, i0, 14, 50, backend=backend)[0]

    def rhs(t, y):
        S, E, I, R = y
        inf = beta * S * I / n
        if seir:
            return [-inf, inf - eta * E, eta * E - gamma * I, gamma * I]
        return [-inf, 0.0, inf - gamma * I, gamma * I]

    sol = solve_ivp(rhs, (0, 14), [n - i0, 0, i0, 0], t_eval=np.arange(1, 15), rtol=1e-11, atol=1e-9)
    np.testing.assert_allclose(out, sol.y.T, rtol=1e-6, atol=1e-6)
    np.testing.assert_allclose(out.sum(axis=1), n, rtol=1e-12)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
def test_backend_parity(ln_inputs, rng):
    a = kernels.logistic_normal_lse(*ln_inputs, backend="numpy")
    b = kernels.logistic_normal_lse(*ln_inputs, backend="cython")
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
    beta, gamma, eta = rng.uniform(0.5, 3, 20), rng.uniform(0.2, 1, 20), rng.uniform(0.5, 3, 20)
    a = kernels.rk4_compartments(beta, gamma, eta, True, 763, 1, 14, 20, backend="numpy")
    b = kernels.rk4_compartments(beta, gamma, eta, True, 763, 1, 14, 20, backend="cython")
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-10)


@pytest.mark.parametrize("backend", BACKENDS)
def test_thread_count_invariance(ln_inputs, backend):
    one = kernels.logistic_normal_lse(*ln_inputs, threads=1, backend=backend)
    for t in (2, 3, 8):
        np.testing.assert_array_equal(kernels.logistic_normal_lse(*ln_inputs, threads=t, backend=backend), one)
