"""Hot loops: predictive-density log-sum-exp over parameter draws and batched RK4.

The compiled extension is used when it imports; otherwise the numpy fallback
is selected. Set ``METAUNC_PURE_PYTHON=1`` to force the fallback.

All entry points split work into contiguous row chunks and may run them on a
thread pool. Each output row depends only on its own input row, so results do
not depend on the thread count.
"""

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import _pykernels

_impl = _pykernels
if os.environ.get("METAUNC_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl
    except ImportError:  # extension not built
        _impl = _pykernels

BACKEND = _impl.backend


def available_backends():
    names = {"numpy": _pykernels}
    try:
        from . import _ckernels
        names["cython"] = _ckernels
    except ImportError:
        pass
    return names


def _resolve(backend):
    if backend is None:
        return _impl
    try:
        return available_backends()[backend]
    except KeyError:
        raise ValueError(f"kernel backend {backend!r} is not available") from None


def _chunked(n, threads, body):
    threads = max(1, int(threads or 1))
    if threads == 1 or n < 2 * threads:
        body(0, n)
        return
    bounds = np.linspace(0, n, threads + 1).astype(int)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(body, a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        for f in futures:
            f.result()


def _c(a, dtype=np.float64):
    return np.ascontiguousarray(a, dtype=dtype)


def logistic_normal_lse(z, log_jac, mu, linv, logc, logw, threads=1, backend=None):
    impl = _resolve(backend)
    z, log_jac, mu, linv, logc, logw = (_c(a) for a in (z, log_jac, mu, linv, logc, logw))
    out = np.empty(z.shape[0])

    def body(a, b):
        impl.logistic_normal_lse(z[a:b], log_jac[a:b], mu, linv, logc, logw, out[a:b])

    _chunked(z.shape[0], threads, body)
    return out


def dirichlet_lse(logp, am1, logc, logw, threads=1, backend=None):
    impl = _resolve(backend)
    logp, am1, logc, logw = (_c(a) for a in (logp, am1, logc, logw))
    out = np.empty(logp.shape[0])

    def body(a, b):
        impl.dirichlet_lse(logp[a:b], am1, logc, logw, out[a:b])

    _chunked(logp.shape[0], threads, body)
    return out


def rk4_compartments(beta, gamma, eta, seir, population, initial_infected, n_days,
                     steps_per_day, threads=1, backend=None):
    impl = _resolve(backend)
    beta, gamma, eta = (_c(np.atleast_1d(a)) for a in (beta, gamma, eta))
    steps = _c(np.broadcast_to(steps_per_day, beta.shape), np.int64)
    out = np.empty((beta.size, int(n_days), 4))

    def body(a, b):
        impl.rk4_compartments(beta[a:b], gamma[a:b], eta[a:b], bool(seir), float(population),
                              float(initial_infected), int(n_days), steps[a:b], out[a:b])

    _chunked(beta.size, threads, body)
    return out
