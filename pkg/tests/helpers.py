"""Finite-difference oracles built only on ``residuals``."""

import numpy as np

from arma_fpe.arma_core import ArmaParams, residuals, validate_params

GRAD_STEP = 1e-6
HESS_STEP = 1e-4


def _res(vec, order, y):
    return residuals(ArmaParams.from_vector(vec, order), y)


def fd_gradient(eta, y, h=GRAD_STEP):
    """Central differences of the residual path, shape ``(n, p)``."""
    v, order = eta.vector(), eta.order
    cols = []
    for k in range(v.size):
        e = np.zeros(v.size)
        e[k] = h
        cols.append((_res(v + e, order, y) - _res(v - e, order, y)) / (2 * h))
    return np.column_stack(cols)


def fd_hessian(eta, y, h=HESS_STEP):
    """Four-point central second differences of the residual path, shape ``(n, p, p)``."""
    v, order = eta.vector(), eta.order
    p = v.size
    out = np.zeros((len(y), p, p))
    for i in range(p):
        for j in range(i, p):
            ei = np.zeros(p)
            ej = np.zeros(p)
            ei[i] = h
            ej[j] = h
            val = (
                _res(v + ei + ej, order, y)
                - _res(v + ei - ej, order, y)
                - _res(v - ei + ej, order, y)
                + _res(v - ei - ej, order, y)
            ) / (4 * h * h)
            out[:, i, j] = val
            out[:, j, i] = val
    return out


def relative_error(a, b):
    """Componentwise ``|a - b| / max(|b|, 1)``."""
    return np.abs(a - b) / np.maximum(np.abs(b), 1.0)


def random_valid_near(center, radius, space, rng, max_tries=10_000):
    """Uniform draw from the Euclidean ball around ``center``, kept only if valid."""
    c = center.vector()
    for _ in range(max_tries):
        d = rng.standard_normal(c.size)
        d *= radius * rng.uniform() ** (1.0 / c.size) / np.linalg.norm(d)
        cand = ArmaParams.from_vector(c + d, center.order)
        if validate_params(cand, space):
            return cand
    raise RuntimeError("no valid point found near center")
