"""Independent brute-force reference implementations used by the tests.

These deliberately avoid the package's linear algebra paths: kernels are
evaluated with explicit double loops and solves use dense inverses, so an
agreement check actually compares two different routes to the same number.
"""

from __future__ import annotations

import numpy as np

GAUSS_95_WIDTH = 3.919927969080108  # 2 * Phi^-1(0.975)


def dense_kernel_matrix(components, xa, xb):
    """components: iterable of (group indices, lengthscale, output_scale)."""
    out = np.zeros((len(xa), len(xb)))
    for i in range(len(xa)):
        for j in range(len(xb)):
            total = 0.0
            for group, ls, s2 in components:
                d2 = 0.0
                for g in group:
                    d2 += (xa[i][g] - xb[j][g]) ** 2
                total += s2 * np.exp(-0.5 * d2 / ls ** 2)
            out[i, j] = total
    return out


def dense_gp_posterior(components, x, y, noise, x_star, jitter=0.0):
    """Posterior mean/variance and log marginal likelihood via explicit
    inverses, with the same centering convention as the package."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    center = y.mean()
    yc = y - center
    k = dense_kernel_matrix(components, x, x)
    a = k + np.diag(np.asarray(noise, dtype=float)) + jitter * np.eye(n)
    a_inv = np.linalg.inv(a)
    k_star = dense_kernel_matrix(components, x, np.atleast_2d(x_star))
    prior_var = sum(s2 for _, _, s2 in components)
    mean = center + k_star[:, 0] @ a_inv @ yc
    var = prior_var - k_star[:, 0] @ a_inv @ k_star[:, 0]
    sign, logdet = np.linalg.slogdet(a)
    assert sign > 0
    lml = -0.5 * yc @ a_inv @ yc - 0.5 * logdet - 0.5 * n * np.log(2 * np.pi)
    return float(mean), float(var), float(lml)


def ols_normal_equations(x, y):
    """Coefficients and covariance by explicit matrix inversion."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xtx_inv = np.linalg.inv(x.T @ x)
    beta = xtx_inv @ x.T @ y
    dof = x.shape[0] - x.shape[1]
    resid = y - x @ beta
    s2 = (resid @ resid) / dof if dof > 0 else 0.0
    return beta, s2 * xtx_inv


def gaussian_width_argmax(v0, vn, vb, levels_n, levels_b):
    """Closed-form 95% width argmax for independent Gaussian coefficients."""
    best, best_w = None, -1.0
    for n in range(levels_n):
        for b in range(levels_b):
            w = GAUSS_95_WIDTH * np.sqrt(v0 + n * n * vn + b * b * vb)
            if w > best_w:
                best, best_w = (n, b), w
    return best
