"""Slow, independent reference computations used as test oracles.

Nothing here calls into the package's likelihood or update code; each
quantity is recomputed from its textbook definition on a separate path.
"""

import math

import numpy as np
from scipy import stats


def sigma_loop(mu, A, psi):
    d, k = A.shape
    out = [[0.0] * d for _ in range(d)]
    for i in range(d):
        for j in range(d):
            s = 0.0
            for f in range(k):
                s += A[i][f] * A[j][f]
            out[i][j] = s + (psi[i] if i == j else 0.0)
    return np.array(out)


def det_cofactor(m):
    m = [list(map(float, row)) for row in m]
    n = len(m)
    if n == 1:
        return m[0][0]
    if n == 2:
        return m[0][0] * m[1][1] - m[0][1] * m[1][0]
    total = 0.0
    for j in range(n):
        minor = [row[:j] + row[j + 1:] for row in m[1:]]
        total += (-1) ** j * m[0][j] * det_cofactor(minor)
    return total


def inverse_cofactor(m):
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    det = det_cofactor(m)
    adj = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            minor = np.delete(np.delete(m, i, axis=0), j, axis=1)
            adj[j, i] = (-1) ** (i + j) * (det_cofactor(minor) if n > 1 else 1.0)
    return adj / det, det


def loglik_complete_cofactor(mu, A, psi, X):
    sigma = sigma_loop(mu, A, psi)
    inv, det = inverse_cofactor(sigma)
    d = len(mu)
    total = 0.0
    for x in np.asarray(X, dtype=float):
        r = x - mu
        total += -0.5 * (d * math.log(2 * math.pi) + math.log(det) + r @ inv @ r)
    return total


def loglik_observed_submatrix(mu, A, psi, values, mask):
    """Row-by-row marginal density of the observed coordinates."""
    sigma = sigma_loop(mu, A, psi)
    total = 0.0
    for x, m in zip(values, mask):
        o = np.flatnonzero(m)
        if o.size == 0:
            continue
        total += stats.multivariate_normal(mean=mu[o], cov=sigma[np.ix_(o, o)]).logpdf(x[o])
    return float(total)


def expected_scatter(mu, A, psi, values, mask):
    """E[(x_n - mu)(x_n - mu)' | observed] averaged over rows, built from the
    explicit conditional-normal formulas on each row's submatrices."""
    sigma = sigma_loop(mu, A, psi)
    n, d = values.shape
    S = np.zeros((d, d))
    for x, m in zip(values, mask):
        o = np.flatnonzero(m)
        mi = np.flatnonzero(~m)
        xhat = np.array(mu, dtype=float)
        T = np.zeros((d, d))
        if o.size:
            xhat[o] = x[o]
        if mi.size:
            if o.size:
                soo_inv = np.linalg.inv(sigma[np.ix_(o, o)])
                smo = sigma[np.ix_(mi, o)]
                xhat[mi] = mu[mi] + smo @ soo_inv @ (x[o] - mu[o])
                T[np.ix_(mi, mi)] = sigma[np.ix_(mi, mi)] - smo @ soo_inv @ smo.T
            else:
                T = sigma.copy()
        r = xhat - mu
        S += np.outer(r, r) + T
    return S / n


def posterior_moments(x_obs, observed, mu, A, psi):
    """E[z | x_o] and cov[z | x_o] from the joint Gaussian of (z, x_o)."""
    observed = np.asarray(observed)
    sigma = sigma_loop(mu, A, psi)
    a_o = A[observed]
    soo = sigma[np.ix_(observed, observed)]
    gain = np.linalg.solve(soo, a_o).T  # A_o' Sigma_oo^{-1}
    mean = gain @ (x_obs - mu[observed])
    cov = np.eye(A.shape[1]) - gain @ a_o
    return mean, cov


def q1(A, psi, S, n=1.0):
    """Expected complete-data log-likelihood up to a constant, as a function
    of the covariance parameters for a given conditional scatter S."""
    sigma = sigma_loop(None, A, psi)
    sign, logdet = np.linalg.slogdet(sigma)
    return -0.5 * n * (logdet + np.trace(np.linalg.solve(sigma, S)))


def golden_max(f, lo, hi, tol=1e-12, max_iter=500):
    """Golden-section search for the maximiser of a unimodal f on [lo, hi]."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol * (1 + abs(a) + abs(b)):
            break
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    return (a + b) / 2


def fd_gradient(fun, x, rel_step=1e-5):
    """Central differences with a relative step."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for j in range(x.size):
        h = rel_step * max(1.0, abs(x[j]))
        up, dn = x.copy(), x.copy()
        up[j] += h
        dn[j] -= h
        grad[j] = (fun(up) - fun(dn)) / (2 * h)
    return grad


def random_params(rng, d, k, psi_lo=0.3, psi_hi=1.5):
    mu = rng.normal(size=d)
    A = rng.normal(size=(d, k))
    psi = rng.uniform(psi_lo, psi_hi, size=d)
    return mu, A, psi


def random_mask(rng, shape, rate, keep_one=True):
    mask = rng.random(shape) >= rate
    if keep_one:
        for n in range(shape[0]):
            if not mask[n].any():
                mask[n, rng.integers(shape[1])] = True
    return mask
