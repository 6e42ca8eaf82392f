"""Factor-analysis parameterisation and likelihoods.

The k-factor model is ``x = A z + mu + eps`` with ``z ~ N(0, I_k)`` and
``eps ~ N(0, Psi)``, ``Psi`` diagonal, so that ``x ~ N(mu, A A' + Psi)``.
All logarithms are natural.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

LOG_2PI = math.log(2.0 * math.pi)


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """A covariance matrix that must be positive definite is not."""


def k_max(d):
    """Largest factor count whose covariance has no more dof than a full one."""
    if d < 1:
        raise ValueError("d must be positive")
    # exact for perfect squares 1 + 8d; the epsilon guards rounding just below an integer
    return max(0, math.floor(d + (1.0 - math.sqrt(1.0 + 8.0 * d)) / 2.0 + 1e-9))


@dataclass(frozen=True)
class ModelDims:
    """Problem size.  Only ``0 <= k <= d`` is enforced here; the tighter
    :func:`k_max` bound is applied where models are fitted or selected."""

    d: int
    k: int

    def __post_init__(self):
        if self.d < 1:
            raise ValueError(f"d must be positive, got {self.d}")
        if self.k < 0 or self.k > self.d:
            raise ValueError(f"k={self.k} outside [0, d] for d={self.d}")


def dof(dims):
    """Free parameters of a k-factor model: ``d(k+2) - k(k-1)/2``."""
    d, k = dims.d, dims.k
    return d * (k + 2) - k * (k - 1) // 2


def dof_per_variable(dims, i):
    """Free parameters attached to the i-th variable (1-based) under the
    lower-triangular loading layout: ``i+2`` for ``i <= k``, else ``k+2``."""
    if not 1 <= i <= dims.d:
        raise IndexError(f"variable index {i} outside 1..{dims.d}")
    return i + 2 if i <= dims.k else dims.k + 2


def dof_schedule(dims):
    """Vector of :func:`dof_per_variable` for i = 1..d."""
    i = np.arange(1, dims.d + 1)
    return np.where(i <= dims.k, i + 2, dims.k + 2)


@dataclass(frozen=True)
class FactorParams:
    """Parameter triple (mu, A, Psi) of a k-factor model.

    ``uniquenesses`` holds the diagonal of Psi.  Arrays are copied and
    frozen on construction.
    """

    mu: np.ndarray
    loadings: np.ndarray
    uniquenesses: np.ndarray

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        psi = np.array(self.uniquenesses, dtype=float).reshape(-1)
        d = mu.size
        loadings = np.array(self.loadings, dtype=float)
        if loadings.size == 0:
            loadings = np.zeros((d, 0))
        if loadings.ndim != 2 or loadings.shape[0] != d or psi.size != d:
            raise ValueError(
                f"inconsistent shapes: mu {mu.shape}, loadings {loadings.shape}, uniquenesses {psi.shape}"
            )
        if d < 1:
            raise ValueError("model needs at least one variable")
        if loadings.shape[1] > d:
            raise ValueError(f"{loadings.shape[1]} factors exceed d={d}")
        for name, arr in (("mu", mu), ("loadings", loadings), ("uniquenesses", psi)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
        if np.any(psi <= 0):
            raise ValueError("uniquenesses must be strictly positive")
        for arr in (mu, loadings, psi):
            arr.flags.writeable = False
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "loadings", loadings)
        object.__setattr__(self, "uniquenesses", psi)

    @classmethod
    def _trusted(cls, mu, loadings, uniquenesses):
        # skips validation; for arrays produced by the fitting code
        obj = object.__new__(cls)
        for name, arr in (("mu", mu), ("loadings", loadings), ("uniquenesses", uniquenesses)):
            arr.flags.writeable = False
            object.__setattr__(obj, name, arr)
        return obj

    @property
    def d(self):
        return self.mu.size

    @property
    def k(self):
        return self.loadings.shape[1]

    @property
    def dims(self):
        return ModelDims(self.d, self.k)

    def replace(self, mu=None, loadings=None, uniquenesses=None):
        return FactorParams(
            self.mu if mu is None else mu,
            self.loadings if loadings is None else loadings,
            self.uniquenesses if uniquenesses is None else uniquenesses,
        )

    def permute(self, order):
        """Reorder variables: new variable j is old variable ``order[j]``."""
        order = np.asarray(order)
        return FactorParams(self.mu[order], self.loadings[order], self.uniquenesses[order])

    def to_dict(self):
        return {
            "mu": self.mu.tolist(),
            "loadings": self.loadings.tolist(),
            "uniquenesses": self.uniquenesses.tolist(),
        }

    @classmethod
    def from_dict(cls, doc):
        mu = np.asarray(doc["mu"], dtype=float)
        loadings = np.asarray(doc["loadings"], dtype=float).reshape(mu.size, -1)
        return cls(mu, loadings, doc["uniquenesses"])


def build_sigma(params):
    """Model-implied covariance ``A A' + Psi``."""
    A = params.loadings
    sigma = A @ A.T
    sigma = 0.5 * (sigma + sigma.T)  # exact symmetry
    sigma[np.diag_indices_from(sigma)] += params.uniquenesses
    return sigma


def _cholesky(matrix, what="covariance"):
    try:
        return linalg.cholesky(matrix, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"{what} matrix is not positive definite") from exc


def loglik_complete(params, data):
    """Gaussian log-likelihood of fully observed rows under the model."""
    X = np.asarray(data, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.d:
        raise ValueError(f"data shape {X.shape} does not match d={params.d}")
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    if not np.all(np.isfinite(X)):
        raise ValueError("complete-data likelihood requires every cell observed")
    L = _cholesky(build_sigma(params))
    resid = linalg.solve_triangular(L, (X - params.mu).T, lower=True)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    n, d = X.shape
    return -0.5 * (n * (d * LOG_2PI + logdet) + np.sum(resid * resid))


class PatternTerms:
    """Per-pattern factorisation of the observed marginal covariances.

    For a row with observed set O, ``Sigma_OO = Psi_O + A_O A_O'`` is
    handled through the k x k matrix ``M = I + A_O' Psi_O^{-1} A_O``:

        Sigma_OO^{-1} = Psi_O^{-1} - G_O M^{-1} G_O',   G = Psi^{-1} A
        log|Sigma_OO| = sum_O log psi + log|M|

    ``M^{-1}`` is also the posterior covariance of z given the observed part
    of the row.  One Cholesky per distinct missingness pattern.
    """

    def __init__(self, params, data):
        psi = params.uniquenesses
        A = params.loadings
        P = data.patterns.astype(float)
        n_pat = P.shape[0]
        k = A.shape[1]
        self.params = params
        self.data = data
        self.G = A / psi[:, None]
        self.logdet = P @ np.log(psi)
        if k > 0:
            outer = (A[:, :, None] * A[:, None, :]).reshape(A.shape[0], k * k)
            M = ((P / psi) @ outer).reshape(n_pat, k, k)
            M[:, np.arange(k), np.arange(k)] += 1.0
            try:
                chol = np.linalg.cholesky(M)
                self.m_inv = np.linalg.inv(M)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(
                    "observed covariance submatrix is not positive definite"
                ) from exc
            diag = np.diagonal(chol, axis1=1, axis2=2)
            if not np.all(np.isfinite(diag)):
                raise NotPositiveDefiniteError("observed covariance submatrix is not positive definite")
            self.logdet = self.logdet + 2.0 * np.log(diag).sum(axis=1)
        else:
            self.m_inv = np.zeros((n_pat, 0, 0))
        self.row_m_inv = self.m_inv[data.pattern_index]

    def apply_w(self, R):
        """Rows of ``W_n r_n`` with ``W_n`` the zero-padded ``Sigma_OO^{-1}``.

        ``R`` must already be zero on missing cells.  Also returns the
        projections ``b_n = G' r_n`` and ``M^{-1} b_n``.
        """
        psi = self.params.uniquenesses
        B = R @ self.G
        C = np.matmul(self.row_m_inv, B[:, :, None])[:, :, 0]
        V = self.data.mask_float * (R / psi - C @ self.G.T)
        return V, B, C

    def sum_w(self):
        """``sum_n W_n`` over all rows."""
        psi = self.params.uniquenesses
        data = self.data
        total = np.diag(data.n_obs_per_var / psi)
        if self.G.shape[1] > 0:
            P = data.patterns.astype(float)
            H = P[:, :, None] * self.G[None, :, :]
            HM = np.matmul(H, self.m_inv) * data.pattern_counts[:, None, None]
            total -= np.tensordot(HM, H, axes=([0, 2], [0, 2]))
        return 0.5 * (total + total.T)

    def loglik_rows(self, mu):
        """Per-row observed-data log-likelihood at mean ``mu``."""
        data = self.data
        R = data.mask_float * (data.zero_filled - mu)
        psi = self.params.uniquenesses
        quad = np.sum(R * R / psi, axis=1)
        if self.G.shape[1] > 0:
            B = R @ self.G
            C = np.matmul(self.row_m_inv, B[:, :, None])[:, :, 0]
            quad = quad - np.sum(B * C, axis=1)
        d_n = data.n_obs_per_row
        return -0.5 * (d_n * LOG_2PI + self.logdet[data.pattern_index] + quad)


def loglik_observed(params, data):
    """Observed-data log-likelihood: sum over rows of the marginal normal
    log-density of each row's observed coordinates.

    Fully missing rows contribute exactly zero.
    """
    if data.n_vars != params.d:
        raise ValueError(f"data has {data.n_vars} columns but model has d={params.d}")
    if data.n_rows == 0:
        raise ValueError("empty dataset")
    rows = PatternTerms(params, data).loglik_rows(params.mu)
    return float(np.sum(rows))
