"""Maximum-likelihood fitting of the factor model on incomplete data.

Two monotone EM-type algorithms are provided:

* ECME treats the missing cells as missing data.  Each sweep maximises the
  observed likelihood exactly over the mean, then takes conditional
  maximisation steps on the expected complete-data likelihood for the
  loadings (closed form, via an eigendecomposition) and the uniquenesses
  (one variable at a time).
* ECM treats only the latent factors as missing.  Its updates for variable
  i use the N_i rows in which i is observed and nothing else.
"""

import enum
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .missing import MissingDataError, mean_impute, observed_means
from .model import (
    FactorParams,
    NotPositiveDefiniteError,
    PatternTerms,
    build_sigma,
    k_max,
)

logger = logging.getLogger(__name__)


class Algorithm(str, enum.Enum):
    ECME = "ECME"
    ECM = "ECM"


class EstimationError(RuntimeError):
    """A fit could not proceed (singular system or invalid covariance)."""

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


@dataclass(frozen=True)
class FitConfig:
    tol: float = 1e-8
    max_iter: int = 500
    eta_floor: float = 0.005
    algorithm: Algorithm = Algorithm.ECME

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if int(self.max_iter) != self.max_iter or self.max_iter < 1:
            raise ValueError("max_iter must be a positive integer")
        if not self.eta_floor > 0:
            raise ValueError("eta_floor must be positive")
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))


@dataclass
class FitResult:
    params: FactorParams
    loglik: float
    trace: np.ndarray
    iterations: int
    converged: bool
    warnings: list = field(default_factory=list)
    algorithm: Algorithm = Algorithm.ECME

    @property
    def k(self):
        return self.params.k

    def to_dict(self):
        return {
            "algorithm": self.algorithm.value,
            "k": self.k,
            **self.params.to_dict(),
            "loglik": self.loglik,
            "iterations": self.iterations,
            "converged": self.converged,
            "warnings": list(self.warnings),
            "trace": [float(v) for v in self.trace],
        }


def _check_fit_inputs(data, k):
    d = data.n_vars
    if not 0 <= k <= k_max(d):
        raise ValueError(f"k={k} outside [0, k_max(d)={k_max(d)}] for d={d}")
    if np.any(data.n_obs_per_var == 0):
        never = np.flatnonzero(data.n_obs_per_var == 0).tolist()
        raise MissingDataError(f"variables {never} are never observed; their parameters cannot be estimated")


def init_pca(data, k, eta=0.005):
    """PCA starting value from the covariance of the mean-imputed data.

    Loadings are the top-k eigenvectors scaled by ``sqrt(max(lam - psi_bar, 0))``
    where ``psi_bar`` averages the trailing eigenvalues.
    """
    _check_fit_inputs(data, k)
    mu = observed_means(data)
    X = mean_impute(data)
    S0 = np.cov(X, rowvar=False, bias=True).reshape(data.n_vars, data.n_vars)
    lam, U = linalg.eigh(S0)
    lam, U = lam[::-1], U[:, ::-1]
    d = data.n_vars
    psi_bar = lam[k:].mean() if k < d else 0.0
    A = U[:, :k] * np.sqrt(np.maximum(lam[:k] - psi_bar, 0.0))
    psi = np.maximum(np.diag(S0) - np.sum(A * A, axis=1), eta)
    return FactorParams(mu, A, psi)


# ---------------------------------------------------------------- ECME steps


def _mu_step(terms):
    data = terms.data
    W_sum = terms.sum_w()
    Wx, _, _ = terms.apply_w(data.filled(0.0))
    try:
        c = linalg.cho_factor(W_sum, lower=True)
    except np.linalg.LinAlgError as exc:
        raise EstimationError("accumulated mean weight matrix is singular") from exc
    return linalg.cho_solve(c, Wx.sum(axis=0)), W_sum


def ecme_mu_step(data, params):
    """Exact maximiser of the observed likelihood over the mean, holding
    (A, Psi) fixed: ``(sum_n W_n)^{-1} sum_n W_n x_n``."""
    mu, _ = _mu_step(PatternTerms(params, data))
    return mu


def _expected_cov(terms, mu, W_sum):
    data = terms.data
    R = data.mask_float * (data.zero_filled - mu)
    V, _, _ = terms.apply_w(R)
    A = terms.params.loadings
    psi = terms.params.uniquenesses
    cond = (V @ A) @ A.T + V * psi  # Sigma W_n r_n = E[x_n - mu | observed]
    E = np.where(data.mask, R, cond)
    sigma = build_sigma(terms.params)
    n = data.n_rows
    S = E.T @ E + n * sigma - sigma @ W_sum @ sigma
    return 0.5 * (S + S.T) / n


def ecme_expected_cov(data, mu, params):
    """Conditional expectation of the centred scatter matrix, divided by N.

    Missing coordinates are replaced by their conditional means and the
    conditional covariances are added; a fully missing row contributes the
    model covariance itself.
    """
    terms = PatternTerms(params, data)
    return _expected_cov(terms, np.asarray(mu, dtype=float), terms.sum_w())


def ecme_loading_step(S, params, k=None):
    """Loadings maximising the expected complete-data likelihood given Psi.

    Eigenpairs of ``Psi^{-1/2} S Psi^{-1/2}`` with eigenvalue above one give
    the columns; columns beyond the count of such eigenvalues are zero.
    """
    k = params.k if k is None else k
    sq = np.sqrt(params.uniquenesses)
    S_bar = S / np.outer(sq, sq)
    lam, U = np.linalg.eigh(0.5 * (S_bar + S_bar.T))
    lam, U = lam[::-1], U[:, ::-1]
    k_eff = int(np.sum(lam[:k] > 1.0))
    A = np.zeros((params.d, k))
    A[:, :k_eff] = sq[:, None] * U[:, :k_eff] * np.sqrt(lam[:k_eff] - 1.0)
    return A


def ecme_psi_step(S_bar, params, eta):
    """Sequential conditional maximisation over each uniqueness.

    ``S_bar`` is the scatter normalised by the *current* Psi, and ``params``
    carries the updated loadings with the current Psi.  Variable i sees the
    already-updated uniquenesses of variables 1..i-1.
    """
    psi = params.uniquenesses
    d = psi.size
    A_bar = params.loadings / np.sqrt(psi)[:, None]
    B = np.eye(d) + A_bar @ A_bar.T
    B_inv = np.linalg.inv(0.5 * (B + B.T))
    new_psi = np.empty(d)
    for i in range(d):
        b = B_inv[:, i].copy()
        b_ii = float(b[i])
        ratio = (float(b @ S_bar @ b) - b_ii) / (b_ii * b_ii) + 1.0
        new_psi[i] = max(ratio * psi[i], eta)
        omega = new_psi[i] / psi[i] - 1.0
        # Sherman-Morrison for B <- B + omega e_i e_i'
        B_inv -= (omega / (1.0 + omega * b_ii)) * (b[:, None] * b)
    return new_psi


def _ecme_sweep(data, params, terms, k, eta):
    mu, W_sum = _mu_step(terms)
    S = _expected_cov(terms, mu, W_sum)
    A = ecme_loading_step(S, params, k)
    sq = np.sqrt(params.uniquenesses)
    S_bar = S / np.outer(sq, sq)
    psi = ecme_psi_step(S_bar, FactorParams._trusted(mu, A, params.uniquenesses), eta)
    return FactorParams._trusted(mu, A, psi)


# ----------------------------------------------------------------- ECM steps


def ecm_posterior_moments(row, observed, params):
    """Posterior mean and covariance of the factors given one row's
    observed coordinates.

    ``row`` holds the observed values, aligned with the index array
    ``observed``.  With nothing observed the prior ``(0, I)`` is returned.
    """
    observed = np.asarray(observed, dtype=int).reshape(-1)
    row = np.asarray(row, dtype=float).reshape(-1)
    k = params.k
    if observed.size == 0:
        return np.zeros(k), np.eye(k)
    a = params.loadings[observed]
    psi = params.uniquenesses[observed]
    precision = np.eye(k) + (a / psi[:, None]).T @ a
    cov = linalg.inv(precision)
    cov = 0.5 * (cov + cov.T)
    mean = cov @ (a.T @ ((row - params.mu[observed]) / psi))
    return mean, cov


def _ecm_sweep(data, params, terms, eta):
    mask = data.mask
    X0 = data.filled(0.0)
    counts = data.n_obs_per_var
    A = params.loadings
    k = A.shape[1]
    R = mask * (X0 - params.mu)
    _, _, Ez = terms.apply_w(R)  # M^{-1} b_n is the posterior mean
    mu = np.sum(mask * (X0 - Ez @ A.T), axis=0) / counts
    Xc = mask * (X0 - mu)
    if k > 0:
        P = data.patterns.astype(float)
        Szz = np.einsum("p,pi,pab->iab", data.pattern_counts.astype(float), P, terms.m_inv)
        Szz += np.einsum("ni,na,nb->iab", mask.astype(float), Ez, Ez)
        Szx = Xc.T @ Ez
        try:
            new_A = np.linalg.solve(Szz, Szx[:, :, None])[:, :, 0]
        except np.linalg.LinAlgError as exc:
            raise EstimationError("factor second-moment sum is singular; too few observations for k") from exc
        fitted = np.sum(new_A * Szx, axis=1)
    else:
        new_A = np.zeros((data.n_vars, 0))
        fitted = 0.0
    psi = (np.sum(Xc * Xc, axis=0) - fitted) / counts
    psi = np.maximum(psi, eta)
    return FactorParams._trusted(mu, new_A, psi)


# --------------------------------------------------------------- driver loop


def _run(data, k, cfg, init, algorithm):
    cfg = FitConfig() if cfg is None else cfg
    _check_fit_inputs(data, k)
    warnings = []
    if data.n_empty_rows:
        warnings.append(f"skipped {data.n_empty_rows} fully missing rows")
        data = data.drop_empty_rows()
    params = init_pca(data, k, cfg.eta_floor) if init is None else init
    if params.k != k or params.d != data.n_vars:
        raise ValueError(f"initial parameters have shape (d={params.d}, k={params.k}), expected ({data.n_vars}, {k})")
    if np.any(params.uniquenesses < cfg.eta_floor):
        params = params.replace(uniquenesses=np.maximum(params.uniquenesses, cfg.eta_floor))

    def terms_for(p, it):
        try:
            return PatternTerms(p, data)
        except NotPositiveDefiniteError as exc:
            raise EstimationError(str(exc), iteration=it) from exc

    terms = terms_for(params, 0)
    loglik = float(np.sum(terms.loglik_rows(params.mu)))
    trace = [loglik]
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        try:
            if algorithm is Algorithm.ECME:
                new = _ecme_sweep(data, params, terms, k, cfg.eta_floor)
            else:
                new = _ecm_sweep(data, params, terms, cfg.eta_floor)
        except EstimationError as exc:
            raise EstimationError(str(exc), iteration=it) from exc
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise EstimationError(f"update failed: {exc}", iteration=it) from exc
        terms = terms_for(new, it)
        new_loglik = float(np.sum(terms.loglik_rows(new.mu)))
        slack = 1e-8 * (1.0 + abs(loglik))
        if new_loglik < loglik - slack:
            warnings.append(f"log-likelihood decreased by {loglik - new_loglik:.3g} at iteration {it}")
        change = abs(new_loglik - loglik) / (1.0 + abs(new_loglik))
        params, loglik = new, new_loglik
        trace.append(loglik)
        if change < cfg.tol:
            converged = True
            break
    if not converged:
        warnings.append(f"not converged after {cfg.max_iter} iterations")
    if np.any(params.uniquenesses <= cfg.eta_floor):
        warnings.append("uniqueness floor active")
    logger.debug("%s k=%d: loglik=%.6f after %d iterations", algorithm.value, k, loglik, it)
    return FitResult(params, loglik, np.asarray(trace), it, converged, warnings, algorithm)


def fit_ecme(data, k, cfg=None, init=None):
    """Fit a k-factor model by ECME.  ``init`` defaults to :func:`init_pca`."""
    return _run(data, k, cfg, init, Algorithm.ECME)


def fit_ecm(data, k, cfg=None, init=None):
    """Fit a k-factor model by ECM.  ``init`` defaults to :func:`init_pca`."""
    return _run(data, k, cfg, init, Algorithm.ECM)


def fit(data, k, cfg=None, init=None):
    """Fit with the algorithm named in ``cfg`` (ECME by default)."""
    cfg = FitConfig() if cfg is None else cfg
    return _run(data, k, cfg, init, cfg.algorithm)
