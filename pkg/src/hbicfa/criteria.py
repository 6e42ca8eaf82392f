"""Penalised-likelihood criteria and the two-stage choice of k.

Every criterion scores a fitted k-factor model as
``observed loglik - penalty`` and the largest score wins.  AIC, BIC and
CAIC charge ``D(k)/2 * C(N)`` with ``C(N)`` equal to 2, log N and
log N + 1.  HBIC charges variable i only for its own sample size:
``sum_i D_i(k)/2 * log N_(i)`` with the counts sorted ascending, so that
the variables carrying the most loading parameters are matched with the
smallest counts.
"""

import enum
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import EstimationError, FitConfig, fit
from .missing import MissingDataError
from .model import ModelDims, dof, dof_schedule, k_max

logger = logging.getLogger(__name__)


class CriterionKind(str, enum.Enum):
    AIC = "AIC"
    BIC = "BIC"
    CAIC = "CAIC"
    HBIC = "HBIC"


ALL_CRITERIA = tuple(CriterionKind)


def penalty(kind, dims, n, n_obs_per_var=None):
    """Complexity penalty of a k-factor model with N rows.

    ``n_obs_per_var`` (the per-variable observed counts) is needed only by
    HBIC; its order is irrelevant.
    """
    kind = CriterionKind(kind)
    if n < 1:
        raise ValueError("N must be at least 1")
    D = dof(dims)
    if kind is CriterionKind.AIC:
        return float(D)
    if kind is CriterionKind.BIC:
        return D / 2 * math.log(n)
    if kind is CriterionKind.CAIC:
        return D / 2 * (math.log(n) + 1.0)
    if n_obs_per_var is None:
        raise ValueError("HBIC needs the per-variable observed counts")
    counts = np.sort(np.asarray(n_obs_per_var, dtype=float))
    if counts.size != dims.d:
        raise ValueError(f"{counts.size} counts given for d={dims.d}")
    if counts[0] < 1:
        raise MissingDataError("HBIC penalty undefined: a variable is never observed")
    # group variables sharing a count so that equal counts reproduce BIC bit for bit
    schedule = dof_schedule(dims)
    values, starts = np.unique(counts, return_index=True)
    ends = list(starts[1:]) + [counts.size]
    return float(sum(int(schedule[a:b].sum()) / 2 * math.log(v) for v, a, b in zip(values, starts, ends)))


def criterion_score(kind, fit_result, data):
    """``fit.loglik - penalty``; the likelihood term is shared by all kinds."""
    dims = ModelDims(data.n_vars, fit_result.k)
    return fit_result.loglik - penalty(kind, dims, data.n_rows, data.n_obs_per_var)


@dataclass
class SelectionReport:
    k_values: list
    logliks: dict
    penalties: dict
    scores: dict
    chosen_k: dict
    diagnostics: dict
    fits: dict = field(default_factory=dict, repr=False)

    @property
    def k_range(self):
        return (min(self.k_values), max(self.k_values))

    def to_dict(self):
        kinds = list(self.chosen_k)
        return {
            "k_range": list(self.k_range),
            "k_values": list(self.k_values),
            "logliks": {str(k): v for k, v in self.logliks.items()},
            "penalties": {c.value: {str(k): v for k, v in self.penalties[c].items()} for c in kinds},
            "scores": {c.value: {str(k): v for k, v in self.scores[c].items()} for c in kinds},
            "chosen_k": {c.value: k for c, k in self.chosen_k.items()},
            "diagnostics": {str(k): v for k, v in self.diagnostics.items()},
        }

    def curve_rows(self):
        """Rows ``(k, loglik, score per criterion)`` over the fitted k values."""
        kinds = list(self.chosen_k)
        for k in self.k_values:
            if k in self.logliks:
                yield [k, self.logliks[k]] + [self.scores[c][k] for c in kinds]


def _argmax_smallest(scores):
    best_k, best = None, -math.inf
    for k in sorted(scores):
        if scores[k] > best:
            best_k, best = k, scores[k]
    return best_k


def select_k(data, k_range=None, cfg=None, kinds=ALL_CRITERIA, keep_fits=False):
    """Fit every k in ``k_range`` once and pick the best k per criterion.

    ``k_range`` is an inclusive ``(k_min, k_max)`` pair, defaulting to
    ``(1, k_max(d))``.  Ties go to the smaller k.  A failed fit is recorded
    in the diagnostics and skipped; selection fails only if every fit does.
    """
    cfg = FitConfig() if cfg is None else cfg
    d = data.n_vars
    lo, hi = (1, k_max(d)) if k_range is None else k_range
    if lo > hi:
        raise ValueError(f"empty k range [{lo}, {hi}]")
    if lo < 0 or hi > k_max(d):
        raise ValueError(f"k range [{lo}, {hi}] outside [0, k_max(d)={k_max(d)}]")
    if np.any(data.n_obs_per_var == 0):
        raise MissingDataError("a variable is never observed; no model can be estimated")
    kinds = [CriterionKind(c) for c in kinds]

    k_values = list(range(lo, hi + 1))
    logliks, diagnostics, fits = {}, {}, {}
    for k in k_values:
        try:
            result = fit(data, k, cfg)
        except (EstimationError, np.linalg.LinAlgError) as exc:
            logger.warning("fit failed for k=%d: %s", k, exc)
            diagnostics[k] = {"ok": False, "error": str(exc)}
            continue
        logliks[k] = result.loglik
        diagnostics[k] = {
            "ok": True,
            "converged": result.converged,
            "iterations": result.iterations,
            "warnings": list(result.warnings),
        }
        if keep_fits:
            fits[k] = result
    if not logliks:
        raise EstimationError("every fit in the k range failed")

    fitted = sorted(logliks)
    for a, b in zip(fitted, fitted[1:]):
        if logliks[b] < logliks[a] - 1e-6 * (1 + abs(logliks[a])):
            diagnostics[b].setdefault("warnings", []).append(
                f"loglik below that of k={a}; likely a local optimum"
            )

    penalties, scores, chosen = {}, {}, {}
    for c in kinds:
        penalties[c] = {
            k: penalty(c, ModelDims(d, k), data.n_rows, data.n_obs_per_var) for k in fitted
        }
        scores[c] = {k: logliks[k] - penalties[c][k] for k in fitted}
        chosen[c] = _argmax_smallest(scores[c])
    return SelectionReport(k_values, logliks, penalties, scores, chosen, diagnostics, fits)
