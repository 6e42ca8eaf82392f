"""Synthetic designs and replicated selection studies.

Each replication draws a fresh dataset from the design's factor model,
deletes cells completely at random with the design's per-variable rates,
runs the two-stage selection for every criterion and classifies the chosen
k as an underestimate (U), success (S) or overestimate (O).
"""

import csv
import json
import logging
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .criteria import ALL_CRITERIA, CriterionKind, select_k
from .estimation import FitConfig
from .missing import MissingDataError, MissingRates, apply_mcar_mask, mean_impute
from .model import FactorParams, ModelDims, k_max

logger = logging.getLogger(__name__)

# transposed 10 x 3 loading matrix shared by both designs
BASE_LOADINGS_T = np.array([
    [0.8, 0.6, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [0.0, 0.1, 0.7, -0.7, 0.8, 0.0, 0.2, -0.1, 0.1, -0.1],
    [0.0, 0.0, -0.1, 0.1, 0.1, 0.9, 0.95, -0.95, -0.8, -0.95],
])

LOW_N = 250
HIGH_N = 400
DEFAULT_M_GRID = (0.0, 0.95, 1.0, 1.05)


class StudyAbortedError(RuntimeError):
    """Too many replications failed for the study to be meaningful."""


@dataclass(frozen=True)
class SyntheticDesign:
    name: str
    dims: ModelDims
    n: int
    params: FactorParams
    base_rates: tuple  # rates at multiplier m = 1 for the m-scaled entries
    scaled: tuple  # True where the rate is multiplied by m

    @property
    def true_k(self):
        return self.dims.k

    def rates(self, m):
        base = np.asarray(self.base_rates, dtype=float)
        gamma = np.where(self.scaled, base * m, base)
        if m < 0:
            raise ValueError("rate multiplier m must be nonnegative")
        if np.any(gamma >= 1):
            raise ValueError(f"multiplier m={m} gives a missing rate {gamma.max():.3f} >= 1")
        return MissingRates(gamma)


def _low_rate_template():
    base = (0.6, 0.6, 0.7, 0.7, 0.7, 0.1, 0.1, 0.1, 0.1, 0.1)
    scaled = (True,) * 5 + (False,) * 5
    return base, scaled


def low_dim_design():
    d = 10
    psi = 0.1 * np.linspace(0.9, 1.0, d)
    params = FactorParams(np.zeros(d), BASE_LOADINGS_T.T, psi)
    base, scaled = _low_rate_template()
    return SyntheticDesign("LowDim", ModelDims(d, 3), LOW_N, params, base, scaled)


def high_dim_design():
    d = 40
    stacked = np.vstack([BASE_LOADINGS_T.T, BASE_LOADINGS_T.T])
    A = linalg.block_diag(stacked, stacked)
    psi = 0.2 * np.linspace(0.9, 1.0, d)
    params = FactorParams(np.zeros(d), A, psi)
    base, scaled = _low_rate_template()
    return SyntheticDesign("HighDim", ModelDims(d, 6), HIGH_N, params, base * 4, scaled * 4)


_DESIGNS = {"low": low_dim_design, "lowdim": low_dim_design,
            "high": high_dim_design, "highdim": high_dim_design}


def build_design(name, m=0.0):
    """Return ``(design, rates)`` for a named design at rate multiplier m."""
    try:
        design = _DESIGNS[str(name).lower()]()
    except KeyError:
        raise ValueError(f"unknown design {name!r}; choose 'low' or 'high'") from None
    return design, design.rates(m)


def draw_dataset(design, seed):
    """Sample ``design.n`` rows of ``x = A z + mu + eps``."""
    rng = np.random.default_rng(seed)
    p = design.params
    z = rng.standard_normal((design.n, p.k))
    eps = rng.standard_normal((design.n, p.d)) * np.sqrt(p.uniquenesses)
    return p.mu + z @ p.loadings.T + eps


def scree_eigenvalues(data):
    """Descending eigenvalues of the correlation matrix of the mean-imputed data."""
    X = mean_impute(data)
    sd = X.std(axis=0)
    if np.any(sd <= 0):
        raise MissingDataError(f"zero-variance columns {np.flatnonzero(sd <= 0).tolist()}")
    Z = (X - X.mean(axis=0)) / sd
    corr = Z.T @ Z / X.shape[0]
    return linalg.eigvalsh(0.5 * (corr + corr.T))[::-1]


def replication_seeds(base_seed, design_name, m_index, rep):
    """Independent (data, mask) seeds for one replication cell."""
    key = (zlib.crc32(design_name.encode()), int(m_index), int(rep))
    ss = np.random.SeedSequence(int(base_seed), spawn_key=key)
    data_ss, mask_ss = ss.spawn(2)
    return data_ss, mask_ss


def classify(chosen, true_k):
    return "U" if chosen < true_k else ("S" if chosen == true_k else "O")


def _run_replication(task):
    design, rates, m_index, m, rep, base_seed, k_range, cfg, kinds = task
    data_ss, mask_ss = replication_seeds(base_seed, design.name, m_index, rep)
    record = {"m": m, "rep": rep}
    try:
        X = draw_dataset(design, data_ss)
        data = apply_mcar_mask(X, rates, mask_ss)
        report = select_k(data, k_range, cfg, kinds)
    except Exception as exc:  # noqa: BLE001 - any failure is counted, not fatal
        record["error"] = f"{type(exc).__name__}: {exc}"
        return record
    record["chosen"] = {c.value: int(k) for c, k in report.chosen_k.items()}
    record["nonconverged"] = sorted(
        int(k) for k, diag in report.diagnostics.items() if diag.get("ok") and not diag["converged"]
    )
    return record


@dataclass
class StudyReport:
    design: str
    true_k: int
    m_grid: list
    replications: int
    k_range: tuple
    base_seed: int
    criteria: list
    counts: dict  # (criterion, m) -> {"U": .., "S": .., "O": ..}
    records: list
    failures: int = 0
    runtime: float = field(default=0.0, compare=False)

    def cell(self, criterion, m):
        return self.counts[(CriterionKind(criterion).value, float(m))]

    def to_dict(self):
        """JSON-ready form; runtime is left out so files are reproducible."""
        return {
            "design": self.design,
            "true_k": self.true_k,
            "m_grid": list(self.m_grid),
            "replications": self.replications,
            "k_range": list(self.k_range),
            "base_seed": self.base_seed,
            "criteria": list(self.criteria),
            "failures": self.failures,
            "counts": {
                c: {repr(m): dict(self.counts[(c, m)]) for m in self.m_grid} for c in self.criteria
            },
            "records": self.records,
        }

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def table_rows(self):
        header = ["criterion"] + [f"{label}(m={m:g})" for m in self.m_grid for label in "USO"]
        rows = [header]
        for c in self.criteria:
            row = [c]
            for m in self.m_grid:
                cell = self.counts[(c, m)]
                row += [cell["U"], cell["S"], cell["O"]]
            rows.append(row)
        return rows

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerows(self.table_rows())

    def format_table(self):
        rows = [[str(v) for v in r] for r in self.table_rows()]
        widths = [max(len(r[j]) for r in rows) for j in range(len(rows[0]))]
        return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)


def run_study(design, m_grid=DEFAULT_M_GRID, replications=100, k_range=None, cfg=None,
              base_seed=0, kinds=ALL_CRITERIA, workers=1, max_failure_rate=0.05):
    """Replicated selection study over a grid of rate multipliers.

    ``design`` is a :class:`SyntheticDesign` or a design name.  ``k_range``
    defaults to ``[1, min(k_max(d), true_k + 3)]``.  Replications are
    independent and may be spread over ``workers`` processes; results are
    identical for any worker count.
    """
    if isinstance(design, str):
        design, _ = build_design(design)
    if replications < 1:
        raise ValueError("replications must be at least 1")
    cfg = FitConfig() if cfg is None else cfg
    kinds = [CriterionKind(c) for c in kinds]
    if k_range is None:
        k_range = (1, min(k_max(design.dims.d), design.true_k + 3))
    m_grid = [float(m) for m in m_grid]
    tasks = [
        (design, design.rates(m), mi, m, r, base_seed, tuple(k_range), cfg, kinds)
        for mi, m in enumerate(m_grid)
        for r in range(replications)
    ]
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_replication, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        records = [_run_replication(t) for t in tasks]
    runtime = time.perf_counter() - start

    names = [c.value for c in kinds]
    counts = {(c, m): {"U": 0, "S": 0, "O": 0} for c in names for m in m_grid}
    failures = 0
    for rec in records:
        if "error" in rec:
            failures += 1
            logger.warning("replication m=%g rep=%d failed: %s", rec["m"], rec["rep"], rec["error"])
            continue
        for c in names:
            counts[(c, rec["m"])][classify(rec["chosen"][c], design.true_k)] += 1
    if failures > max_failure_rate * len(records):
        raise StudyAbortedError(f"{failures} of {len(records)} replications failed")
    return StudyReport(design.name, design.true_k, m_grid, replications, tuple(k_range),
                       base_seed, names, counts, records, failures, runtime)
