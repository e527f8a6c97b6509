"""Blahut-Arimoto prior optimization with bound-sandwich traces.

Each update multiplies the prior by ``c(z)``; the NLL never increases, and the
current ``max log c`` is the exact distance between the NLL at the current
prior and the lower bound on the optimum.
"""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidDimension, InvalidInit
from .model import (
    LogLikMatrix,
    OptimalityCertificate,
    PriorWeights,
    _check_alpha,
    _evaluate,
    eval_nll,
    kkt_check,
)

TRACE_COLUMNS = ("iter", "nll", "max_log_c", "std_log_c", "support_size")


@dataclass(frozen=True)
class BaConfig:
    alpha: float = 1.0
    max_iters: int = 10000
    gap_tol: float = 1e-6
    prune_tol: float = 1e-12

    def __post_init__(self):
        _check_alpha(self.alpha)
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")
        if not (math.isfinite(self.gap_tol) and self.gap_tol > 0):
            raise ValueError(f"gap_tol must be positive, got {self.gap_tol!r}")
        if not (math.isfinite(self.prune_tol) and self.prune_tol >= 0):
            raise ValueError(f"prune_tol must be nonnegative, got {self.prune_tol!r}")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    nll: float
    max_log_c: float
    std_log_c: float
    support_size: int


@dataclass
class BaTrace:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.iter, repr(r.nll), repr(r.max_log_c), repr(r.std_log_c), r.support_size])
        return buf.getvalue()


@dataclass(frozen=True)
class BaResult:
    prior: PriorWeights
    trace: BaTrace
    converged: bool
    certificate: OptimalityCertificate
    config: BaConfig

    @property
    def n_iters(self) -> int:
        return len(self.trace)


@dataclass(frozen=True)
class SupportReport:
    support_size: int
    n_distinct_data: int
    violation: bool
    converged: bool


def ba_step(lik: LogLikMatrix, prior: PriorWeights, alpha: float = 1.0) -> PriorWeights:
    """One Blahut-Arimoto update ``p(z) <- p(z) c(z)``, done in log domain."""
    ev = eval_nll(lik, prior, alpha)
    return PriorWeights.from_log_weights(prior.log_weights + ev.log_c, prior.support_ids)


def _std_finite(log_c):
    finite = log_c[np.isfinite(log_c)]
    return float(np.std(finite)) if finite.size else 0.0


def optimize(lik: LogLikMatrix, init: PriorWeights | None, cfg: BaConfig = BaConfig()) -> BaResult:
    """Run Blahut-Arimoto from ``init`` (uniform when ``None``).

    Iteration ``t`` evaluates the current prior, records it in the trace, stops
    if the prior is certified optimal at ``cfg.gap_tol`` and otherwise applies
    one update. Atoms are pruned below ``cfg.prune_tol`` only at termination.

    Raises:
        InvalidInit: ``init`` has a zero-weight atom (BA cannot revive it).
        ImpossibleDataPoint: a data row has zero evidence.
    """
    m = lik.n_support
    if init is None:
        init = PriorWeights.uniform(m, lik.support_ids)
    if len(init) != m:
        raise InvalidDimension(f"init has {len(init)} atoms but the matrix has {m} columns")
    if np.any(np.isneginf(init.log_weights)):
        raise InvalidInit("initial prior must give positive weight to every support point")
    if cfg.prune_tol >= 1.0 / m:
        raise ValueError(f"prune_tol must be below 1/M = {1.0 / m!r}")

    L = lik.entries
    alpha = float(cfg.alpha)
    log_p = init.log_weights.copy()
    log_tol = math.log(cfg.gap_tol)
    log_prune = math.log(cfg.prune_tol) if cfg.prune_tol > 0 else -math.inf
    trace = BaTrace()
    converged = False
    for it in range(1, cfg.max_iters + 1):
        _, nll, log_c = _evaluate(L, log_p, alpha, lik.row_ids)
        max_log_c = float(np.max(log_c))
        trace.records.append(
            TraceRecord(it, nll, max_log_c, _std_finite(log_c), int(np.count_nonzero(log_p > log_prune)))
        )
        if max_log_c <= cfg.gap_tol:
            # same test as kkt_check, on arrays
            support = log_p > log_tol
            if np.all(np.abs(log_c[support]) <= cfg.gap_tol):
                converged = True
                break
        log_p = log_p + log_c
        log_p = log_p - np.max(log_p)
        log_p = log_p - math.log(math.fsum(np.exp(log_p)))

    if cfg.prune_tol > 0:
        log_p = np.where(log_p < log_prune, -np.inf, log_p)
    prior = PriorWeights.from_log_weights(log_p, init.support_ids)
    cert = kkt_check(eval_nll(lik, prior, alpha), prior, cfg.gap_tol)
    return BaResult(prior, trace, converged, cert, cfg)


def support_report(result: BaResult, n_distinct_data: int) -> SupportReport:
    """Compare the pruned support size of a BA optimum with the distinct data count.

    An optimal prior needs at most as many atoms as there are distinct data
    points; a larger support is flagged.
    """
    if n_distinct_data < 1:
        raise ValueError("n_distinct_data must be positive")
    size = int(np.count_nonzero(result.prior.weights > result.config.prune_tol))
    return SupportReport(size, int(n_distinct_data), size > n_distinct_data, result.converged)


def count_distinct_rows(lik: LogLikMatrix) -> int:
    """Number of distinct likelihood rows (data points indistinguishable to the model count once)."""
    return int(np.unique(lik.entries, axis=0).shape[0])
