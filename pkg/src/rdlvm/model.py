"""Finite-support latent variable models.

A model is a likelihood matrix ``L[i, j] = log l(x_i | z_j)`` over N data
points and M candidate latent points, plus a prior over the M points. This
module evaluates the average negative log likelihood, the per-atom statistic
``c(z_j) = (1/N) sum_i l(x_i|z_j)^alpha / p_alpha(x_i)`` and the lower bound
``nll - max_j log c(z_j)`` on the best NLL reachable by changing the prior.
"""
import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ImpossibleDataPoint, InputFormatError, InvalidDimension, InvalidWeights
from .numerics import check_log_weights, log_normalize, log_sum_exp, normalize

PRIOR_SUM_ATOL = 1e-9
DEFAULT_KKT_TOL = 1e-6


@dataclass(frozen=True)
class LogLikMatrix:
    """N x M matrix of log-likelihoods in nats.

    Rows are data points, columns are latent support points. ``-inf`` marks an
    impossible (data, latent) pair; every row needs at least one finite entry.
    """

    entries: np.ndarray
    row_ids: tuple = None
    support_ids: tuple = None

    def __post_init__(self):
        entries = check_log_weights(self.entries, "log-likelihoods")
        if entries.ndim != 2 or entries.shape[0] < 1 or entries.shape[1] < 1:
            raise InvalidDimension(f"log-likelihood matrix must be N x M with N, M >= 1, got shape {entries.shape}")
        entries = entries.copy()
        entries.flags.writeable = False
        object.__setattr__(self, "entries", entries)
        n, m = entries.shape
        row_ids = tuple(str(i) for i in range(n)) if self.row_ids is None else tuple(self.row_ids)
        support_ids = tuple(f"z_{j + 1}" for j in range(m)) if self.support_ids is None else tuple(self.support_ids)
        if len(row_ids) != n or len(support_ids) != m:
            raise InvalidDimension("id labels do not match matrix shape")
        object.__setattr__(self, "row_ids", row_ids)
        object.__setattr__(self, "support_ids", support_ids)
        dead = np.flatnonzero(np.all(np.isneginf(entries), axis=1))
        if dead.size:
            raise ImpossibleDataPoint(int(dead[0]), row_ids[dead[0]])

    @property
    def n_data(self) -> int:
        return self.entries.shape[0]

    @property
    def n_support(self) -> int:
        return self.entries.shape[1]

    def shift_rows(self, log_scale) -> "LogLikMatrix":
        """Multiply each row of the linear-domain likelihood by ``exp(log_scale[i])``."""
        log_scale = np.asarray(log_scale, dtype=float).reshape(-1, 1)
        return LogLikMatrix(self.entries + log_scale, self.row_ids, self.support_ids)

    def restrict(self, columns) -> "LogLikMatrix":
        columns = list(columns)
        return LogLikMatrix(self.entries[:, columns], self.row_ids, [self.support_ids[j] for j in columns])


@dataclass(frozen=True)
class PriorWeights:
    """Prior over the latent support, stored as log-weights."""

    log_weights: np.ndarray
    support_ids: tuple = None

    def __post_init__(self):
        lw = check_log_weights(self.log_weights, "prior log-weights")
        if lw.ndim != 1 or lw.size == 0:
            raise InvalidDimension("prior must be a nonempty 1-d vector")
        total = math.fsum(np.exp(lw))
        if abs(total - 1.0) > PRIOR_SUM_ATOL:
            raise InvalidWeights(f"prior weights sum to {total!r}, not 1")
        lw = lw.copy()
        lw.flags.writeable = False
        object.__setattr__(self, "log_weights", lw)
        ids = tuple(f"z_{j + 1}" for j in range(lw.size)) if self.support_ids is None else tuple(self.support_ids)
        if len(ids) != lw.size:
            raise InvalidDimension("support_ids do not match prior length")
        object.__setattr__(self, "support_ids", ids)

    @classmethod
    def from_weights(cls, weights, support_ids=None) -> "PriorWeights":
        w = normalize(weights)
        with np.errstate(divide="ignore"):
            return cls(np.log(w), support_ids)

    @classmethod
    def uniform(cls, m: int, support_ids=None) -> "PriorWeights":
        if m < 1:
            raise InvalidDimension("uniform prior needs at least one atom")
        return cls(np.full(m, -math.log(m)), support_ids)

    @classmethod
    def from_log_weights(cls, log_w, support_ids=None) -> "PriorWeights":
        """Build from unnormalized log-weights."""
        return cls(log_normalize(log_w), support_ids)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def __len__(self):
        return self.log_weights.size


@dataclass(frozen=True)
class ModelEvaluation:
    """Per-point log evidence, the average NLL and ``log c`` for one (matrix, prior, alpha)."""

    log_evidence: np.ndarray
    nll: float
    log_c: np.ndarray
    alpha: float = 1.0

    @property
    def max_log_c(self) -> float:
        return float(np.max(self.log_c))

    @property
    def argmax_log_c(self) -> int:
        # np.argmax returns the lowest index on ties
        return int(np.argmax(self.log_c))

    @property
    def std_log_c(self) -> float:
        finite = self.log_c[np.isfinite(self.log_c)]
        return float(np.std(finite)) if finite.size else 0.0


@dataclass(frozen=True)
class OptimalityCertificate:
    holds: bool
    worst_violation: float
    worst_index: int
    tol: float


def _check_alpha(alpha):
    if not (isinstance(alpha, (int, float, np.floating)) and math.isfinite(alpha) and alpha > 0):
        raise ValueError(f"alpha must be a positive finite number, got {alpha!r}")


def _evaluate(L, log_p, alpha, row_ids=None):
    """Array core of :func:`eval_nll`, shared with the optimizer's inner loop."""
    scaled = L if alpha == 1 else alpha * L
    log_ev = log_sum_exp(log_p[None, :] + scaled, axis=1)
    dead = np.flatnonzero(np.isneginf(log_ev))
    if dead.size:
        i = int(dead[0])
        raise ImpossibleDataPoint(i, None if row_ids is None else row_ids[i])
    n = L.shape[0]
    nll = -math.fsum(log_ev) / n
    log_c = log_sum_exp(scaled - log_ev[:, None], axis=0) - math.log(n)
    return log_ev, nll, log_c


def eval_nll(lik: LogLikMatrix, prior: PriorWeights, alpha: float = 1.0) -> ModelEvaluation:
    """Evaluate the (alpha-generalized) average NLL and ``log c`` at a prior.

    ``log_evidence[i] = log sum_j p_j l_ij^alpha``; for ``alpha == 1`` this is
    the model's log marginal likelihood of ``x_i``.

    Raises:
        InvalidDimension: prior length differs from the number of columns.
        ImpossibleDataPoint: some data point has zero evidence.
    """
    _check_alpha(alpha)
    if len(prior) != lik.n_support:
        raise InvalidDimension(f"prior has {len(prior)} atoms but the matrix has {lik.n_support} columns")
    log_ev, nll, log_c = _evaluate(lik.entries, prior.log_weights, float(alpha), lik.row_ids)
    return ModelEvaluation(log_ev, nll, log_c, float(alpha))


def lower_bound(ev: ModelEvaluation) -> float:
    """Lower bound on the best NLL over all priors with the same likelihood."""
    return ev.nll - ev.max_log_c


def kkt_check(ev: ModelEvaluation, prior: PriorWeights, tol: float = DEFAULT_KKT_TOL) -> OptimalityCertificate:
    """Certify that ``prior`` is optimal: ``log c = 0`` on the support, ``<= 0`` off it.

    Atoms whose weight exceeds ``tol`` count as support. The worst violation is
    measured in nats; ties go to the lowest index.
    """
    if len(prior) != ev.log_c.size:
        raise InvalidDimension("prior and evaluation have different support sizes")
    log_c = ev.log_c
    on_support = prior.weights > tol
    with np.errstate(invalid="ignore"):
        viol = np.where(on_support, np.abs(log_c), np.maximum(log_c, 0.0))
    # an atom on the support with c = 0 is an infinite violation
    viol = np.where(np.isnan(viol), np.inf, viol)
    idx = int(np.argmax(viol))
    worst = float(viol[idx])
    return OptimalityCertificate(worst <= tol, worst, idx, float(tol))


# -- file formats ------------------------------------------------------------


def _parse_float(text, lineno, col):
    t = text.strip().lower()
    if t in ("nan", "+nan", "-nan"):
        raise InputFormatError(f"line {lineno}, column {col}: NaN is not a valid log-likelihood")
    try:
        value = float(t)
    except ValueError:
        raise InputFormatError(f"line {lineno}, column {col}: cannot parse {text!r} as a number") from None
    if value == math.inf:
        raise InputFormatError(f"line {lineno}, column {col}: +inf is not a valid log-likelihood")
    return value


def read_loglik_csv(path) -> LogLikMatrix:
    """Read ``id,z_1,...,z_M`` CSV; entries in nats, ``-inf`` allowed."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise InputFormatError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "id":
            raise InputFormatError(f"line 1: header must be 'id,z_1,...,z_M', got {','.join(header)!r}")
        support_ids = header[1:]
        ids, rows = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise InputFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            ids.append(row[0].strip())
            rows.append([_parse_float(c, lineno, k + 2) for k, c in enumerate(row[1:])])
    if not rows:
        raise InputFormatError(f"{path}: no data rows")
    return LogLikMatrix(np.array(rows, dtype=float), ids, support_ids)


def write_loglik_csv(lik: LogLikMatrix, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *lik.support_ids])
        for rid, row in zip(lik.row_ids, lik.entries):
            w.writerow([rid, *(repr(float(v)) for v in row)])


def read_prior_json(path, support_ids=None) -> PriorWeights:
    """Read ``{"support_ids": [...], "weights": [...]}`` (linear-domain weights)."""
    try:
        obj = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"line {exc.lineno}: invalid JSON in prior file: {exc.msg}") from None
    if not isinstance(obj, dict) or "weights" not in obj:
        raise InputFormatError("prior JSON must be an object with a 'weights' list")
    weights = obj["weights"]
    ids = obj.get("support_ids")
    if not isinstance(weights, list) or not all(isinstance(v, (int, float)) for v in weights):
        raise InputFormatError("prior 'weights' must be a list of numbers")
    if ids is not None and len(ids) != len(weights):
        raise InputFormatError("prior 'support_ids' and 'weights' differ in length")
    if support_ids is not None and ids is not None and list(ids) != list(support_ids):
        raise InputFormatError("prior support_ids do not match the likelihood matrix columns")
    w = np.asarray(weights, dtype=float)
    if abs(math.fsum(w) - 1.0) > PRIOR_SUM_ATOL:
        raise InvalidWeights(f"prior weights sum to {math.fsum(w)!r}, not 1")
    return PriorWeights.from_weights(w, ids if ids is not None else support_ids)


def prior_to_json(prior: PriorWeights) -> dict:
    return {"support_ids": list(prior.support_ids), "weights": [float(v) for v in prior.weights]}
