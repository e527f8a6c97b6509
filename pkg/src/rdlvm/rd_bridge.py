"""Rate-distortion side of prior optimization.

With distortion ``d(x, z) = -log l(x|z)`` and X uniform over the data rows,
the minimum over priors of the alpha-generalized NLL equals the minimum over
test channels of ``I(X;Z) + alpha E[d(X,Z)]``. The channel side is realized
through the optimal prior and the posterior channel
``Q(z|x) = p(z) l(x|z)^alpha / sum_z' p(z') l(x|z')^alpha``.
"""
import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .ba import BaConfig, BaResult, optimize
from .errors import InfiniteDistortion, InvalidDimension, InvalidWeights
from .model import LogLikMatrix, PriorWeights, _check_alpha, eval_nll
from .numerics import kl_divergence

ROW_SUM_ATOL = 1e-9


@dataclass(frozen=True)
class ChannelMatrix:
    """Row-stochastic N x M matrix, row i is ``Q(. | x_i)``."""

    rows: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.rows, dtype=float)
        if q.ndim != 2 or q.shape[0] < 1 or q.shape[1] < 1:
            raise InvalidDimension(f"channel must be a nonempty 2-d matrix, got shape {q.shape}")
        if not np.all(np.isfinite(q)) or np.any(q < 0):
            raise InvalidWeights("channel entries must be finite and nonnegative")
        if np.any(np.abs(q.sum(axis=1) - 1.0) > ROW_SUM_ATOL):
            raise InvalidWeights("channel rows must sum to 1")
        object.__setattr__(self, "rows", q)

    @property
    def output_marginal(self) -> np.ndarray:
        return self.rows.mean(axis=0)


@dataclass(frozen=True)
class LagrangianValue:
    mutual_info: float
    expected_distortion: float
    alpha: float
    total: float


@dataclass(frozen=True)
class EquivalenceReport:
    prior_side: float
    channel_side: float
    abs_diff: float
    passed: bool
    alpha: float

    def to_json(self) -> dict:
        return asdict(self)


def channel_from_prior(lik: LogLikMatrix, prior: PriorWeights, alpha: float = 1.0) -> ChannelMatrix:
    """Posterior test channel induced by ``prior`` and ``l^alpha``."""
    ev = eval_nll(lik, prior, alpha)
    scaled = lik.entries if alpha == 1 else alpha * lik.entries
    log_q = prior.log_weights[None, :] + scaled - ev.log_evidence[:, None]
    return ChannelMatrix(np.exp(log_q))


def lagrangian(lik: LogLikMatrix, q: ChannelMatrix, alpha: float = 1.0) -> LagrangianValue:
    """``I(X;Z) + alpha E[-log l(X|Z)]`` with X uniform over the rows of ``lik``."""
    _check_alpha(alpha)
    Q = q.rows
    L = lik.entries
    if Q.shape != L.shape:
        raise InvalidDimension(f"channel shape {Q.shape} does not match likelihood shape {L.shape}")
    bad = (Q > 0) & np.isneginf(L)
    if bad.any():
        i, j = (int(v) for v in np.argwhere(bad)[0])
        raise InfiniteDistortion(f"channel puts mass on infinite distortion at row {i}, column {j}")
    n = Q.shape[0]
    m = Q.mean(axis=0)
    pos = Q > 0
    # 0 log 0 = 0: only positive entries contribute
    log_ratio = np.zeros_like(Q)
    log_ratio[pos] = np.log(Q[pos]) - np.log(np.broadcast_to(m, Q.shape)[pos])
    mi = math.fsum((Q[pos] * log_ratio[pos]).ravel()) / n
    mi = max(mi, 0.0)
    dist = math.fsum((Q[pos] * -L[pos]).ravel()) / n
    return LagrangianValue(mi, dist, float(alpha), mi + alpha * dist)


def elbo(lik_row, q_row, prior: PriorWeights, alpha: float = 1.0) -> float:
    """Generalized evidence lower bound ``-KL(q || p) + alpha E_q[log l]`` for one data point.

    Never exceeds ``log sum_j p_j l_j^alpha``. Returns ``-inf`` when ``q`` puts
    mass where the prior or the likelihood is zero.
    """
    _check_alpha(alpha)
    L = np.asarray(lik_row, dtype=float)
    q = np.asarray(q_row, dtype=float)
    if L.shape != q.shape or q.shape != prior.log_weights.shape:
        raise InvalidDimension("row, channel row and prior must have the same length")
    if np.any(q < 0) or abs(q.sum() - 1.0) > ROW_SUM_ATOL:
        raise InvalidWeights("q row must lie on the simplex")
    kl = kl_divergence(q, prior.weights)
    if math.isinf(kl):
        return -math.inf
    pos = q > 0
    if np.any(np.isneginf(L[pos])):
        return -math.inf
    return -kl + alpha * math.fsum(q[pos] * L[pos])


def verify_equivalence(lik: LogLikMatrix, alpha: float, cfg: BaConfig = BaConfig()) -> EquivalenceReport:
    """Check numerically that prior optimization and the rate-distortion Lagrangian agree.

    Runs BA for ``alpha``, builds the posterior channel at the resulting prior
    and compares the two objective values. Passes when they differ by at most
    ``10 * cfg.gap_tol``.
    """
    _check_alpha(alpha)
    cfg = replace(cfg, alpha=float(alpha))
    result = optimize(lik, None, cfg)
    return equivalence_from_result(lik, result)


def equivalence_from_result(lik: LogLikMatrix, result: BaResult) -> EquivalenceReport:
    alpha = result.config.alpha
    prior_side = eval_nll(lik, result.prior, alpha).nll
    channel_side = lagrangian(lik, channel_from_prior(lik, result.prior, alpha), alpha).total
    diff = abs(prior_side - channel_side)
    return EquivalenceReport(prior_side, channel_side, diff, diff <= 10 * result.config.gap_tol, alpha)


def lagrangian_decomposition(lik: LogLikMatrix, prior: PriorWeights, alpha: float = 1.0):
    """Return ``(nll, I, D, KL(m || p))`` at the posterior channel of ``prior``.

    The identity ``nll = I + alpha D + KL(m || p)`` holds exactly; ``m`` is the
    channel's output marginal.
    """
    ev = eval_nll(lik, prior, alpha)
    q = channel_from_prior(lik, prior, alpha)
    lv = lagrangian(lik, q, alpha)
    return ev.nll, lv.mutual_info, lv.expected_distortion, kl_divergence(q.output_marginal, prior.weights)
