"""Continuous-latent diagnostics, validated on a closed-form linear-Gaussian model.

The model is ``z ~ N(0, C C^T)``, ``x | z ~ N(A z + b, sigma^2 I)``. Its
evidence, posterior and linear pushforwards are all closed form, which lets
the sampling-based estimators here be checked exactly.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, stats
from scipy.spatial.distance import cdist

from .errors import EstimatorDegenerate, InvalidDimension, InvalidTransform, SingularCovariance
from .numerics import log_mean_exp

LOG_2PI = math.log(2.0 * math.pi)
PUSHFORWARD_ATOL = 1e-10
_CHUNK = 2048


def _as_matrix(x, d, name="data"):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != d:
        raise InvalidDimension(f"{name} must have {d} columns, got shape {x.shape}")
    return x


def _cholesky(cov):
    try:
        chol = linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError:
        raise SingularCovariance("covariance is not positive definite") from None
    diag = np.diag(chol)
    if not np.all(np.isfinite(chol)) or np.min(diag) <= 1e-12 * max(np.max(diag), 1e-300):
        raise SingularCovariance("covariance is numerically singular")
    return chol


def gaussian_logpdf(x, mean, chol):
    """Log-density of ``N(mean, chol chol^T)`` at the rows of ``x``."""
    diff = np.atleast_2d(x) - mean
    w = linalg.solve_triangular(chol, diff.T, lower=True)
    k = chol.shape[0]
    return -0.5 * np.sum(w * w, axis=0) - np.sum(np.log(np.diag(chol))) - 0.5 * k * LOG_2PI


@dataclass(frozen=True)
class LinearGaussianModel:
    """Linear-Gaussian latent variable model.

    Attributes:
        A: d x k decoder matrix.
        b: length-d decoder offset.
        sigma: observation noise standard deviation.
        C: k x k prior covariance factor (identity for the standard prior).
    """

    A: np.ndarray
    b: np.ndarray
    sigma: float
    C: np.ndarray = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d, k = A.shape
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if b.shape != (d,):
            raise InvalidDimension(f"offset b must have length {d}, got {b.shape}")
        C = np.eye(k) if self.C is None else np.atleast_2d(np.asarray(self.C, dtype=float))
        if C.shape != (k, k):
            raise InvalidDimension(f"prior factor C must be {k} x {k}, got {C.shape}")
        if not (math.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"sigma must be positive, got {self.sigma!r}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b)) and np.all(np.isfinite(C))):
            raise ValueError("model parameters must be finite")
        if np.linalg.matrix_rank(C) < k:
            raise SingularCovariance("prior factor C is singular")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def latent_dim(self) -> int:
        return self.A.shape[1]

    @property
    def data_dim(self) -> int:
        return self.A.shape[0]

    @property
    def prior_cov(self):
        return self.C @ self.C.T

    @property
    def marginal_cov(self):
        return self.A @ self.prior_cov @ self.A.T + self.sigma**2 * np.eye(self.data_dim)

    def with_prior_factor(self, C) -> "LinearGaussianModel":
        return LinearGaussianModel(self.A, self.b, self.sigma, C)

    def with_decoder(self, A) -> "LinearGaussianModel":
        return LinearGaussianModel(A, self.b, self.sigma, self.C)

    def decode(self, z):
        return np.atleast_2d(z) @ self.A.T + self.b

    def log_lik(self, x, z):
        """Matrix of ``log l(x_n | z_s)``, shape ``(n_data, n_latent)``."""
        x = _as_matrix(x, self.data_dim)
        mu = self.decode(_as_matrix(z, self.latent_dim, "latent points"))
        sq = cdist(x, mu, "sqeuclidean")
        return -0.5 * sq / self.sigma**2 - self.data_dim * (math.log(self.sigma) + 0.5 * LOG_2PI)

    def log_prior(self, z):
        z = _as_matrix(z, self.latent_dim, "latent points")
        return gaussian_logpdf(z, np.zeros(self.latent_dim), _prior_chol(self.C))

    def sample_prior(self, rng, n):
        return rng.standard_normal((n, self.latent_dim)) @ self.C.T

    def sample(self, rng, n):
        """Draw ``(z, x)`` pairs from the model."""
        z = self.sample_prior(rng, n)
        x = self.decode(z) + self.sigma * rng.standard_normal((n, self.data_dim))
        return z, x

    def posterior(self, x):
        """Exact posterior ``N(mean_n, cov)`` of z given each row of ``x``."""
        x = _as_matrix(x, self.data_dim)
        Cinv = np.linalg.inv(self.C)
        precision = Cinv.T @ Cinv + self.A.T @ self.A / self.sigma**2
        cov = np.linalg.inv(precision)
        cov = 0.5 * (cov + cov.T)
        mean = (x - self.b) @ self.A @ cov.T / self.sigma**2
        return mean, cov


def _prior_chol(C):
    # C C^T has the same distribution as its Cholesky factor, but C itself need
    # not be lower triangular
    return _cholesky(C @ C.T)


def exact_log_evidence(model: LinearGaussianModel, x):
    """Closed-form ``log p(x)``: x ~ N(b, A C C^T A^T + sigma^2 I).

    Returns a float for a single vector, an array for a batch of rows.
    """
    single = np.asarray(x).ndim == 1
    x = _as_matrix(x, model.data_dim)
    out = gaussian_logpdf(x, model.b, _cholesky(model.marginal_cov))
    return float(out[0]) if single else out


def nll(model: LinearGaussianModel, data) -> float:
    return -float(np.mean(exact_log_evidence(model, _as_matrix(data, model.data_dim))))


@dataclass(frozen=True)
class GaussianProposal:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise InvalidDimension("proposal covariance must match the mean")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "_chol", _cholesky(cov))

    def sample(self, rng, n):
        return self.mean + rng.standard_normal((n, self.mean.size)) @ self._chol.T

    def logpdf(self, z):
        return gaussian_logpdf(z, self.mean, self._chol)


def iwae_log_evidence(model, x, proposal: GaussianProposal | None, K: int, seed) -> float:
    """K-sample importance-weighted estimate of ``log p(x)``.

    ``model`` needs ``log_prior(z)``, ``log_lik(x, z)`` and, when ``proposal``
    is ``None`` (sample from the prior), ``sample_prior(rng, n)``. The estimate
    is a stochastic lower bound that tightens as ``K`` grows; it is
    deterministic for a fixed seed.

    Raises:
        EstimatorDegenerate: every importance weight is zero.
    """
    if int(K) != K or K < 1:
        raise ValueError(f"K must be a positive integer, got {K!r}")
    rng = np.random.default_rng(seed)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if proposal is None:
        z = model.sample_prior(rng, int(K))
        log_w = model.log_lik(x, z)[0]
    else:
        z = proposal.sample(rng, int(K))
        log_w = model.log_prior(z) + model.log_lik(x, z)[0] - proposal.logpdf(z)
    if np.all(np.isneginf(log_w)):
        raise EstimatorDegenerate("all importance weights underflowed")
    return log_mean_exp(log_w)


@dataclass(frozen=True)
class GlossyStats:
    max_stat: float
    std_stat: float


@dataclass(frozen=True)
class GlossySample:
    latent_points: np.ndarray
    log_c_values: np.ndarray
    log_evidence: np.ndarray = field(default=None, repr=False)


@dataclass(frozen=True)
class IwaeEvidence:
    K: int
    seed: int

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")


def glossy_statistics(log_c_values) -> GlossyStats:
    """Max and population standard deviation of sampled ``log c`` values."""
    v = np.asarray(log_c_values, dtype=float).reshape(-1)
    if v.size == 0:
        raise InvalidDimension("glossy statistics need at least one value")
    if not np.all(np.isfinite(v)):
        raise ValueError("log c values must be finite")
    return GlossyStats(float(np.max(v)), float(np.std(v)))


def log_c_at(model, data, latent_points, log_evidence):
    """``log c(z) = log mean_n exp(log l(x_n|z) - log p(x_n))`` at each latent point."""
    out = np.empty(len(latent_points))
    for start in range(0, len(latent_points), _CHUNK):
        zs = latent_points[start : start + _CHUNK]
        ll = model.log_lik(data, zs) - log_evidence[:, None]
        out[start : start + len(zs)] = log_mean_exp(ll, axis=0)
    return out


def evidence(model: LinearGaussianModel, data, mode="exact"):
    """Per-point log evidence, exact or by IWAE with the prior as proposal."""
    data = _as_matrix(data, model.data_dim)
    if mode == "exact":
        return exact_log_evidence(model, data)
    if not isinstance(mode, IwaeEvidence):
        raise ValueError(f"unknown evidence mode {mode!r}")
    # one child stream per data index, so results do not depend on evaluation order
    children = np.random.SeedSequence(mode.seed).spawn(len(data))
    return np.array([iwae_log_evidence(model, x, None, mode.K, s) for x, s in zip(data, children)])


def glossy_run(model: LinearGaussianModel, data, evidence_mode="exact"):
    """Glossy statistics at the posterior means of the data points.

    Returns ``(GlossySample, GlossyStats)``; one latent point per data row.
    """
    data = _as_matrix(data, model.data_dim)
    if len(data) < 1:
        raise InvalidDimension("glossy_run needs at least one data point")
    z, _ = model.posterior(data)
    log_ev = evidence(model, data, evidence_mode)
    log_c = log_c_at(model, data, z, log_ev)
    return GlossySample(z, log_c, log_ev), glossy_statistics(log_c)


@dataclass(frozen=True)
class PushforwardReport:
    nll_target_prior: float
    nll_pushforward: float
    abs_diff: float
    stderr: float
    passed: bool

    def to_json(self) -> dict:
        return {
            "nll_target_prior": self.nll_target_prior,
            "nll_pushforward": self.nll_pushforward,
            "abs_diff": self.abs_diff,
            "stderr": self.stderr,
            "passed": self.passed,
        }


def pushforward_check(model: LinearGaussianModel, target_cov_factor, data) -> PushforwardReport:
    """Compare ``(N(0, C C^T), A)`` against ``(N(0, I), A C)`` in closed form.

    The linear map ``z -> C z`` pushes the standard prior onto the target
    prior, so both models must assign the same NLL.
    """
    C = np.atleast_2d(np.asarray(target_cov_factor, dtype=float))
    k = model.latent_dim
    if C.shape != (k, k):
        raise InvalidDimension(f"target factor must be {k} x {k}")
    if np.linalg.matrix_rank(C) < k:
        raise SingularCovariance("target prior factor is singular")
    data = _as_matrix(data, model.data_dim)
    target = LinearGaussianModel(model.A, model.b, model.sigma, C)
    pushed = LinearGaussianModel(model.A @ C, model.b, model.sigma, np.eye(k))
    a, b = nll(target, data), nll(pushed, data)
    diff = abs(a - b)
    return PushforwardReport(a, b, diff, 0.0, diff <= PUSHFORWARD_ATOL)


def _check_components(components, name):
    comps = list(components)
    for c in comps:
        dist = getattr(c, "dist", None)
        if not isinstance(dist, stats.rv_continuous):
            raise InvalidTransform(f"{name} component {c!r} is not a continuous distribution with an invertible CDF")
    return comps


def transport_map(source_components, target_components):
    """Componentwise ``g = F_target^{-1} o F_source`` on (n, k) arrays.

    Uses survival functions in the upper half so the far right tail does not
    round to CDF = 1.
    """
    src = _check_components(source_components, "source")
    tgt = _check_components(target_components, "target")
    if len(src) != len(tgt):
        raise InvalidDimension("source and target need the same number of components")

    def g(z):
        z = np.atleast_2d(np.asarray(z, dtype=float))
        out = np.empty_like(z)
        for j, (s, t) in enumerate(zip(src, tgt)):
            col = z[:, j]
            lower = s.cdf(col)
            upper = lower > 0.5
            res = np.empty_like(col)
            res[~upper] = t.ppf(lower[~upper])
            res[upper] = t.isf(s.sf(col[upper]))
            out[:, j] = res
        if not np.all(np.isfinite(out)):
            raise InvalidTransform("transport map produced non-finite values (CDF saturated)")
        return out

    return g


def _mc_nll(decoder, data, z):
    """MC estimate of the NLL and its delta-method standard error."""
    ll = decoder.log_lik(data, z)
    log_ev = log_mean_exp(ll, axis=1)
    w = np.exp(ll - log_ev[:, None])
    h = -w.mean(axis=0)
    return -float(np.mean(log_ev)), float(np.std(h, ddof=1) / math.sqrt(z.shape[0]))


def pushforward_check_mc(prior_components, target_components, decoder, data, n_mc: int, seed) -> PushforwardReport:
    """Monte Carlo check that pushing the prior through ``g`` leaves the NLL unchanged.

    ``g`` maps each source component onto the matching target component via
    the probability integral transform. One side samples ``z`` from the source
    prior and evaluates ``l(x | g(z))``; the other samples ``y`` from the
    target prior and evaluates ``l(x | y)``. Both sample streams derive from
    ``seed``. Passes when the difference is within 3 standard errors.
    """
    if int(n_mc) != n_mc or n_mc < 2:
        raise ValueError("n_mc must be an integer >= 2")
    g = transport_map(prior_components, target_components)
    src = list(prior_components)
    tgt = list(target_components)
    data = np.atleast_2d(np.asarray(data, dtype=float))
    ss_src, ss_tgt = np.random.SeedSequence(seed).spawn(2)
    rng_src, rng_tgt = np.random.default_rng(ss_src), np.random.default_rng(ss_tgt)
    z = np.column_stack([c.rvs(size=int(n_mc), random_state=rng_src) for c in src])
    y = np.column_stack([c.rvs(size=int(n_mc), random_state=rng_tgt) for c in tgt])
    nll_push, se_push = _mc_nll(decoder, data, g(z))
    nll_tgt, se_tgt = _mc_nll(decoder, data, y)
    se = math.hypot(se_push, se_tgt)
    diff = abs(nll_tgt - nll_push)
    return PushforwardReport(nll_tgt, nll_push, diff, se, diff <= 3 * se)
