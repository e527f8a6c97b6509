"""Log-domain kernels and simplex helpers.

Everything downstream works with log-weights in nats. ``-inf`` is a legal
log-weight ("impossible"); ``+inf`` and NaN are always rejected.
"""
import numpy as np

from .errors import InvalidDimension, InvalidWeights

SIMPLEX_ATOL = 1e-12


def check_log_weights(v, name="log-weights"):
    """Return ``v`` as a float array after rejecting NaN and ``+inf`` entries."""
    v = np.asarray(v, dtype=float)
    if np.isnan(v).any():
        raise InvalidWeights(f"{name} contain NaN")
    if np.isposinf(v).any():
        raise InvalidWeights(f"{name} contain +inf")
    return v


def log_sum_exp(v, axis=None, keepdims=False):
    """Stable ``log(sum(exp(v)))`` via max-shift.

    Slices that are entirely ``-inf`` reduce to ``-inf`` without warnings. A
    single finite entry is returned unchanged.
    """
    v = check_log_weights(v)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise InvalidDimension("log_sum_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if not keepdims:
        out = np.squeeze(out, axis=axis) if axis is not None else out.reshape(())
    if out.ndim == 0:
        return float(out)
    return out


def log_mean_exp(v, axis=None):
    """``log(mean(exp(v)))``; exact when all entries are equal."""
    v = check_log_weights(v)
    if v.size == 0 or (axis is not None and v.shape[axis] == 0):
        raise InvalidDimension("log_mean_exp of an empty vector")
    m = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.mean(np.exp(v - shift), axis=axis, keepdims=True)) + shift
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def normalize(v):
    """Rescale a nonnegative vector onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise InvalidDimension("normalize expects a nonempty 1-d vector")
    if not np.all(np.isfinite(v)):
        raise InvalidWeights("weights must be finite")
    if np.any(v < 0):
        raise InvalidWeights("weights must be nonnegative")
    total = v.sum()
    if total <= 0:
        raise InvalidWeights("weights must have at least one positive entry")
    # vectors already on the simplex pass through untouched (keeps the map idempotent)
    if abs(total - 1.0) <= SIMPLEX_ATOL:
        return v.copy()
    return v / total


def log_normalize(log_w):
    """Shift log-weights so that they exponentiate to a probability vector."""
    log_w = check_log_weights(log_w)
    total = log_sum_exp(log_w)
    if total == -np.inf:
        raise InvalidWeights("all log-weights are -inf")
    return log_w - total


def is_simplex(w, atol=SIMPLEX_ATOL):
    w = np.asarray(w, dtype=float)
    return bool(w.ndim == 1 and w.size > 0 and np.all(w >= 0) and abs(w.sum() - 1.0) <= atol)


def kl_divergence(p, q):
    """KL(p || q) in nats for discrete distributions, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidDimension(f"shape mismatch {p.shape} vs {q.shape}")
    mask = p > 0
    if np.any(q[mask] == 0):
        return np.inf
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))
