"""Synthetic binary template data with i.i.d. bit-flip noise.

The true model has a finite latent alphabet of T binary templates of length
D; a sample picks a template from the prior and flips each bit with
probability ``flip_prob``. Because the alphabet is finite, ``c(z)`` and the
gap between the NLL and its lower bound are computed exactly.
"""
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ba import BaConfig, BaResult, optimize
from .errors import InputFormatError, InvalidDimension
from .model import LogLikMatrix, PriorWeights, eval_nll
from .numerics import is_simplex, normalize

EXPERIMENT_TRACE_COLUMNS = ("iter", "nll_upper", "nll_lower", "gap", "std_log_c", "support_size")


def binary_entropy(p: float) -> float:
    """Binary entropy in nats."""
    return -p * math.log(p) - (1 - p) * math.log1p(-p)


@dataclass(frozen=True)
class TemplateModel:
    templates: np.ndarray
    flip_prob: float
    prior: np.ndarray = None

    def __post_init__(self):
        t = np.asarray(self.templates)
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
            raise InvalidDimension("templates must be a nonempty T x D array")
        if not np.all((t == 0) | (t == 1)):
            raise ValueError("templates must be binary")
        t = t.astype(np.uint8)
        if np.unique(t, axis=0).shape[0] != t.shape[0]:
            raise ValueError("templates must be distinct")
        if not (0 < self.flip_prob < 0.5):
            raise ValueError(f"flip_prob must lie in (0, 0.5), got {self.flip_prob!r}")
        prior = np.full(t.shape[0], 1.0 / t.shape[0]) if self.prior is None else normalize(self.prior)
        if prior.shape != (t.shape[0],) or not is_simplex(prior):
            raise InvalidDimension("prior must be a probability vector over the templates")
        object.__setattr__(self, "templates", t)
        object.__setattr__(self, "prior", prior)
        object.__setattr__(self, "flip_prob", float(self.flip_prob))

    @property
    def n_templates(self) -> int:
        return self.templates.shape[0]

    @property
    def dim(self) -> int:
        return self.templates.shape[1]


def random_templates(n_templates: int, dim: int, seed, min_distance: int | None = None, exclude=None) -> np.ndarray:
    """Uniform random binary templates with pairwise Hamming distance >= ``min_distance``.

    ``min_distance`` defaults to ``dim // 4``. Rows of ``exclude`` must also be
    kept at that distance (used for distractor templates).
    """
    if min_distance is None:
        min_distance = dim // 4
    rng = np.random.default_rng(seed)
    kept = [] if exclude is None else [np.asarray(e, dtype=np.uint8) for e in exclude]
    n_fixed = len(kept)
    attempts = 0
    while len(kept) - n_fixed < n_templates:
        attempts += 1
        if attempts > 100000:
            raise RuntimeError("could not place templates at the requested distance")
        cand = rng.integers(0, 2, size=dim, dtype=np.uint8)
        if all(np.count_nonzero(cand != k) >= min_distance for k in kept):
            kept.append(cand)
    return np.array(kept[n_fixed:], dtype=np.uint8)


@dataclass(frozen=True)
class SynthDataset:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    train_labels: np.ndarray
    val_labels: np.ndarray
    test_labels: np.ndarray
    seed: int

    @property
    def sizes(self):
        return len(self.train), len(self.val), len(self.test)


def _sample(model, n, rng):
    labels = rng.choice(model.n_templates, size=n, p=model.prior)
    flips = rng.random((n, model.dim)) < model.flip_prob
    return (model.templates[labels] ^ flips).astype(np.uint8), labels.astype(np.int64)


def generate(model: TemplateModel, sizes, seed) -> SynthDataset:
    """Sample train/validation/test partitions; bit-identical for a fixed seed."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or min(sizes) < 1:
        raise ValueError("sizes must be three positive integers (train, val, test)")
    streams = [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)]
    parts = [_sample(model, n, rng) for n, rng in zip(sizes, streams)]
    (tr, ltr), (va, lva), (te, lte) = parts
    return SynthDataset(tr, va, te, ltr, lva, lte, int(seed))


def exact_loglik_matrix(model: TemplateModel, data, templates=None) -> LogLikMatrix:
    """``log l(x_i | template_j) = h log p + (D - h) log(1 - p)``, h the Hamming distance.

    ``templates`` overrides the model's templates as the candidate support (the
    noise level is still the model's).
    """
    t = model.templates if templates is None else np.asarray(templates, dtype=np.uint8)
    x = np.asarray(data)
    if x.ndim != 2 or x.shape[1] != t.shape[1]:
        raise InvalidDimension(f"data must have {t.shape[1]} columns, got shape {x.shape}")
    x = x.astype(np.int64)
    t = t.astype(np.int64)
    h = x @ (1 - t).T + (1 - x) @ t.T
    p = model.flip_prob
    entries = h * math.log(p) + (t.shape[1] - h) * math.log1p(-p)
    return LogLikMatrix(entries.astype(float), support_ids=[f"t_{j}" for j in range(t.shape[0])])


def true_test_nll(model: TemplateModel, test) -> float:
    """Exact NLL of ``test`` under the true model."""
    lik = exact_loglik_matrix(model, test)
    return eval_nll(lik, PriorWeights.from_weights(model.prior, lik.support_ids)).nll


def skewed_prior(m: int, head: float = 0.91) -> np.ndarray:
    """``head`` on the first atom, the rest spread evenly."""
    if m == 1:
        return np.ones(1)
    rest = (1.0 - head) / (m - 1)
    return normalize(np.array([head] + [rest] * (m - 1)))


@dataclass
class ExperimentReport:
    result: BaResult
    true_nll: float
    converged_nll: float
    final_gap: float
    candidate_ids: tuple
    trace_rows: list = field(repr=False, default_factory=list)

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(EXPERIMENT_TRACE_COLUMNS)
        for row in self.trace_rows:
            w.writerow([row[0], *(repr(v) for v in row[1:5]), row[5]])
        return buf.getvalue()

    def to_json(self) -> dict:
        return {
            "true_test_nll": self.true_nll,
            "converged_nll": self.converged_nll,
            "excess_over_true": self.converged_nll - self.true_nll,
            "final_gap": self.final_gap,
            "converged": self.result.converged,
            "iterations": self.result.n_iters,
            "certificate": self.result.certificate.holds,
            "support_ids": list(self.candidate_ids),
            "prior": [float(v) for v in self.result.prior.weights],
        }


def convergence_experiment(model: TemplateModel, dataset: SynthDataset, candidate_support, init=None,
                           cfg: BaConfig = BaConfig()) -> ExperimentReport:
    """Optimize the prior on the test-set likelihood over ``candidate_support``.

    The trace records, per iteration, the NLL upper bound, the lower bound
    ``nll - max log c``, their gap and the spread of ``log c``.
    """
    cands = np.asarray(candidate_support, dtype=np.uint8)
    lik = exact_loglik_matrix(model, dataset.test, cands)
    init_prior = None if init is None else PriorWeights.from_weights(init, lik.support_ids)
    result = optimize(lik, init_prior, cfg)
    rows = [
        (r.iter, r.nll, r.nll - r.max_log_c, r.max_log_c, r.std_log_c, r.support_size)
        for r in result.trace
    ]
    final = eval_nll(lik, result.prior, cfg.alpha)
    return ExperimentReport(
        result=result,
        true_nll=true_test_nll(model, dataset.test),
        converged_nll=final.nll,
        final_gap=max(final.max_log_c, 0.0),
        candidate_ids=lik.support_ids,
        trace_rows=rows,
    )


# -- file formats ------------------------------------------------------------


def write_binary_vectors(vectors, path) -> None:
    lines = ["".join("1" if b else "0" for b in row) for row in np.asarray(vectors)]
    Path(path).write_text("".join(line + "\n" for line in lines))


def read_binary_vectors(path) -> np.ndarray:
    """Read one 0/1 string per line; blank lines are skipped."""
    rows = []
    width = None
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if set(s) - {"0", "1"}:
            raise InputFormatError(f"{path}: line {lineno}: expected only 0/1 characters")
        if width is None:
            width = len(s)
        elif len(s) != width:
            raise InputFormatError(f"{path}: line {lineno}: expected {width} bits, got {len(s)}")
        rows.append([c == "1" for c in s])
    if not rows:
        raise InputFormatError(f"{path}: no vectors")
    return np.array(rows, dtype=np.uint8)


def write_dataset(ds: SynthDataset, model: TemplateModel, out_dir, templates_name="templates.txt") -> dict:
    """Write partitions, labels, templates and the JSON sidecar; return the sidecar."""
    out = Path(out_dir)
    write_binary_vectors(model.templates, out / templates_name)
    for name in ("train", "val", "test"):
        write_binary_vectors(getattr(ds, name), out / f"{name}.txt")
        (out / f"{name}_labels.txt").write_text("".join(f"{int(v)}\n" for v in getattr(ds, f"{name}_labels")))
    sidecar = {
        "seed": ds.seed,
        "sizes": {"train": len(ds.train), "val": len(ds.val), "test": len(ds.test)},
        "flip_prob": model.flip_prob,
        "templates": templates_name,
        "prior": [float(v) for v in model.prior],
    }
    (out / "dataset.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return sidecar


def read_dataset(sidecar_path):
    """Load ``(TemplateModel, SynthDataset)`` from a ``dataset.json`` sidecar."""
    sidecar_path = Path(sidecar_path)
    meta = json.loads(sidecar_path.read_text())
    base = sidecar_path.parent
    tpl = base / meta["templates"]
    if not tpl.exists():
        raise FileNotFoundError(f"template file {tpl} does not exist")
    model = TemplateModel(read_binary_vectors(tpl), meta["flip_prob"], meta.get("prior"))
    parts = {}
    for name in ("train", "val", "test"):
        parts[name] = read_binary_vectors(base / f"{name}.txt")
        lab = base / f"{name}_labels.txt"
        parts[f"{name}_labels"] = (
            np.array([int(v) for v in lab.read_text().split()], dtype=np.int64) if lab.exists() else None
        )
    return model, SynthDataset(seed=int(meta["seed"]), **parts)
