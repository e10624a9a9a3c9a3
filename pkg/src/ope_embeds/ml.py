"""Self-contained numerical learners and seeded samplers.

Provides the multinomial logistic regression and linear discriminant
analysis used for embedding-propensity estimation, plus reproducible
random streams keyed by (seed, purpose label, index) so that experiment
runs draw identical values regardless of execution order.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SeededRng:
    """Derives independent, order-insensitive random streams from one seed.

    ``stream(label, index)`` always returns a generator with the same state
    for the same (seed, label, index) triple, so parallel and serial
    execution plans draw bit-identical values.
    """

    seed: int

    def stream(self, label: str, index: int = 0) -> np.random.Generator:
        digest = hashlib.sha256(label.encode("utf-8")).digest()
        label_key = int.from_bytes(digest[:8], "little")
        seq = np.random.SeedSequence([int(self.seed), label_key, int(index)])
        return np.random.default_rng(seq)


def standard_normal(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape)


def exponential(rng: np.random.Generator, shape, rate: float = 1.0) -> np.ndarray:
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate!r}")
    return rng.exponential(1.0 / rate, shape)


def dirichlet(rng: np.random.Generator, alpha) -> np.ndarray:
    alpha = np.asarray(alpha, dtype=float)
    if alpha.ndim != 1 or alpha.size < 1 or np.any(alpha <= 0):
        raise ValueError("alpha must be a 1-d vector of positive concentrations")
    return rng.dirichlet(alpha)


def uniform(rng: np.random.Generator, lo: float, hi: float, shape) -> np.ndarray:
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo!r}, {hi!r}]")
    return rng.uniform(lo, hi, shape)


def categorical(rng: np.random.Generator, probs) -> np.ndarray:
    """Sample one category per row of a row-stochastic probability matrix.

    A single probability vector yields a scalar draw.
    """
    probs = np.asarray(probs, dtype=float)
    single = probs.ndim == 1
    if single:
        probs = probs[None, :]
    if probs.ndim != 2 or np.any(probs < 0):
        raise ValueError("probs must be non-negative vectors")
    sums = probs.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValueError("probability rows must sum to 1")
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    draws = (u[:, None] >= cum).sum(axis=1)
    draws = np.minimum(draws, probs.shape[1] - 1)
    return int(draws[0]) if single else draws


def _log_softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class FitInfo:
    iterations: int
    final_loss: float
    converged: bool


@dataclass(frozen=True)
class MultinomialClassifier:
    """Multinomial logistic regression fit by full-batch gradient descent."""

    weights: np.ndarray  # (n_classes, n_features)
    intercepts: np.ndarray  # (n_classes,)
    l2_penalty: float
    fit_info: FitInfo

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_features(self) -> int:
        return self.weights.shape[1]

    def decision_scores(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"features must have shape (m, {self.n_features}), got {x.shape}"
            )
        return x @ self.weights.T + self.intercepts

    def predict_proba(self, features) -> np.ndarray:
        return np.exp(_log_softmax(self.decision_scores(features)))


def _grouped_loss_grad(
    x: np.ndarray,
    counts: np.ndarray,
    row_weight: np.ndarray,
    n_total: float,
    weights: np.ndarray,
    intercepts: np.ndarray,
    l2: float,
    need_grad: bool,
):
    scores = x @ weights.T + intercepts
    m = scores.max(axis=1, keepdims=True)
    exps = np.exp(scores - m)
    z = exps.sum(axis=1)
    lse = m[:, 0] + np.log(z)
    ce = (row_weight @ lse - float((counts * scores).sum())) / n_total
    loss = ce + 0.5 * l2 * float((weights * weights).sum())
    if not need_grad:
        return loss, None, None
    probs = exps / z[:, None]
    delta = probs * row_weight[:, None] - counts
    grad_w = (delta.T @ x) / n_total + l2 * weights
    grad_b = delta.sum(axis=0) / n_total
    return loss, grad_w, grad_b


def fit_multinomial(
    features,
    labels,
    n_classes: int | None = None,
    l2: float = 1e-6,
    max_iters: int = 200,
    tol: float = 1e-7,
    sample_weight=None,
) -> MultinomialClassifier:
    """Fit an L2-regularized multinomial logistic regression.

    Deterministic full-batch gradient descent with backtracking (Armijo)
    line search from an all-zero start; the loss is non-increasing across
    iterations. Classes absent from ``labels`` keep near-zero scores and
    receive correspondingly small probabilities.

    Identical feature rows are grouped into weighted label counts before
    optimization when that shrinks the problem, which changes nothing
    mathematically but makes large-action-space fits cheap.
    """
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2:
        raise ValueError("features must be a 2-d matrix")
    if not np.all(np.isfinite(x)):
        raise ValueError("features must be finite")
    if y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ValueError("labels must be a vector aligned with features")
    if x.shape[0] < 1:
        raise ValueError("need at least one sample")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    if max_iters < 0:
        raise ValueError("max_iters must be non-negative")
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    if sample_weight is None:
        w_samples = np.ones(x.shape[0])
    else:
        w_samples = np.asarray(sample_weight, dtype=float)
        if w_samples.shape != (x.shape[0],) or np.any(w_samples < 0):
            raise ValueError("sample_weight must be a non-negative vector over samples")
    if float(w_samples.sum()) <= 0:
        raise ValueError("sample weights must not all be zero")

    # Group duplicate feature rows into a per-row label-count matrix when the
    # dense count matrix stays small; identical objective, far fewer rows.
    xu, inverse = np.unique(x, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    if xu.shape[0] < x.shape[0] and xu.shape[0] * k <= 5e7:
        counts = np.zeros((xu.shape[0], k))
        np.add.at(counts, (inverse, y), w_samples)
    else:
        xu = x
        counts = np.zeros((x.shape[0], k))
        counts[np.arange(x.shape[0]), y] = w_samples
    return fit_multinomial_grouped(xu, counts, l2=l2, max_iters=max_iters, tol=tol)


def fit_multinomial_grouped(
    unique_features,
    label_counts,
    l2: float = 1e-6,
    max_iters: int = 200,
    tol: float = 1e-7,
) -> MultinomialClassifier:
    """Fit from pre-grouped data: unique feature rows plus a label-count matrix.

    ``label_counts[u, a]`` is the (possibly weighted) number of samples with
    feature row u and label a. Equivalent to :func:`fit_multinomial` on the
    expanded data; callers that already know the duplicate structure avoid
    the row-grouping cost.
    """
    xu = np.asarray(unique_features, dtype=float)
    counts = np.asarray(label_counts, dtype=float)
    if xu.ndim != 2 or counts.ndim != 2 or counts.shape[0] != xu.shape[0]:
        raise ValueError("label_counts must be (n_unique_rows, n_classes)")
    if not np.all(np.isfinite(xu)):
        raise ValueError("features must be finite")
    if np.any(counts < 0):
        raise ValueError("label counts must be non-negative")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    if max_iters < 0:
        raise ValueError("max_iters must be non-negative")
    row_weight = counts.sum(axis=1)
    keep = row_weight > 0
    xu, counts, row_weight = xu[keep], counts[keep], row_weight[keep]
    n_total = float(row_weight.sum())
    if xu.shape[0] < 1 or n_total <= 0:
        raise ValueError("need at least one weighted sample")
    k = counts.shape[1]

    weights = np.zeros((k, xu.shape[1]))
    intercepts = np.zeros(k)
    loss, grad_w, grad_b = _grouped_loss_grad(
        xu, counts, row_weight, n_total, weights, intercepts, l2, True
    )
    step = 1.0
    iterations = 0
    converged = False
    for _ in range(max_iters):
        grad_sq = float((grad_w * grad_w).sum() + (grad_b * grad_b).sum())
        if grad_sq <= tol * tol:
            converged = True
            break
        # Backtracking (Armijo) line search; candidates are evaluated with
        # their gradient so an accepted step needs no second pass. The step
        # is probed upward each iteration so near-separable fits keep
        # sharpening instead of stalling at a capped step size.
        step = min(step * 2.0, 1e6)
        accepted = False
        for _half in range(60):
            cand_w = weights - step * grad_w
            cand_b = intercepts - step * grad_b
            cand = _grouped_loss_grad(
                xu, counts, row_weight, n_total, cand_w, cand_b, l2, True
            )
            if np.isfinite(cand[0]) and cand[0] <= loss - 1e-4 * step * grad_sq:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            converged = True  # no descent progress within float precision
            break
        weights, intercepts = cand_w, cand_b
        prev_loss = loss
        loss, grad_w, grad_b = cand
        iterations += 1
        if prev_loss - loss <= 1e-14 * max(1.0, abs(prev_loss)):
            converged = True
            break
    return MultinomialClassifier(
        weights=weights,
        intercepts=intercepts,
        l2_penalty=l2,
        fit_info=FitInfo(iterations=iterations, final_loss=float(loss), converged=converged),
    )


def predict_proba(classifier: MultinomialClassifier, features) -> np.ndarray:
    return classifier.predict_proba(features)


@dataclass(frozen=True)
class LdaClassifier:
    """Gaussian class-conditional classifier with shared covariance."""

    means: np.ndarray  # (n_classes, d)
    priors: np.ndarray  # (n_classes,)
    spherical: bool
    sigma2: float | None = None  # spherical variance
    covariance: np.ndarray | None = None  # pooled full covariance
    precision: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_classes(self) -> int:
        return self.means.shape[0]

    @property
    def n_dims(self) -> int:
        return self.means.shape[1]


def fit_lda(
    embeddings,
    labels,
    n_classes: int | None = None,
    spherical: bool = True,
    priors=None,
) -> LdaClassifier:
    """Fit class means, shared (spherical or pooled full) covariance and priors.

    Priors default to empirical class frequencies; pass ``priors`` to
    override them with a known logging distribution.
    """
    x = np.asarray(embeddings, dtype=float)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.ndim != 1 or y.shape[0] != x.shape[0]:
        raise ValueError("embeddings must be (n, d) with aligned labels")
    n, d = x.shape
    k = int(y.max()) + 1 if n_classes is None else int(n_classes)
    if np.any(y < 0) or np.any(y >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    counts = np.bincount(y, minlength=k).astype(float)
    if not spherical and np.any((counts > 0) & (counts < 2)):
        bad = int(np.argmax((counts > 0) & (counts < 2)))
        raise ValueError(
            f"class {bad} has a single sample; pooled covariance needs >= 2 per class"
        )
    means = np.zeros((k, d))
    present = counts > 0
    np.add.at(means, y, x)
    means[present] /= counts[present, None]
    centered = x - means[y]
    if spherical:
        sigma2 = float((centered * centered).sum() / (n * d))
        if sigma2 <= 0:
            raise ValueError("spherical variance is zero; embeddings are degenerate")
        cov = None
        prec = None
    else:
        cov = centered.T @ centered / n
        try:
            prec = np.linalg.inv(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("pooled covariance is singular") from exc
        sigma2 = None
    if priors is None:
        priors_arr = counts / counts.sum()
    else:
        priors_arr = np.asarray(priors, dtype=float)
        if priors_arr.shape != (k,) or np.any(priors_arr < 0):
            raise ValueError("priors must be a non-negative vector over classes")
        if abs(priors_arr.sum() - 1.0) > 1e-9:
            raise ValueError("priors must sum to 1")
    return LdaClassifier(
        means=means,
        priors=priors_arr,
        spherical=spherical,
        sigma2=sigma2,
        covariance=cov,
        precision=prec,
    )


def lda_posterior(classifier: LdaClassifier, embedding) -> np.ndarray:
    """Posterior class probabilities, normalized prior-times-Gaussian-density.

    Accepts a single embedding vector or an (m, d) batch.
    """
    e = np.asarray(embedding, dtype=float)
    single = e.ndim == 1
    if single:
        e = e[None, :]
    if e.shape[1] != classifier.n_dims:
        raise ValueError(
            f"embedding has dimension {e.shape[1]}, classifier expects {classifier.n_dims}"
        )
    diff = e[:, None, :] - classifier.means[None, :, :]  # (m, k, d)
    if classifier.spherical:
        sq = (diff * diff).sum(axis=2) / classifier.sigma2
    else:
        sq = np.einsum("mkd,de,mke->mk", diff, classifier.precision, diff)
    with np.errstate(divide="ignore"):
        log_post = np.log(classifier.priors)[None, :] - 0.5 * sq
    log_post = log_post - log_post.max(axis=1, keepdims=True)
    post = np.exp(log_post)
    post /= post.sum(axis=1, keepdims=True)
    return post[0] if single else post
