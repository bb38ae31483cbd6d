"""Latent-topic model over weighted documents, trained by variational EM.

Each document carries per-term non-negative weights that act as fractional
pseudo-counts: a term's weight multiplies its responsibility vector in the
gamma update, the corpus-level sufficient statistics, and the bound. Plain
count documents are the special case weight = count.

Inference is mean-field coordinate ascent: responsibilities phi from the
current gamma, then gamma = alpha + sum of weight * phi. The per-document
bound is non-decreasing under these updates; the training objective (document
bounds plus a smoothing prior on the topic-term table) is non-decreasing
across EM iterations.
"""

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, logsumexp

from .docmodel import WeightedDocument
from .errors import FormatError, ValidationError

LDA_MAGIC = b"ALDA"
LDA_VERSION = 1
_LDA_HEADER = struct.Struct("<4sIII")


@dataclass
class LdaConfig:
    """EM and per-document inference settings."""

    seed: int = 0
    em_tol: float = 1e-5
    em_max_iterations: int = 60
    doc_tol: float = 1e-4
    doc_max_iterations: int = 100
    eta: float = 1e-2
    alpha: float | None = None  # None: symmetric 50 / n_topics


@dataclass
class LdaModel:
    n_topics: int
    vocab_size: int
    alpha: np.ndarray = field(compare=False)
    log_beta: np.ndarray = field(compare=False)
    bound_history: list[float] = field(default_factory=list)
    n_iterations: int = 0


@dataclass
class InferenceState:
    """Converged variational parameters for one document.

    ``phi`` rows align with the document's entries (terms ascending); each row
    is a distribution over topics. ``elbo_history`` holds the bound after
    every update sweep.
    """

    gamma: np.ndarray = field(compare=False)
    phi: np.ndarray = field(compare=False)
    elbo_history: list[float] = field(default_factory=list)


@dataclass
class PosteriorVector:
    utt_id: str
    gamma: np.ndarray = field(compare=False)


def _doc_arrays(doc: WeightedDocument, vocab_size: int) -> tuple[np.ndarray, np.ndarray]:
    terms = np.array([t for t, _, _ in doc.entries], dtype=np.int64)
    weights = np.array([w for _, _, w in doc.entries], dtype=np.float64)
    if terms.size and (terms[0] < 0 or terms[-1] >= vocab_size):
        raise ValidationError(
            f"document '{doc.utt_id}' has terms outside vocabulary size {vocab_size}"
        )
    return terms, weights


def elbo(model: LdaModel, doc: WeightedDocument, state: InferenceState) -> float:
    """Variational lower bound for one document at the given state.

    For an empty document with gamma = alpha the Dirichlet terms cancel and
    the bound is exactly zero.
    """
    terms, weights = _doc_arrays(doc, model.vocab_size)
    alpha, gamma, phi = model.alpha, state.gamma, state.phi
    elog_theta = digamma(gamma) - digamma(gamma.sum())
    p_theta = (
        gammaln(alpha.sum()) - gammaln(alpha).sum() + ((alpha - 1.0) * elog_theta).sum()
    )
    q_theta = (
        gammaln(gamma.sum()) - gammaln(gamma).sum() + ((gamma - 1.0) * elog_theta).sum()
    )
    bound = p_theta - q_theta
    if terms.size:
        bound += float(
            np.sum(weights[:, None] * phi * (
                elog_theta[None, :] + model.log_beta[:, terms].T - np.log(phi)
            ))
        )
    return float(bound)


def infer_document(
    model: LdaModel,
    doc: WeightedDocument,
    tol: float = 1e-4,
    max_iters: int = 100,
    init_gamma=None,
) -> InferenceState:
    """Coordinate ascent on (phi, gamma) until gamma stabilizes.

    Stops when the mean absolute gamma change drops below ``tol`` or after
    ``max_iters`` sweeps. ``init_gamma`` warm-starts gamma; the default start
    spreads the document's total weight evenly across topics.
    """
    if max_iters < 1:
        raise ValidationError(f"max_iters must be >= 1, got {max_iters}")
    terms, weights = _doc_arrays(doc, model.vocab_size)
    k = model.n_topics
    if terms.size == 0:
        state = InferenceState(
            gamma=model.alpha.copy(), phi=np.zeros((0, k)), elbo_history=[]
        )
        state.elbo_history.append(elbo(model, doc, state))
        return state

    if init_gamma is None:
        gamma = model.alpha + weights.sum() / k
    else:
        gamma = np.asarray(init_gamma, dtype=np.float64).copy()
    log_beta_doc = model.log_beta[:, terms].T  # (distinct terms, topics)
    history: list[float] = []
    for _ in range(max_iters):
        log_phi = digamma(gamma)[None, :] + log_beta_doc
        log_phi -= logsumexp(log_phi, axis=1)[:, None]
        phi = np.exp(log_phi)
        new_gamma = model.alpha + weights @ phi
        state = InferenceState(gamma=new_gamma, phi=phi, elbo_history=history)
        history.append(elbo(model, doc, state))
        delta = float(np.mean(np.abs(new_gamma - gamma)))
        gamma = new_gamma
        if delta < tol:
            break
    return state


def train_lda(
    docs,
    n_topics: int,
    vocab_size: int,
    config: LdaConfig | None = None,
    init_beta=None,
) -> LdaModel:
    """Variational EM: infer every document, then refit the topic-term table.

    The recorded objective is the sum of document bounds plus
    ``eta * sum(log_beta)``, the smoothing prior matching the M-step's
    additive ``eta``; it is non-decreasing across iterations. Deterministic
    given the seed. ``init_beta`` overrides the seeded random initialization
    with an explicit non-negative table (rows are normalized).
    """
    config = config or LdaConfig()
    docs = list(docs)
    if n_topics < 1:
        raise ValidationError(f"n_topics must be >= 1, got {n_topics}")
    if vocab_size < 1:
        raise ValidationError(f"vocab_size must be >= 1, got {vocab_size}")
    if not any(doc.entries for doc in docs):
        raise ValidationError("cannot train on an all-empty corpus")
    parsed = [_doc_arrays(doc, vocab_size) for doc in docs]

    alpha_val = config.alpha if config.alpha is not None else 50.0 / n_topics
    if alpha_val <= 0:
        raise ValidationError(f"alpha must be positive, got {alpha_val}")
    alpha = np.full(n_topics, alpha_val)

    if init_beta is None:
        rng = np.random.default_rng(config.seed)
        raw = config.eta + config.eta * rng.random((n_topics, vocab_size))
    else:
        raw = np.asarray(init_beta, dtype=np.float64)
        if raw.shape != (n_topics, vocab_size) or np.any(raw < 0) or np.any(
            raw.sum(axis=1) <= 0
        ):
            raise ValidationError("init_beta must be non-negative with positive row sums")
    log_beta = np.log(raw / raw.sum(axis=1, keepdims=True))

    model = LdaModel(
        n_topics=n_topics, vocab_size=vocab_size, alpha=alpha, log_beta=log_beta
    )
    warm: list[np.ndarray | None] = [None] * len(docs)
    history: list[float] = []
    iterations = 0
    for it in range(config.em_max_iterations):
        ss = np.zeros((n_topics, vocab_size))
        total = 0.0
        for i, (doc, (terms, weights)) in enumerate(zip(docs, parsed)):
            state = infer_document(
                model, doc, tol=config.doc_tol, max_iters=config.doc_max_iterations,
                init_gamma=warm[i],
            )
            warm[i] = state.gamma
            total += state.elbo_history[-1]
            if terms.size:
                np.add.at(ss.T, terms, weights[:, None] * state.phi)
        total += config.eta * float(model.log_beta.sum())
        history.append(total)
        iterations = it + 1
        if len(history) >= 2:
            prev, cur = history[-2], history[-1]
            if (cur - prev) / max(abs(prev), 1e-12) < config.em_tol:
                break
        if it == config.em_max_iterations - 1:
            break
        ss += config.eta
        model.log_beta = np.log(ss / ss.sum(axis=1, keepdims=True))

    model.bound_history = history
    model.n_iterations = iterations
    return model


def extract_posteriors(
    model: LdaModel, docs, tol: float = 1e-4, max_iters: int = 100
) -> list[PosteriorVector]:
    """Converged gamma per document, in input order."""
    return [
        PosteriorVector(doc.utt_id, infer_document(model, doc, tol, max_iters).gamma)
        for doc in docs
    ]


# ---------------------------------------------------------------------------
# Serialization


def save_lda(model: LdaModel, path) -> None:
    k, v = model.n_topics, model.vocab_size
    with open(path, "wb") as fh:
        fh.write(_LDA_HEADER.pack(LDA_MAGIC, LDA_VERSION, k, v))
        fh.write(np.ascontiguousarray(model.alpha, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.log_beta, dtype="<f8").tobytes())


def load_lda(path) -> LdaModel:
    data = open(path, "rb").read()
    if len(data) < _LDA_HEADER.size:
        raise FormatError(f"{path}: truncated topic model header")
    magic, version, k, v = _LDA_HEADER.unpack_from(data)
    if magic != LDA_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {LDA_MAGIC!r}")
    if version != LDA_VERSION:
        raise FormatError(f"{path}: unsupported topic model version {version}")
    if k < 1 or v < 1:
        raise FormatError(f"{path}: invalid dimensions {k}x{v}")
    expected = _LDA_HEADER.size + 8 * (k + k * v)
    if len(data) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, got {len(data)}")
    off = _LDA_HEADER.size
    alpha = np.frombuffer(data, dtype="<f8", count=k, offset=off).copy()
    off += 8 * k
    log_beta = np.frombuffer(data, dtype="<f8", count=k * v, offset=off).reshape(k, v).copy()
    if not np.all(np.isfinite(alpha)) or np.any(alpha <= 0):
        raise FormatError(f"{path}: alpha must be positive and finite")
    if np.any(np.isnan(log_beta)) or np.any(log_beta > 0):
        raise FormatError(f"{path}: log_beta entries must be finite log-probabilities")
    row_sums = np.exp(log_beta).sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-8):
        raise FormatError(f"{path}: topic rows must sum to 1")
    return LdaModel(n_topics=k, vocab_size=v, alpha=alpha, log_beta=log_beta)


# ---------------------------------------------------------------------------
# Posterior text format


def write_posteriors(posteriors, path) -> None:
    """Per line: ``id <TAB> g1 g2 ... gK`` with 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        for p in posteriors:
            fh.write(p.utt_id + "\t" + " ".join(f"{g:.9g}" for g in p.gamma) + "\n")


def read_posteriors(path) -> list[PosteriorVector]:
    out: list[PosteriorVector] = []
    k = None
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 2 or not fields[0]:
                raise FormatError(f"{path}:{lineno}: malformed posterior line")
            try:
                gamma = np.array([float(x) for x in fields[1].split()], dtype=np.float64)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-numeric posterior value") from None
            if gamma.size == 0 or not np.all(np.isfinite(gamma)) or np.any(gamma <= 0):
                raise FormatError(
                    f"{path}:{lineno}: posterior values must be positive and finite"
                )
            if k is None:
                k = gamma.size
            elif gamma.size != k:
                raise FormatError(
                    f"{path}:{lineno}: expected {k} values, got {gamma.size}"
                )
            out.append(PosteriorVector(fields[0], gamma))
    return out
