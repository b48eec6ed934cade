"""Scoring natural-language failure descriptions against model predictions.

A description is scored per class on the validation split: similarities of
the class's correctly and incorrectly predicted examples to the text are
compared via the best class-balanced accuracy over a threshold sweep, and
the resulting error score in [0, 1] measures how well "similarity above
threshold" predicts model errors. The winning (class, text, threshold)
tuples drive slice partitioning for robust retraining.

Threshold search contract (shared with the brute-force oracle in
``slicelab.synth``): candidate thresholds are the midpoints of consecutive
distinct sorted similarity values plus one sentinel below the minimum and
one above the maximum; each candidate is the max-margin representative of
its interval, and ties between candidates resolve to the lowest threshold.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol

import numpy as np

from .dataset import EmbeddingDataset
from .errors import EncodingError, UnscoreableClassError

logger = logging.getLogger(__name__)

MAX_KEYWORDS_PER_CLASS = 50
TOP_KEYWORD_SUGGESTIONS = 10
CLASS_ACCURACY_LOW = 0.2
CLASS_ACCURACY_HIGH = 0.8
DEFAULT_TOP_CLASSES = 100

AUTO_THRESHOLD = "auto-threshold"
USER_THRESHOLD = "user-threshold"


class TextEncoder(Protocol):
    """Maps a prompt to a unit-norm vector; deterministic per prompt."""

    def encode(self, prompt: str) -> np.ndarray: ...


@dataclass(frozen=True)
class PromptScore:
    """Result of scoring one prompt against one class's val predictions."""

    class_id: int
    prompt: str
    error_score: float
    best_threshold: float
    balanced_accuracy: float
    similarities: np.ndarray  # aligned with example_ids
    correct_mask: np.ndarray  # True where the model was right
    example_ids: np.ndarray  # dataset row indices (val split, this class)
    count_above: int
    count_below: int


@dataclass(frozen=True)
class ErrorAnnotation:
    """The feedback unit used for retraining: (class, text, threshold)."""

    class_id: int
    prompt: str
    threshold: float
    error_score: float
    source: str = AUTO_THRESHOLD

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError("threshold must be finite")
        if not 0.0 <= self.error_score <= 1.0:
            raise ValueError("error_score must be in [0, 1]")
        if self.source not in (AUTO_THRESHOLD, USER_THRESHOLD):
            raise ValueError(f"unknown annotation source {self.source!r}")

    def to_json(self) -> dict:
        return {
            "class_id": self.class_id,
            "prompt": self.prompt,
            "threshold": self.threshold,
            "error_score": self.error_score,
            "source": self.source,
        }

    @staticmethod
    def from_json(raw: dict) -> "ErrorAnnotation":
        return ErrorAnnotation(
            class_id=int(raw["class_id"]),
            prompt=str(raw["prompt"]),
            threshold=float(raw["threshold"]),
            error_score=float(raw["error_score"]),
            source=str(raw.get("source", AUTO_THRESHOLD)),
        )


@dataclass(frozen=True)
class SlicePartition:
    """Per-class index sets above/below an annotation's threshold."""

    class_id: int
    above_indices: np.ndarray  # similarity > threshold
    below_indices: np.ndarray  # similarity <= threshold
    split: str


def cosine_sim(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity undefined for zero vector")
    return float(np.dot(u / nu, v / nv))


def threshold_candidates(similarities: np.ndarray) -> np.ndarray:
    """Midpoints between consecutive distinct values plus two sentinels."""
    values = np.unique(np.asarray(similarities, dtype=np.float64))
    mids = (values[:-1] + values[1:]) / 2.0
    return np.concatenate(([values[0] - 1.0], mids, [values[-1] + 1.0]))


def _rates(
    s_correct: np.ndarray, s_error: np.ndarray, taus: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(TPR, TNR) treating "model error" as positive: error predicted when sim > tau."""
    se = np.sort(np.asarray(s_error, dtype=np.float64))
    sc = np.sort(np.asarray(s_correct, dtype=np.float64))
    tpr = (len(se) - np.searchsorted(se, taus, side="right")) / len(se)
    tnr = np.searchsorted(sc, taus, side="right") / len(sc)
    return tpr, tnr


def score_at_threshold(
    s_correct: Iterable[float], s_error: Iterable[float], tau: float
) -> tuple[float, float]:
    """Balanced accuracy and error score at a fixed threshold.

    Returns ``(acc, max(0, 2 * (acc - 0.5)))``; a user-chosen threshold can
    score below chance, hence the clamp.
    """
    sc = np.asarray(list(s_correct), dtype=np.float64)
    se = np.asarray(list(s_error), dtype=np.float64)
    if len(sc) == 0 or len(se) == 0:
        raise ValueError("similarity multisets must be nonempty")
    tpr, tnr = _rates(sc, se, np.asarray([float(tau)]))
    acc = 0.5 * (tpr[0] + tnr[0])
    return float(acc), float(max(0.0, 2.0 * (acc - 0.5)))


def best_threshold(
    s_correct: np.ndarray, s_error: np.ndarray
) -> tuple[float, float, float]:
    """Sweep all candidate thresholds; return (tau, acc, error_score).

    The sentinel candidates always attain balanced accuracy exactly 0.5,
    so the maximum score is never negative. Ties resolve to the lowest
    candidate threshold.
    """
    taus = threshold_candidates(np.concatenate([s_correct, s_error]))
    tpr, tnr = _rates(s_correct, s_error, taus)
    acc = 0.5 * (tpr + tnr)
    best = int(np.argmax(acc))  # first maximum = lowest tau
    best_acc = float(acc[best])
    return float(taus[best]), best_acc, float(max(0.0, 2.0 * (best_acc - 0.5)))


def class_similarities(
    ds: EmbeddingDataset, class_id: int, split: str, text_vec: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """(row indices, similarities) of one class in one split, annotation space."""
    rows = ds.class_indices(class_id, split)
    vec = np.asarray(text_vec, dtype=np.float64)
    if vec.shape != (ds.annotation_dim,):
        raise ValueError(
            f"text vector has shape {vec.shape}, expected ({ds.annotation_dim},)"
        )
    sims = ds.annotation_space[rows].astype(np.float64) @ vec
    return rows, sims


def score_prompt(
    ds: EmbeddingDataset,
    class_id: int,
    correct: np.ndarray,
    text_vec: np.ndarray,
    prompt: str = "",
) -> PromptScore:
    """Score a prompt against one class's validation predictions.

    ``correct`` is a per-example boolean array over the whole dataset
    (meaningful on the val split). Raises UnscoreableClassError when the
    class has no errors or no correct predictions to compare.
    """
    rows, sims = class_similarities(ds, class_id, "val", text_vec)
    if len(rows) == 0:
        raise UnscoreableClassError(f"class {class_id} has no validation examples")
    mask = np.asarray(correct, dtype=bool)[rows]
    s_correct = sims[mask]
    s_error = sims[~mask]
    if len(s_error) == 0:
        raise UnscoreableClassError(f"class {class_id} has no errors to explain")
    if len(s_correct) == 0:
        raise UnscoreableClassError(f"class {class_id} has no correct predictions")

    tau, acc, score = best_threshold(s_correct, s_error)
    above = int(np.sum(sims > tau))
    return PromptScore(
        class_id=class_id,
        prompt=prompt,
        error_score=score,
        best_threshold=tau,
        balanced_accuracy=acc,
        similarities=sims,
        correct_mask=mask,
        example_ids=rows,
        count_above=above,
        count_below=len(sims) - above,
    )


def partition_class(
    ds: EmbeddingDataset,
    annotation: ErrorAnnotation,
    split: str,
    text_vec: np.ndarray,
) -> SlicePartition:
    """Split one class's examples at the annotation's threshold.

    Both sides are returned even when empty; trainers enforce their own
    nonemptiness preconditions.
    """
    rows, sims = class_similarities(ds, annotation.class_id, split, text_vec)
    above = sims > annotation.threshold
    return SlicePartition(
        class_id=annotation.class_id,
        above_indices=rows[above],
        below_indices=rows[~above],
        split=split,
    )


@dataclass(frozen=True)
class KeywordRanking:
    ranked: list[tuple[str, PromptScore]]
    skipped: list[tuple[str, str]]

    def top(self, k: int = TOP_KEYWORD_SUGGESTIONS) -> list[tuple[str, PromptScore]]:
        return self.ranked[:k]


def rank_keywords(
    ds: EmbeddingDataset,
    class_id: int,
    correct: np.ndarray,
    keyword_vecs: Iterable[tuple[str, np.ndarray]],
) -> KeywordRanking:
    """Score candidate keywords and sort by error score (desc, then keyword)."""
    scored: list[tuple[str, PromptScore]] = []
    skipped: list[tuple[str, str]] = []
    for keyword, vec in keyword_vecs:
        try:
            scored.append(
                (keyword, score_prompt(ds, class_id, correct, vec, prompt=keyword))
            )
        except (UnscoreableClassError, ValueError, EncodingError) as exc:
            skipped.append((keyword, str(exc)))
    scored.sort(key=lambda item: (-item[1].error_score, item[0]))
    return KeywordRanking(ranked=scored, skipped=skipped)


def select_candidate_classes(
    per_class_val_accuracy: dict[int, float],
    low: float = CLASS_ACCURACY_LOW,
    high: float = CLASS_ACCURACY_HIGH,
) -> list[int]:
    """Classes whose val accuracy lies in the closed interval [low, high]."""
    for class_id, acc in per_class_val_accuracy.items():
        if not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy for class {class_id} outside [0, 1]: {acc}")
    return sorted(
        cid for cid, acc in per_class_val_accuracy.items() if low <= acc <= high
    )


@dataclass(frozen=True)
class ClassRanking:
    ordered: list[int]
    best_scores: dict[int, float]
    dropped: list[tuple[int, str]]


def rank_classes(
    candidates: Iterable[int],
    keyword_pools: dict[int, list[tuple[str, np.ndarray]]],
    ds: EmbeddingDataset,
    correct: np.ndarray,
    top_k: int = DEFAULT_TOP_CLASSES,
) -> ClassRanking:
    """Order candidate classes by their best keyword error score, descending.

    Classes with an empty pool or no scoreable keyword are dropped with a
    reason. Ties fall back to ascending class id.
    """
    best: dict[int, float] = {}
    dropped: list[tuple[int, str]] = []
    for class_id in candidates:
        pool = keyword_pools.get(class_id, [])
        if not pool:
            dropped.append((class_id, "empty keyword pool"))
            continue
        ranking = rank_keywords(ds, class_id, correct, pool)
        if not ranking.ranked:
            dropped.append((class_id, ranking.skipped[0][1] if ranking.skipped else "unscoreable"))
            continue
        best[class_id] = ranking.ranked[0][1].error_score
    ordered = sorted(best, key=lambda cid: (-best[cid], cid))[:top_k]
    return ClassRanking(ordered=ordered, best_scores=best, dropped=dropped)


@dataclass(frozen=True)
class ThresholdRevision:
    """User-chosen threshold applied on top of a scored prompt."""

    threshold: float
    balanced_accuracy: float
    error_score: float


@dataclass
class PromptRecord:
    """History entry: the original auto-threshold score plus an optional
    user revision. The original is never mutated."""

    index: int
    score: PromptScore
    revision: ThresholdRevision | None = None

    @property
    def effective_threshold(self) -> float:
        return self.revision.threshold if self.revision else self.score.best_threshold

    @property
    def effective_error_score(self) -> float:
        return self.revision.error_score if self.revision else self.score.error_score

    @property
    def source(self) -> str:
        return USER_THRESHOLD if self.revision else AUTO_THRESHOLD

    def revised(self, tau: float) -> "PromptRecord":
        acc, score = score_at_threshold(
            self.score.similarities[self.score.correct_mask],
            self.score.similarities[~self.score.correct_mask],
            tau,
        )
        return PromptRecord(
            index=self.index,
            score=self.score,
            revision=ThresholdRevision(
                threshold=float(tau), balanced_accuracy=acc, error_score=score
            ),
        )


def finalize_best_annotations(
    history: Iterable[PromptRecord],
) -> list[ErrorAnnotation]:
    """Keep, per class, the single highest-scoring prompt (earliest on ties).

    The result depends only on the multiset of records, not their order.
    """
    by_class: dict[int, PromptRecord] = {}
    for record in sorted(history, key=lambda r: r.index):
        incumbent = by_class.get(record.score.class_id)
        if incumbent is None or record.effective_error_score > incumbent.effective_error_score:
            by_class[record.score.class_id] = record
    return [
        ErrorAnnotation(
            class_id=class_id,
            prompt=record.score.prompt,
            threshold=record.effective_threshold,
            error_score=record.effective_error_score,
            source=record.source,
        )
        for class_id, record in sorted(by_class.items())
    ]


def fixture_encode_text(vocab: dict[str, np.ndarray], prompt: str) -> np.ndarray:
    """Mean of in-vocabulary token vectors, renormalized.

    Tokenization is lowercasing plus whitespace splitting; out-of-vocab
    tokens are ignored. Raises EncodingError when nothing is left.
    """
    tokens = prompt.lower().split()
    vecs = [vocab[t] for t in tokens if t in vocab]
    if not vecs:
        raise EncodingError(f"no in-vocabulary token in prompt {prompt!r}")
    mean = np.mean(np.stack(vecs).astype(np.float64), axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise EncodingError(f"prompt {prompt!r} encodes to a zero vector")
    return mean / norm


class FixtureTextEncoder:
    """Vocabulary-backed deterministic stand-in for a text backbone."""

    def __init__(self, vocab: dict[str, np.ndarray]):
        if not vocab:
            raise EncodingError("empty vocabulary")
        dims = {len(v) for v in vocab.values()}
        if len(dims) != 1:
            raise EncodingError(f"inconsistent vocab vector lengths: {sorted(dims)}")
        self.vocab = {t: np.asarray(v, dtype=np.float64) for t, v in vocab.items()}
        self.dim = dims.pop()

    @classmethod
    def from_file(cls, path: str | Path) -> "FixtureTextEncoder":
        return cls(load_vocab(path))

    def encode(self, prompt: str) -> np.ndarray:
        return fixture_encode_text(self.vocab, prompt)


def load_vocab(path: str | Path) -> dict[str, np.ndarray]:
    """Read a vocab.json: flat map token -> array of reals."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise EncodingError("vocab file must be a JSON object")
    return {str(t): np.asarray(v, dtype=np.float64) for t, v in raw.items()}


def load_keyword_pools(path: str | Path) -> dict[int, list[str]]:
    """Read keyword pools: JSON map class id -> list of strings.

    Pools longer than the honored maximum are truncated with a warning.
    """
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    pools: dict[int, list[str]] = {}
    for key, words in raw.items():
        words = [str(w) for w in words]
        if len(words) > MAX_KEYWORDS_PER_CLASS:
            logger.warning(
                "keyword pool for class %s has %d entries; honoring the first %d",
                key, len(words), MAX_KEYWORDS_PER_CLASS,
            )
            words = words[:MAX_KEYWORDS_PER_CLASS]
        pools[int(key)] = words
    return pools
