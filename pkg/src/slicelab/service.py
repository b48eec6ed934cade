"""HTTP service for the interactive correction loop.

One service hosts one dataset and one session: browse per-class predictions
of a baseline probe, score failure descriptions, adjust thresholds,
finalize the best annotation per class, launch a retraining job, and
compare baseline vs retrained metrics. All mutations are serialized
through a single lock; the retrain job runs on a worker thread and
publishes its result atomically.
"""

from __future__ import annotations

import base64
import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import httpx
import numpy as np
from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .dataset import EmbeddingDataset, load_dataset
from .errors import ConfigError, EncodingError, SlicelabError, UnscoreableClassError
from .probe import (
    EvalReport,
    LinearProbe,
    TrainConfig,
    load_probe,
    predict,
    report_from_predictions,
    train_probe,
)
from .similarity import (
    AUTO_THRESHOLD,
    ErrorAnnotation,
    FixtureTextEncoder,
    KeywordRanking,
    PromptRecord,
    PromptScore,
    ThresholdRevision,
    finalize_best_annotations,
    load_keyword_pools,
    partition_class,
    rank_keywords,
    score_prompt,
)

logger = logging.getLogger(__name__)

SNAPSHOT_VERSION = "session-v1"
RETRAIN_OBJECTIVES = ("slice_balanced", "worst_slice")
HISTOGRAM_BINS = 20

JOB_STATES = ("queued", "running", "done", "failed")
_ALLOWED_TRANSITIONS = {
    ("queued", "running"),
    ("running", "done"),
    ("running", "failed"),
}


class RemoteEncoderError(SlicelabError):
    """The remote text encoder failed or returned an invalid vector."""


@dataclass(frozen=True)
class TextEncoderBinding:
    """``fixture:<vocab path>`` or ``remote:<base url>``."""

    mode: str
    target: str

    @staticmethod
    def parse(spec: str) -> "TextEncoderBinding":
        mode, sep, target = spec.partition(":")
        if not sep or mode not in ("fixture", "remote") or not target:
            raise ConfigError(
                f"text encoder spec {spec!r} must be fixture:<vocab> or remote:<url>"
            )
        return TextEncoderBinding(mode=mode, target=target)

    def build(self, expected_dim: int):
        if self.mode == "fixture":
            encoder = FixtureTextEncoder.from_file(self.target)
            if encoder.dim != expected_dim:
                raise ConfigError(
                    f"vocab dimension {encoder.dim} != annotation dim {expected_dim}"
                )
            return encoder
        return RemoteTextEncoder(self.target, expected_dim)

    def spec(self) -> str:
        return f"{self.mode}:{self.target}"


class RemoteTextEncoder:
    """Client for the remote contract: POST /embed_text {"text"} ->
    {"vector": [...]}. Vectors must come back unit-norm; responses are
    cached since the contract requires determinism per prompt."""

    def __init__(self, base_url: str, dim: int, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.timeout = timeout
        self._cache: dict[str, np.ndarray] = {}

    def encode(self, prompt: str) -> np.ndarray:
        if prompt in self._cache:
            return self._cache[prompt]
        try:
            resp = httpx.post(
                f"{self.base_url}/embed_text",
                json={"text": prompt},
                timeout=self.timeout,
            )
            resp.raise_for_status()
            vec = np.asarray(resp.json()["vector"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, ValueError) as exc:
            raise RemoteEncoderError(f"remote encoder failed: {exc}") from exc
        if vec.shape != (self.dim,):
            raise RemoteEncoderError(
                f"remote encoder returned {vec.shape}, expected ({self.dim},)"
            )
        if abs(np.linalg.norm(vec) - 1.0) > 1e-5:
            raise RemoteEncoderError("remote encoder returned a non-unit vector")
        self._cache[prompt] = vec
        return vec


@dataclass
class JobInfo:
    id: int
    objective: str
    state: str = "queued"
    progress: float = 0.0
    reason: str | None = None

    def transition(self, new_state: str, reason: str | None = None) -> None:
        if (self.state, new_state) not in _ALLOWED_TRANSITIONS:
            raise ConfigError(f"illegal job transition {self.state} -> {new_state}")
        self.state = new_state
        if new_state == "done":
            self.progress = 1.0
        if reason is not None:
            self.reason = reason

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "objective": self.objective,
            "state": self.state,
            "progress": self.progress,
            "reason": self.reason,
        }


@dataclass
class RetrainResult:
    objective: str
    annotations: list[ErrorAnnotation]
    probe: LinearProbe
    before: dict[str, EvalReport]
    after: dict[str, EvalReport]


def histogram_payload(score: PromptScore, tau: float) -> dict:
    """Similarity histogram split by correctness: 20 equal-width bins over
    the observed range, plus counts above/below the threshold."""
    sims = score.similarities
    lo, hi = float(sims.min()), float(sims.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, HISTOGRAM_BINS + 1)
    correct_counts, _ = np.histogram(sims[score.correct_mask], bins=edges)
    error_counts, _ = np.histogram(sims[~score.correct_mask], bins=edges)
    above = int(np.sum(sims > tau))
    return {
        "bin_edges": edges.tolist(),
        "correct_counts": correct_counts.tolist(),
        "error_counts": error_counts.tolist(),
        "threshold": float(tau),
        "count_above": above,
        "count_below": int(len(sims) - above),
    }


def record_json(record: PromptRecord) -> dict:
    score = record.score
    tau = record.effective_threshold
    above = int(np.sum(score.similarities > tau))
    out = {
        "id": record.index,
        "class_id": score.class_id,
        "prompt": score.prompt,
        "auto": {
            "threshold": score.best_threshold,
            "balanced_accuracy": score.balanced_accuracy,
            "error_score": score.error_score,
        },
        "revision": None,
        "threshold": tau,
        "error_score": record.effective_error_score,
        "source": record.source,
        "count_above": above,
        "count_below": int(len(score.similarities) - above),
        "histogram": histogram_payload(score, tau),
    }
    if record.revision is not None:
        out["revision"] = {
            "threshold": record.revision.threshold,
            "balanced_accuracy": record.revision.balanced_accuracy,
            "error_score": record.revision.error_score,
        }
    return out


class Session:
    """State of one annotation session over one dataset."""

    def __init__(
        self,
        ds: EmbeddingDataset,
        binding: TextEncoderBinding,
        baseline: LinearProbe,
        dataset_dir: str | None = None,
        keyword_pools: dict[int, list[str]] | None = None,
        retrain_seed: int = 0,
    ):
        self.ds = ds
        self.binding = binding
        self.encoder = binding.build(ds.annotation_dim)
        self.baseline = baseline
        self.dataset_dir = dataset_dir
        self.keyword_pools = keyword_pools
        self.retrain_seed = retrain_seed

        self.lock = threading.RLock()
        self.history: list[PromptRecord] = []
        self._by_prompt: dict[tuple[int, str], int] = {}
        self.finalized: list[ErrorAnnotation] | None = None
        self.jobs: dict[int, JobInfo] = {}
        self._next_job_id = 1
        self.retrain_result: RetrainResult | None = None

        val_rows = np.flatnonzero(ds.split == "val")
        _, predicted = predict(baseline, ds.embeddings[val_rows])
        self.val_rows = val_rows
        self.val_predicted = predicted
        self.correct = np.zeros(ds.count, dtype=bool)
        self.correct[val_rows] = predicted == ds.labels[val_rows]

    # -- browsing --------------------------------------------------------

    def class_summary(self) -> list[dict]:
        out = []
        for c in range(self.ds.num_classes):
            val = self.ds.class_indices(c, "val")
            train = self.ds.class_indices(c, "train")
            n_correct = int(np.sum(self.correct[val]))
            out.append(
                {
                    "id": c,
                    "name": self.ds.class_names[c],
                    "train_count": int(len(train)),
                    "val_count": int(len(val)),
                    "val_correct": n_correct,
                    "val_errors": int(len(val) - n_correct),
                    "val_accuracy": float(n_correct / len(val)) if len(val) else None,
                }
            )
        return out

    def class_examples(self, class_id: int, correct: bool | None, limit: int) -> list[dict]:
        rows = self.ds.class_indices(class_id, "val")
        pos = {int(r): i for i, r in enumerate(self.val_rows)}
        out = []
        for r in rows:
            is_correct = bool(self.correct[r])
            if correct is not None and is_correct != correct:
                continue
            thumb = None
            if self.ds.thumbnail is not None and self.ds.thumbnail[int(r)] is not None:
                thumb = f"/data/{self.ds.thumbnail[int(r)]}"
            out.append(
                {
                    "id": int(r),
                    "label": int(self.ds.labels[r]),
                    "predicted": int(self.val_predicted[pos[int(r)]]),
                    "correct": is_correct,
                    "thumbnail": thumb,
                }
            )
            if len(out) >= limit:
                break
        return out

    def keyword_suggestions(self, class_id: int) -> KeywordRanking:
        if self.keyword_pools is None:
            raise ConfigError("no keyword pool file configured")
        pool = self.keyword_pools.get(class_id, [])
        encoded = []
        for keyword in pool:
            try:
                encoded.append((keyword, self.encoder.encode(keyword)))
            except EncodingError:
                continue
        return rank_keywords(self.ds, class_id, self.correct, encoded)

    # -- prompt history --------------------------------------------------

    def submit_prompt(self, class_id: int, text: str) -> tuple[PromptRecord, bool]:
        """Returns (record, created). Identical (class, text) pairs return
        the existing record."""
        with self.lock:
            key = (class_id, text)
            if key in self._by_prompt:
                return self.history[self._by_prompt[key]], False
            vec = self.encoder.encode(text)
            score = score_prompt(self.ds, class_id, self.correct, vec, prompt=text)
            record = PromptRecord(index=len(self.history), score=score)
            self.history.append(record)
            self._by_prompt[key] = record.index
            return record, True

    def set_threshold(self, prompt_id: int, tau: float) -> PromptRecord:
        with self.lock:
            if not 0 <= prompt_id < len(self.history):
                raise KeyError(f"unknown prompt id {prompt_id}")
            record = self.history[prompt_id].revised(tau)
            self.history[prompt_id] = record
            return record

    def finalize(self) -> list[ErrorAnnotation]:
        with self.lock:
            self.finalized = finalize_best_annotations(self.history)
            return self.finalized

    # -- retraining ------------------------------------------------------

    def active_job(self) -> JobInfo | None:
        for job in self.jobs.values():
            if job.state in ("queued", "running"):
                return job
        return None

    def start_retrain(self, objective: str) -> JobInfo:
        if objective not in RETRAIN_OBJECTIVES:
            raise ConfigError(
                f"objective must be one of {RETRAIN_OBJECTIVES}, got {objective!r}"
            )
        with self.lock:
            active = self.active_job()
            if active is not None:
                raise ActiveJobError(f"job {active.id} is {active.state}")
            if self.finalized is None:
                self.finalized = finalize_best_annotations(self.history)
            if not self.finalized:
                raise ConfigError("no annotations to retrain from")
            job = JobInfo(id=self._next_job_id, objective=objective)
            self._next_job_id += 1
            self.jobs[job.id] = job
            annotations = list(self.finalized)
        worker = threading.Thread(
            target=self._run_retrain, args=(job, objective, annotations), daemon=True
        )
        worker.start()
        return job

    def _run_retrain(
        self, job: JobInfo, objective: str, annotations: list[ErrorAnnotation]
    ) -> None:
        with self.lock:
            job.transition("running")
        try:
            slices = []
            degenerate = []
            for ann in annotations:
                part = partition_class(
                    self.ds, ann, "train", self.encoder.encode(ann.prompt)
                )
                sides = {
                    "above": len(part.above_indices),
                    "below": len(part.below_indices),
                }
                empty = [side for side, n in sides.items() if n == 0]
                if empty:
                    degenerate.append(
                        f"class {ann.class_id} ({ann.prompt!r}, tau={ann.threshold:.4g}): "
                        f"empty train slice {'/'.join(empty)}"
                    )
                slices.append(part)
            if degenerate:
                raise ConfigError("degenerate annotations: " + "; ".join(degenerate))

            config = TrainConfig(objective=objective, seed=self.retrain_seed)

            def on_epoch(done: int, total: int) -> None:
                with self.lock:
                    job.progress = done / total

            probe = train_probe(self.ds, config, slices=slices, progress=on_epoch)
            before, after = {}, {}
            groupings = ["annotation_slices"]
            if self.ds.group is not None:
                groupings.append("oracle_groups")
            for grouping in groupings:
                before[grouping] = self._metrics_report(self.baseline, grouping, annotations)
                after[grouping] = self._metrics_report(probe, grouping, annotations)
            with self.lock:
                self.retrain_result = RetrainResult(
                    objective=objective,
                    annotations=annotations,
                    probe=probe,
                    before=before,
                    after=after,
                )
                job.transition("done")
        except Exception as exc:  # published as job failure, not a crash
            logger.exception("retrain job %d failed", job.id)
            with self.lock:
                job.transition("failed", reason=str(exc))

    # -- metrics ---------------------------------------------------------

    def _metrics_report(
        self,
        probe: LinearProbe,
        grouping: str,
        annotations: list[ErrorAnnotation] | None,
    ) -> EvalReport:
        rows = self.val_rows
        _, predicted = predict(probe, self.ds.embeddings[rows])
        return report_from_predictions(
            self.ds,
            rows,
            predicted,
            grouping,
            "val",
            annotations=annotations,
            encoder=self.encoder,
        )

    def metrics(self, probe_tag: str, grouping: str) -> EvalReport:
        if probe_tag == "baseline":
            probe = self.baseline
        elif probe_tag == "retrained":
            if self.retrain_result is None:
                raise KeyError("no retrained probe yet")
            probe = self.retrain_result.probe
        else:
            raise ConfigError(f"probe must be baseline or retrained, got {probe_tag!r}")
        annotations = (
            self.retrain_result.annotations
            if self.retrain_result is not None
            else self.finalized
        )
        return self._metrics_report(probe, grouping, annotations)


class ActiveJobError(SlicelabError):
    """A retrain job is already queued or running."""


# -- snapshots -----------------------------------------------------------


def _probe_to_json(probe: LinearProbe | None) -> dict | None:
    if probe is None:
        return None
    return {
        "classes": probe.num_classes,
        "dim": probe.dim,
        "seed": probe.seed,
        "config_fingerprint": probe.config_fingerprint,
        "weights": base64.b64encode(probe.weights.astype("<f8").tobytes()).decode(),
        "bias": base64.b64encode(probe.bias.astype("<f8").tobytes()).decode(),
    }


def _probe_from_json(raw: dict | None) -> LinearProbe | None:
    if raw is None:
        return None
    classes, dim = int(raw["classes"]), int(raw["dim"])
    weights = np.frombuffer(base64.b64decode(raw["weights"]), dtype="<f8").reshape(
        classes, dim
    )
    bias = np.frombuffer(base64.b64decode(raw["bias"]), dtype="<f8")
    return LinearProbe(
        weights=weights,
        bias=bias,
        seed=int(raw["seed"]),
        config_fingerprint=str(raw["config_fingerprint"]),
    )


def _record_to_json(record: PromptRecord) -> dict:
    score = record.score
    out = {
        "index": record.index,
        "class_id": score.class_id,
        "prompt": score.prompt,
        "error_score": score.error_score,
        "best_threshold": score.best_threshold,
        "balanced_accuracy": score.balanced_accuracy,
        "similarities": score.similarities.tolist(),
        "correct_mask": score.correct_mask.astype(int).tolist(),
        "example_ids": score.example_ids.tolist(),
        "count_above": score.count_above,
        "count_below": score.count_below,
        "revision": None,
    }
    if record.revision is not None:
        out["revision"] = {
            "threshold": record.revision.threshold,
            "balanced_accuracy": record.revision.balanced_accuracy,
            "error_score": record.revision.error_score,
        }
    return out


def _record_from_json(raw: dict) -> PromptRecord:
    score = PromptScore(
        class_id=int(raw["class_id"]),
        prompt=str(raw["prompt"]),
        error_score=float(raw["error_score"]),
        best_threshold=float(raw["best_threshold"]),
        balanced_accuracy=float(raw["balanced_accuracy"]),
        similarities=np.asarray(raw["similarities"], dtype=np.float64),
        correct_mask=np.asarray(raw["correct_mask"], dtype=bool),
        example_ids=np.asarray(raw["example_ids"], dtype=np.int64),
        count_above=int(raw["count_above"]),
        count_below=int(raw["count_below"]),
    )
    revision = None
    if raw.get("revision") is not None:
        rev = raw["revision"]
        revision = ThresholdRevision(
            threshold=float(rev["threshold"]),
            balanced_accuracy=float(rev["balanced_accuracy"]),
            error_score=float(rev["error_score"]),
        )
    return PromptRecord(index=int(raw["index"]), score=score, revision=revision)


def snapshot_session(session: Session, path: str | Path) -> None:
    """Persist history, annotations, and probes; non-terminal jobs are
    recorded as failed("interrupted")."""
    with session.lock:
        jobs = {}
        for job_id, job in session.jobs.items():
            info = job.to_json()
            if info["state"] in ("queued", "running"):
                info["state"] = "failed"
                info["reason"] = "interrupted"
            jobs[str(job_id)] = info
        payload = {
            "version": SNAPSHOT_VERSION,
            "dataset_dir": session.dataset_dir,
            "encoder_spec": session.binding.spec(),
            "retrain_seed": session.retrain_seed,
            "history": [_record_to_json(r) for r in session.history],
            "finalized": (
                None
                if session.finalized is None
                else [a.to_json() for a in session.finalized]
            ),
            "jobs": jobs,
            "next_job_id": session._next_job_id,
            "baseline_probe": _probe_to_json(session.baseline),
            "retrained": (
                None
                if session.retrain_result is None
                else {
                    "objective": session.retrain_result.objective,
                    "annotations": [
                        a.to_json() for a in session.retrain_result.annotations
                    ],
                    "probe": _probe_to_json(session.retrain_result.probe),
                    "before": {
                        g: r.to_json() for g, r in session.retrain_result.before.items()
                    },
                    "after": {
                        g: r.to_json() for g, r in session.retrain_result.after.items()
                    },
                }
            ),
        }
    Path(path).write_text(
        json.dumps(payload, sort_keys=True), encoding="utf-8"
    )


def restore_session(path: str | Path, dataset_dir: str | Path | None = None) -> Session:
    """Rebuild a session from a snapshot. EvalReports inside the retrain
    result are recomputed from the restored probes on demand."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"corrupt snapshot: {exc}") from exc
    version = payload.get("version")
    if version != SNAPSHOT_VERSION:
        raise ConfigError(f"unknown snapshot version {version!r}")

    data_dir = dataset_dir or payload["dataset_dir"]
    if data_dir is None:
        raise ConfigError("snapshot has no dataset directory and none was given")
    ds = load_dataset(data_dir)
    binding = TextEncoderBinding.parse(payload["encoder_spec"])
    baseline = _probe_from_json(payload["baseline_probe"])
    session = Session(
        ds,
        binding,
        baseline,
        dataset_dir=str(data_dir),
        retrain_seed=int(payload.get("retrain_seed", 0)),
    )
    session.history = [_record_from_json(r) for r in payload["history"]]
    session._by_prompt = {
        (r.score.class_id, r.score.prompt): r.index for r in session.history
    }
    if payload["finalized"] is not None:
        session.finalized = [
            ErrorAnnotation.from_json(a) for a in payload["finalized"]
        ]
    for key, info in payload["jobs"].items():
        session.jobs[int(key)] = JobInfo(
            id=int(info["id"]),
            objective=str(info["objective"]),
            state=str(info["state"]),
            progress=float(info["progress"]),
            reason=info["reason"],
        )
    session._next_job_id = int(payload["next_job_id"])
    retrained = payload.get("retrained")
    if retrained is not None:
        annotations = [ErrorAnnotation.from_json(a) for a in retrained["annotations"]]
        probe = _probe_from_json(retrained["probe"])
        before = {
            g: session._metrics_report(baseline, g, annotations)
            for g in retrained["before"]
        }
        after = {
            g: session._metrics_report(probe, g, annotations)
            for g in retrained["after"]
        }
        session.retrain_result = RetrainResult(
            objective=str(retrained["objective"]),
            annotations=annotations,
            probe=probe,
            before=before,
            after=after,
        )
    return session


# -- HTTP layer ----------------------------------------------------------


class PromptIn(BaseModel):
    text: str


class ThresholdIn(BaseModel):
    tau: float


class RetrainIn(BaseModel):
    objective: str = "worst_slice"


def build_session(
    data_dir: str | Path,
    text_encoder: str,
    probe_path: str | Path | None = None,
    keywords_path: str | Path | None = None,
    baseline_config: TrainConfig | None = None,
) -> Session:
    """Load the dataset and train (or load) the baseline probe."""
    ds = load_dataset(data_dir)
    binding = TextEncoderBinding.parse(text_encoder)
    if probe_path is not None:
        baseline = load_probe(probe_path)
        if baseline.dim != ds.dim or baseline.num_classes != ds.num_classes:
            raise ConfigError("probe checkpoint does not match the dataset")
    else:
        config = baseline_config or TrainConfig(objective="erm_uniform", seed=0)
        logger.info("training baseline probe (%s)", config.objective)
        baseline = train_probe(ds, config)
    pools = load_keyword_pools(keywords_path) if keywords_path else None
    return Session(
        ds,
        binding,
        baseline,
        dataset_dir=str(data_dir),
        keyword_pools=pools,
    )


def build_app(session: Session, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="slicelab session service")
    app.state.session = session

    @app.get("/api/classes")
    def classes():
        return session.class_summary()

    @app.get("/api/classes/{class_id}/examples")
    def examples(class_id: int, correct: bool | None = None, limit: int = 20):
        _check_class(class_id)
        return {"examples": session.class_examples(class_id, correct, limit)}

    @app.get("/api/keywords/{class_id}")
    def keywords(class_id: int):
        _check_class(class_id)
        try:
            ranking = session.keyword_suggestions(class_id)
        except ConfigError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "suggestions": [
                {
                    "keyword": kw,
                    "error_score": ps.error_score,
                    "threshold": ps.best_threshold,
                }
                for kw, ps in ranking.top()
            ],
            "skipped": [{"keyword": kw, "reason": r} for kw, r in ranking.skipped],
        }

    @app.post("/api/classes/{class_id}/prompts")
    def submit_prompt(class_id: int, body: PromptIn):
        _check_class(class_id)
        text = body.text.strip()
        if not text:
            raise HTTPException(status_code=400, detail="empty prompt")
        try:
            record, created = session.submit_prompt(class_id, text)
        except UnscoreableClassError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except (EncodingError, RemoteEncoderError) as exc:
            raise HTTPException(status_code=502, detail=f"encoder failure: {exc}")
        out = record_json(record)
        out["created"] = created
        return out

    @app.post("/api/prompts/{prompt_id}/threshold")
    def set_threshold(prompt_id: int, body: ThresholdIn):
        if not np.isfinite(body.tau):
            raise HTTPException(status_code=400, detail="threshold must be finite")
        try:
            record = session.set_threshold(prompt_id, body.tau)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc.args[0]))
        return record_json(record)

    @app.get("/api/prompts")
    def prompts(class_id: int | None = None):
        with session.lock:
            records = [
                record_json(r)
                for r in session.history
                if class_id is None or r.score.class_id == class_id
            ]
        return {"prompts": records}

    @app.post("/api/annotations/finalize")
    def finalize():
        annotations = session.finalize()
        return {"annotations": [a.to_json() for a in annotations]}

    @app.post("/api/retrain")
    def retrain(body: RetrainIn):
        try:
            job = session.start_retrain(body.objective)
        except ActiveJobError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ConfigError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return job.to_json()

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: int):
        job = session.jobs.get(job_id)
        if job is None:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id}")
        with session.lock:
            return job.to_json()

    @app.get("/api/metrics")
    def metrics(probe: str = "baseline", grouping: str = "oracle_groups"):
        if grouping == "oracle":
            grouping = "oracle_groups"
        try:
            report = session.metrics(probe, grouping)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc.args[0]))
        except ConfigError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        return report.to_json()

    def _check_class(class_id: int) -> None:
        if not 0 <= class_id < session.ds.num_classes:
            raise HTTPException(
                status_code=404, detail=f"unknown class {class_id}"
            )

    if session.dataset_dir is not None:
        app.mount("/data", StaticFiles(directory=session.dataset_dir), name="data")
    if ui_dir is not None:
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
