"""File-level pipeline stages and the end-to-end runner.

Every stage reads its predecessor's files and writes its own, so the
subcommands can be chained by hand; :func:`run_pipeline` calls the very same
functions in order, which makes chained and monolithic execution byte
identical. All per-video iteration happens in sorted video-id order and all
randomness is drawn from named substreams of the config seed, so reruns with
the same inputs produce identical artifact trees. The manifest deliberately
contains no timings or timestamps for the same reason; timings go to the log.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    FrameFeatures,
    PipelineConfig,
    load_annotations,
    load_features,
    save_features,
)
from .data import derive_highlight_labels
from .errors import DataError, SalisegError
from .metrics import evaluate_corpus, save_report
from .prompts import assemble_input, init_prompt_map, project_saliency, save_decoder_input
from .refine import RefineConfig, refine_features
from .saliency import (
    SaliencyExample,
    TrainResult,
    TrainState,
    load_head,
    saliency_forward,
    saliency_prior,
    save_head,
    train_saliency,
)
from .segments import (
    baseline_kmeans,
    baseline_uniform,
    decode_segments,
    load_segments,
    score_segments,
    segments_to_doc,
    select_topk,
)
from .store import load_datastore, retrieval_vectors
from .transport import SolverOptions, build_problem, init_anchors, solve_fugw

logger = logging.getLogger(__name__)


def _sorted_feature_paths(features_dir: str | Path) -> list[Path]:
    paths = sorted(Path(features_dir).glob("*.sfeat"))
    if not paths:
        raise DataError(f"no .sfeat files in {features_dir}")
    return paths


def _map_videos(fn, items, jobs: int, fail_fast: bool = False):
    """Apply ``fn`` per video; an error skips the video unless fail_fast."""

    def safe(item):
        try:
            return fn(item)
        except SalisegError as exc:
            if fail_fast:
                raise
            logger.error("%s: stage failed, video skipped: %s", item, exc)
            return None

    if jobs <= 1:
        results = [safe(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(safe, items))
    return [r for r in results if r is not None]


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------

def stage_refine(
    features_dir: str | Path,
    out_dir: str | Path,
    cfg: PipelineConfig,
    jobs: int = 1,
    fail_fast: bool = False,
) -> list[Path]:
    """Refine encoded features; spatial rows pass through untouched."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    refine_cfg = RefineConfig(windows=cfg.windows)

    def work(path: Path) -> Path:
        f = load_features(path)
        refined = refine_features(f.encoded.astype(np.float64), refine_cfg, f.mask())
        out_path = out / path.name
        save_features(
            FrameFeatures(
                video_id=f.video_id,
                spatial=f.spatial,
                encoded=refined.astype(np.float32),
                valid_len=f.valid_len,
            ),
            out_path,
        )
        return out_path

    return _map_videos(work, _sorted_feature_paths(features_dir), jobs, fail_fast)


def stage_score_saliency(
    refined_dir: str | Path,
    head_path: str | Path,
    out_path: str | Path,
    jobs: int = 1,
    fail_fast: bool = False,
) -> Path:
    """Score refined features; write scores and priors as JSON Lines."""
    head = load_head(head_path)

    def work(path: Path) -> str:
        f = load_features(path)
        if f.dim != head.dim:
            raise DataError(f"{f.video_id}: feature dim {f.dim} != head dim {head.dim}")
        mask = f.mask()
        scores = saliency_forward(head, f.encoded.astype(np.float64), mask).scores
        p_s, p_hat = saliency_prior(scores, mask)
        return json.dumps(
            {
                "video_id": f.video_id,
                "valid_len": f.valid_len,
                "scores": scores.tolist(),
                "prior": p_s.tolist(),
                "prior_norm": p_hat.tolist(),
            },
            sort_keys=True,
        )

    lines = _map_videos(work, _sorted_feature_paths(refined_dir), jobs, fail_fast)
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(out_path)


def load_saliency(path: str | Path) -> dict[str, dict]:
    docs = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            doc = json.loads(line)
            docs[doc["video_id"]] = doc
    return docs


def stage_segment(
    features_dir: str | Path,
    saliency_path: str | Path,
    cfg: PipelineConfig,
    out_path: str | Path,
    baseline: str = "none",
    dump_plan_dir: str | Path | None = None,
    solver: SolverOptions = SolverOptions(),
    jobs: int = 1,
    fail_fast: bool = False,
) -> Path:
    """Segment each video from its transport plan, or a baseline strategy."""
    saliency = load_saliency(saliency_path)
    if dump_plan_dir is not None:
        Path(dump_plan_dir).mkdir(parents=True, exist_ok=True)

    def work(path: Path) -> str:
        f = load_features(path)
        if f.video_id not in saliency:
            raise DataError(f"{f.video_id}: missing saliency record")
        n_valid = f.valid_len
        xs = f.spatial[:n_valid].astype(np.float64)
        p_s = np.asarray(saliency[f.video_id]["prior"], dtype=np.float64)[:n_valid]
        if baseline == "uniform":
            segs = baseline_uniform(n_valid, cfg.top_k)
        elif baseline == "kmeans":
            segs = select_topk(baseline_kmeans(xs, cfg.K, cfg.seed, f.video_id), cfg.top_k)
        elif baseline == "none":
            anchors = init_anchors(xs, cfg.K, cfg.seed, f.video_id)
            prob = build_problem(xs, anchors, p_s, cfg.alpha, cfg.gamma, cfg.epsilon, cfg.mu)
            plan = solve_fugw(prob, solver)
            segs = select_topk(score_segments(decode_segments(plan), plan), cfg.top_k)
            if dump_plan_dir is not None:
                doc = {"F_v": n_valid, "K": cfg.K, "T": plan.T.flatten().tolist()}
                (Path(dump_plan_dir) / f"{f.video_id}.json").write_text(
                    json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8"
                )
        else:
            raise DataError(f"unknown baseline {baseline!r}")
        return json.dumps(segments_to_doc(f.video_id, segs), sort_keys=True)

    lines = _map_videos(work, _sorted_feature_paths(features_dir), jobs, fail_fast)
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(out_path)


def stage_retrieve(
    features_dir: str | Path,
    saliency_path: str | Path,
    segments_path: str | Path,
    store_path: str | Path,
    cfg: PipelineConfig,
    out_path: str | Path,
    jobs: int = 1,
    fail_fast: bool = False,
) -> Path:
    """Retrieve top-p captions per selected segment; write vectors + neighbors."""
    saliency = load_saliency(saliency_path)
    segments = load_segments(segments_path)
    store = load_datastore(store_path)

    def work(path: Path) -> str:
        f = load_features(path)
        if f.video_id not in segments:
            raise DataError(f"{f.video_id}: missing segments record")
        n_valid = f.valid_len
        xs = f.spatial[:n_valid].astype(np.float64)
        p_s = np.asarray(saliency[f.video_id]["prior"], dtype=np.float64)[:n_valid]
        result = retrieval_vectors(segments[f.video_id], xs, p_s, store, cfg.top_p)
        return json.dumps(
            {
                "video_id": f.video_id,
                "segments": [
                    {
                        "index": int(idx),
                        "neighbors": [[eid, sim] for eid, sim in hits],
                    }
                    for idx, hits in zip(segments[f.video_id].selected, result.neighbors)
                ],
                "vectors": [row.tolist() for row in result.vectors],
            },
            sort_keys=True,
        )

    lines = _map_videos(work, _sorted_feature_paths(features_dir), jobs, fail_fast)
    Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return Path(out_path)


def load_retrieval(path: str | Path) -> dict[str, dict]:
    docs = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            doc = json.loads(line)
            docs[doc["video_id"]] = doc
    return docs


def stage_assemble(
    refined_dir: str | Path,
    saliency_path: str | Path,
    retrieval_path: str | Path,
    cfg: PipelineConfig,
    out_dir: str | Path,
    text_dir: str | Path | None = None,
    jobs: int = 1,
    fail_fast: bool = False,
) -> list[Path]:
    """Build decoder-input sequences [frames; prompts; retrieval; text]."""
    saliency = load_saliency(saliency_path)
    retrieval = load_retrieval(retrieval_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def work(path: Path) -> Path:
        f = load_features(path)
        prompt_map = init_prompt_map(f.dim, cfg.seed)
        scores = np.asarray(saliency[f.video_id]["scores"], dtype=np.float64)
        prompts = project_saliency(scores, prompt_map)
        vectors = np.asarray(retrieval[f.video_id]["vectors"], dtype=np.float64)
        if vectors.size == 0:
            vectors = np.zeros((0, f.dim))
        if text_dir is not None:
            t = load_features(Path(text_dir) / path.name)
            text = t.encoded[: t.valid_len].astype(np.float64)
        else:
            text = np.zeros((0, f.dim))
        d_in = assemble_input(f.encoded.astype(np.float64), prompts, vectors, text)
        out_path = out / f"{f.video_id}.stin"
        save_decoder_input(d_in, out_path)
        return out_path

    return _map_videos(work, _sorted_feature_paths(refined_dir), jobs, fail_fast)


def stage_eval(
    segments_path: str | Path,
    annotations_path: str | Path,
    out_json: str | Path,
    out_table: str | Path | None = None,
    out_csv: str | Path | None = None,
):
    """Evaluate selected segments against annotated events."""
    segments = load_segments(segments_path)
    anns = load_annotations(annotations_path)
    per_video = {}
    for ann in anns:
        gt = [(s, e) for s, e in ann.events]
        if ann.video_id in segments:
            pred = [(s.start, s.end) for s in segments[ann.video_id].selected_segments()]
        else:
            logger.warning("%s: no predictions", ann.video_id)
            pred = []
        per_video[ann.video_id] = (pred, gt)
    corpus, reports = evaluate_corpus(per_video)
    save_report(corpus, reports, out_json, out_table, out_csv)
    return corpus


def train_saliency_from_files(
    features_dir: str | Path,
    annotations_path: str | Path,
    cfg: PipelineConfig,
    out_head: str | Path,
    epochs: int = 20,
    learning_rate: float = 1e-3,
    seed: int | None = None,
    jobs: int = 1,
) -> TrainResult:
    """Refine raw features, derive labels, train the head, save the checkpoint."""
    anns = {a.video_id: a for a in load_annotations(annotations_path)}
    refine_cfg = RefineConfig(windows=cfg.windows)

    def build_example(path: Path) -> SaliencyExample | None:
        f = load_features(path)
        if f.video_id not in anns:
            logger.warning("%s: no annotation, skipped", f.video_id)
            return None
        mask = f.mask()
        refined = refine_features(f.encoded.astype(np.float64), refine_cfg, mask)
        labels = derive_highlight_labels(anns[f.video_id], f.n_frames, f.valid_len)
        return SaliencyExample(
            video_id=f.video_id, features=refined, mask=mask, labels=labels.labels
        )

    examples = [
        ex for ex in _map_videos(build_example, _sorted_feature_paths(features_dir), jobs)
        if ex is not None
    ]
    state = TrainState(learning_rate=learning_rate)
    result = train_saliency(examples, cfg, state=state, epochs=epochs, seed=seed)
    save_head(result.head, out_head)
    return result


# ---------------------------------------------------------------------------
# End-to-end runner
# ---------------------------------------------------------------------------

def _hash_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(
    cfg: PipelineConfig,
    features_dir: str | Path,
    annotations_path: str | Path,
    store_path: str | Path,
    head_path: str | Path,
    out_dir: str | Path,
    baseline: str = "none",
    dump_plan: bool = False,
    text_dir: str | Path | None = None,
    solver: SolverOptions = SolverOptions(),
    jobs: int = 1,
    fail_fast: bool = False,
):
    """Refine, score, segment, retrieve, assemble, evaluate; write a manifest."""
    t0 = time.monotonic()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    stage_refine(features_dir, out / "refined", cfg, jobs, fail_fast)
    stage_score_saliency(out / "refined", head_path, out / "saliency.jsonl", jobs, fail_fast)
    stage_segment(
        features_dir,
        out / "saliency.jsonl",
        cfg,
        out / "segments.jsonl",
        baseline=baseline,
        dump_plan_dir=(out / "plans") if dump_plan else None,
        solver=solver,
        jobs=jobs,
        fail_fast=fail_fast,
    )
    stage_retrieve(
        features_dir,
        out / "saliency.jsonl",
        out / "segments.jsonl",
        store_path,
        cfg,
        out / "retrieval.jsonl",
        jobs,
        fail_fast,
    )
    stage_assemble(
        out / "refined",
        out / "saliency.jsonl",
        out / "retrieval.jsonl",
        cfg,
        out / "tin",
        text_dir,
        jobs,
        fail_fast,
    )
    corpus = stage_eval(
        out / "segments.jsonl", annotations_path, out / "report.json", out / "report.txt"
    )

    files = {
        str(p.relative_to(out)): _hash_file(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    config_doc = json.loads(cfg.to_json())
    manifest = {
        "config": config_doc,
        "seed": cfg.seed,
        "baseline": baseline,
        "versions": {"saliseg": __version__, "numpy": np.__version__},
        "files": files,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    logger.info("pipeline finished in %.2fs", time.monotonic() - t0)
    return corpus
