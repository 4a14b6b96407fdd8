"""End-to-end episode stream: validate, score, select, update, plan RMD, evaluate."""

from __future__ import annotations

import json
import logging
import os
from pathlib import Path

import jsonschema

from .buffer import (
    GlobalBuffer,
    apply_update,
    buffer_to_dict,
    check_invariants,
    select_partition,
)
from .dctg import build_prompt
from .errors import InvalidDocument, InvariantViolation, LengthMismatch, MissingField
from .formats import check_manifest, load_manifest, load_mask, load_prob, read_vol1_file
from .metrics import ResultMatrix, episode_dsc, metrics_report
from .modality import LayoutTracker, RmdConfig, rmd_mask
from .schemas import config_hash, dump, validate
from .scoring import ScoringConfig, score_dataset

log = logging.getLogger(__name__)

REPORT_VERSION = "1.0"
THREADS_ENV = "REPLAY_FORGE_THREADS"


def resolve_threads(flag: int | None, config_value: int | None = None) -> int:
    if flag:
        return flag
    if config_value:
        return config_value
    env = os.environ.get(THREADS_ENV, "").strip()
    if not env:
        return 1
    if not env.isdigit() or int(env) < 1:
        raise InvalidDocument(f"{THREADS_ENV} must be a positive integer, got {env!r}")
    return int(env)


def read_json(path, schema: str | None = None) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidDocument(f"{path}: not valid JSON ({exc})") from exc
    if schema:
        try:
            validate(doc, schema)
        except jsonschema.ValidationError as exc:
            raise InvalidDocument(f"{path}: {exc.message}") from exc
    return doc


def eval_task(pred_dir, gt_dir, threshold: float = 0.5) -> float:
    """Mean DSC of one task: files are paired by name across the two directories."""
    preds = sorted(p for p in Path(pred_dir).iterdir() if p.suffix == ".vol1")
    gts = sorted(p for p in Path(gt_dir).iterdir() if p.suffix == ".vol1")
    if len(preds) != len(gts):
        raise LengthMismatch(f"{pred_dir}: {len(preds)} predictions vs {len(gts)} ground truths in {gt_dir}")
    if [p.name for p in preds] != [g.name for g in gts]:
        raise LengthMismatch(f"prediction and ground-truth file names differ in {pred_dir} / {gt_dir}")
    return episode_dsc(
        [read_vol1_file(p)[0] for p in preds],
        [load_mask(g) for g in gts],
        threshold,
    )


def score_manifest(manifest, config: ScoringConfig, threads: int = 1):
    items = []
    for s in manifest.samples:
        if s.prob is None:
            raise MissingField(f"{s.sample_id}: scoring needs a prob volume")
        items.append((s.sample_id, _loader(load_prob, manifest.resolve(s.prob)),
                      _loader(load_mask, manifest.resolve(s.gt))))
    return score_dataset(items, config, threads)


def _loader(fn, path):
    return lambda: fn(path)


def scores_document(manifest, scores, config: ScoringConfig) -> dict:
    by_id = {s.sample_id: s for s in manifest.samples}
    records = []
    for sc in scores:
        rec = sc.to_dict()
        rec["sources"] = manifest.sources(by_id[sc.sample_id])
        records.append(rec)
    return {"version": "1.0", "episode": manifest.episode, "config": config.to_dict(), "scores": records}


def _invariant_log(report, previous: GlobalBuffer) -> list[str]:
    problems = check_invariants(report, previous)
    if problems:
        raise InvariantViolation("; ".join(problems))
    buf = report.buffer
    return [
        f"capacity ok: {buf.total} <= {buf.beta}",
        f"parity ok: sizes {buf.sizes} vs base quotas {report.base_quotas}",
        "split ok: representative/difficult within 1 in every partition",
        f"eviction order ok: {len(report.evicted)} evicted lowest-first",
    ]


def run_stream(config_path, out_dir=None, threads: int | None = None) -> dict:
    config_path = Path(config_path)
    cfg = read_json(config_path, "stream_config")
    base = config_path.parent
    out = Path(out_dir) if out_dir else base / cfg.get("output_dir", "run")
    out.mkdir(parents=True, exist_ok=True)

    seed = int(cfg.get("seed", 0))
    beta = int(cfg["beta"])
    n = cfg.get("n") or beta
    scoring = ScoringConfig.from_dict(cfg.get("scoring", {}))
    rmd_epochs = int(cfg.get("rmd_epochs", 1))
    rmd_cfg = RmdConfig(law=cfg.get("rmd_law", "uniform-size"))
    n_threads = resolve_threads(threads, cfg.get("threads"))
    evals = cfg.get("eval") or []

    hashed = {k: v for k, v in cfg.items() if k not in ("output_dir", "threads")}
    tracker = LayoutTracker()
    buffer = GlobalBuffer(beta)
    rows: list[list[float]] = []
    episodes = []

    for t, rel in enumerate(cfg["episodes"]):
        manifest = check_manifest(load_manifest(base / rel))
        k_before = tracker.layout.k_max
        event = tracker.register(t, manifest.modalities)
        if event:
            log.info("episode %d: input layer inflated %d -> %d (%s)",
                     t, event["old_k"], event["new_k"], ", ".join(event["added"]))

        scores = score_manifest(manifest, scoring, n_threads)
        dump(scores_document(manifest, scores, scoring), "scores", out / f"scores_{t:02d}.json")

        sources = {s.sample_id: manifest.sources(s) for s in manifest.samples}
        partition = select_partition(scores, n, t, sources, name=manifest.episode)
        previous = buffer
        update = apply_update(buffer, partition)
        invariants = _invariant_log(update, previous)
        buffer = update.buffer

        plan = []
        for entry in buffer.entries():
            if not entry.modalities:
                continue
            key = f"{entry.episode}/{entry.sample_id}"
            for e in range(rmd_epochs):
                epoch = (t + 1) * rmd_epochs + e
                kept = rmd_mask(entry.modalities.keys(), seed, key, epoch, rmd_cfg)
                plan.append({"episode": entry.episode, "sample_id": entry.sample_id, "epoch": epoch, "kept": kept})

        dsc_row = None
        if t < len(evals) and evals[t]:
            tasks = evals[t]
            if len(tasks) != t + 1:
                raise LengthMismatch(f"eval row {t} lists {len(tasks)} tasks, expected {t + 1}")
            dsc_row = [eval_task(base / task["pred_dir"], base / task["gt_dir"]) for task in tasks]
            rows.append(dsc_row)

        episodes.append({
            "index": t,
            "name": manifest.episode,
            "prompt": build_prompt(manifest.lesion_type, manifest.modalities),
            "k_before": k_before,
            "k_after": tracker.layout.k_max,
            "inflation": event,
            "scored": sum(1 for s in scores if s.valid),
            "excluded": [{"sample_id": s.sample_id, "reason": s.exclusion_reason} for s in scores if s.excluded],
            "partition": {
                "size": len(partition),
                "representative": [e.sample_id for e in partition.entries if e.category == "representative"],
                "difficult": [e.sample_id for e in partition.entries if e.category == "difficult"],
            },
            "base_quotas": update.base_quotas,
            "quotas": update.quotas,
            "buffer_sizes": buffer.sizes,
            "evicted": [{"episode": e.episode, "sample_id": e.sample_id, "category": e.category}
                        for e in update.evicted],
            "rmd_plan": plan,
            "invariants": invariants,
            "dsc_row": dsc_row,
        })

    metrics = None
    if rows and len(rows) == len(cfg["episodes"]):
        matrix = ResultMatrix(rows=rows, tasks=[ep["name"] for ep in episodes])
        dump(matrix.to_json(), "results", out / "results.json")
        metrics = metrics_report(matrix)

    report = {
        "version": REPORT_VERSION,
        "config_hash": config_hash(hashed),
        "seed": seed,
        "beta": beta,
        "episodes": episodes,
        "inflation_events": tracker.events,
        "layout": tracker.layout.to_json(),
        "final_buffer_sizes": buffer.sizes,
        "metrics": metrics,
    }
    dump(buffer_to_dict(buffer), "buffer_state", out / "buffer_state.json")
    dump(tracker.layout.to_json(), "layout", out / "layout.json")
    dump(report, "stream_report", out / "report.json")
    (out / "summary.txt").write_text(summary_text(report))
    return report


def summary_text(report: dict) -> str:
    lines = [f"stream: {len(report['episodes'])} episodes, beta={report['beta']}, seed={report['seed']}",
             f"config hash: {report['config_hash']}"]
    for ep in report["episodes"]:
        lines.append(
            f"[{ep['index']}] {ep['name']}: scored {ep['scored']}, excluded {len(ep['excluded'])}, "
            f"K {ep['k_before']}->{ep['k_after']}, partition {ep['partition']['size']}, "
            f"buffer {ep['buffer_sizes']}, evicted {len(ep['evicted'])}"
        )
    for ev in report["inflation_events"]:
        lines.append(f"inflation at episode {ev['episode']}: K {ev['old_k']} -> {ev['new_k']} (+{', '.join(ev['added'])})")
    m = report.get("metrics")
    if m:
        bwt = "n/a" if m["bwt"] is None else f"{m['bwt']:.4f}"
        lines.append(f"metrics: AVG {m['avg']:.4f}  ILM {m['ilm']:.4f}  BWT {bwt}")
    return "\n".join(lines) + "\n"
