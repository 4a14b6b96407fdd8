"""Command-line entry point.

Examples::

    replay-forge synth --episodes 3 --samples 20 --dims 32 --seed 7 --out corpus
    replay-forge run-stream --config corpus/stream.json
    replay-forge score --manifest corpus/episode_00/manifest.json --out scores.json
    replay-forge buffer-update --scores scores.json --beta 10 --out state.json
    replay-forge metrics --results results.json --out metrics.json

Exit codes: 0 success, 2 invalid input, 3 broken runtime invariant.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .buffer import (
    GlobalBuffer,
    apply_update,
    buffer_from_dict,
    buffer_to_dict,
    check_invariants,
    select_partition,
)
from .dctg import dctg_forward, load_params
from .errors import InvalidDocument, InvariantViolation, ReplayForgeError
from .formats import check_manifest, load_manifest, read_vol1_file, validate_manifest, write_vol1_file
from .metrics import ResultMatrix, metrics_report
from .modality import ChannelLayout, RmdConfig, assemble_input, inflate_weights, register_modalities, rmd_mask
from .schemas import dump
from .scoring import SampleScores, ScoringConfig
from .stream import (
    eval_task,
    read_json,
    resolve_threads,
    run_stream,
    score_manifest,
    scores_document,
    summary_text,
)
from .synth import generate


def _scoring_config(path) -> ScoringConfig:
    if not path:
        return ScoringConfig()
    doc = read_json(path)
    return ScoringConfig.from_dict(doc.get("scoring", doc))


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_score(args) -> int:
    manifest = load_manifest(args.manifest)
    problems = validate_manifest(manifest)
    if problems:
        for p in problems:
            print(f"invalid manifest: {p}", file=sys.stderr)
        return 2
    config = _scoring_config(args.config)
    scores = score_manifest(manifest, config, resolve_threads(args.threads))
    _emit(dump(scores_document(manifest, scores, config), "scores"), args.out)
    excluded = sum(1 for s in scores if s.excluded)
    print(f"scored {len(scores) - excluded} samples, excluded {excluded}", file=sys.stderr)
    return 0


def cmd_buffer_update(args) -> int:
    doc = read_json(args.scores, "scores")
    if args.state and Path(args.state).exists():
        buffer = buffer_from_dict(read_json(args.state, "buffer_state"))
        if args.beta and args.beta != buffer.beta:
            raise InvalidDocument(f"--beta {args.beta} disagrees with state beta {buffer.beta}")
    else:
        if not args.beta:
            raise InvalidDocument("--beta is required when starting a new buffer")
        buffer = GlobalBuffer(args.beta)
    episode = args.episode
    if episode is None:
        episode = buffer.partitions[-1].episode + 1 if buffer.partitions else 0
    scores = [SampleScores.from_dict(r) for r in doc["scores"]]
    sources = {r["sample_id"]: r.get("sources", {}) for r in doc["scores"]}
    partition = select_partition(scores, args.n or buffer.beta, episode, sources, name=doc["episode"])
    update = apply_update(buffer, partition)
    problems = check_invariants(update, buffer)
    if problems:
        raise InvariantViolation("; ".join(problems))
    _emit(dump(buffer_to_dict(update.buffer), "buffer_state"), args.out)
    n_rep = sum(1 for e in partition.entries if e.category == "representative")
    print(
        f"episode {episode}: selected {len(partition)} ({n_rep} rep / {len(partition) - n_rep} diff); "
        f"quotas {update.quotas}; sizes {update.buffer.sizes}; evicted {len(update.evicted)}; "
        f"total {update.buffer.total}/{update.buffer.beta}",
        file=sys.stderr,
    )
    return 0


def cmd_metrics(args) -> int:
    matrix = ResultMatrix.from_json(read_json(args.results, "results"))
    _emit(dump(metrics_report(matrix), "metrics"), args.out)
    return 0


def cmd_eval(args) -> int:
    if len(args.pred_dir) != len(args.gt_dir):
        raise InvalidDocument("give one --gt-dir per --pred-dir")
    row = [eval_task(p, g, args.threshold) for p, g in zip(args.pred_dir, args.gt_dir)]
    if args.results:
        path = Path(args.results)
        matrix = ResultMatrix.from_json(read_json(path, "results")) if path.exists() else ResultMatrix(rows=[])
        matrix.rows.append(row)
        if matrix.tasks is not None and len(matrix.tasks) < len(row):
            matrix.tasks += [f"task{i}" for i in range(len(matrix.tasks), len(row))]
        dump(matrix.to_json(), "results", path)
    _emit(dump({"version": "1.0", "row": row}, "eval_row"), args.out)
    return 0


def cmd_inflate(args) -> int:
    w, _ = read_vol1_file(args.weights)
    out = inflate_weights(w, args.k_max)
    write_vol1_file(args.out, out)
    print(f"inflated input channels {w.shape[1]} -> {out.shape[1]}", file=sys.stderr)
    return 0


def cmd_assemble(args) -> int:
    manifest = check_manifest(load_manifest(args.manifest))
    if args.layout and Path(args.layout).exists():
        layout = ChannelLayout.from_json(read_json(args.layout, "layout"))
    else:
        layout = register_modalities(ChannelLayout(), manifest.modalities)
    sample = next((s for s in manifest.samples if s.sample_id == args.sample), None)
    if sample is None:
        raise InvalidDocument(f"sample {args.sample!r} not in manifest")
    vols = {k: read_vol1_file(manifest.resolve(v))[0] for k, v in sample.modalities.items()}
    write_vol1_file(args.out, assemble_input(vols, layout))
    return 0


def cmd_rmd(args) -> int:
    mods = [m for m in args.modalities.split(",") if m.strip()]
    kept = rmd_mask(mods, args.seed, args.sample_id, args.epoch, RmdConfig(law=args.law))
    print(",".join(kept))
    return 0


def cmd_dctg(args) -> int:
    features, _ = read_vol1_file(args.features)
    text, _ = read_vol1_file(args.text)
    out = dctg_forward(features, text, load_params(args.params))
    write_vol1_file(args.out, out.astype(np.float32))
    return 0


def cmd_dump(args) -> int:
    arr, header = read_vol1_file(args.file)
    axis = args.axis if args.axis >= 0 else arr.ndim + args.axis
    slabs = []
    for i in range(arr.shape[axis]):
        s = np.take(arr, i, axis=axis)
        slabs.append({
            "index": i,
            "nonzero": int(np.count_nonzero(s)),
            "min": float(s.min()),
            "max": float(s.max()),
        })
    doc = {"dtype": str(header.dtype.name), "dims": list(header.dims), "axis": axis, "slabs": slabs}
    _emit(dump(doc, "dump"), args.out)
    return 0


def cmd_synth(args) -> int:
    dims = tuple(args.dims) * 3 if len(args.dims) == 1 else tuple(args.dims)
    if len(dims) != 3 or min(dims) < 8:
        print(f"error: --dims must give 1 or 3 sizes, each >= 8 (got {args.dims})", file=sys.stderr)
        return 2
    path = generate(args.out, args.episodes, args.samples, dims, args.seed, args.eval_samples, args.beta)
    print(path)
    return 0


def cmd_run_stream(args) -> int:
    report = run_stream(args.config, args.out, args.threads)
    sys.stdout.write(summary_text(report))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="replay-forge", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score", help="score one episode manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="JSON with tau/alpha/gamma/band_inward/band_outward/connectivity")
    p.add_argument("--out")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("buffer-update", help="select a partition and merge it into the buffer")
    p.add_argument("--scores", required=True)
    p.add_argument("--state", help="existing buffer state (omit to start empty)")
    p.add_argument("--beta", type=int)
    p.add_argument("--n", type=int, help="partition candidates (default beta)")
    p.add_argument("--episode", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_buffer_update)

    p = sub.add_parser("metrics", help="AVG / ILM / BWT from a result matrix")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("eval", help="one result row: mean DSC per task")
    p.add_argument("--pred-dir", action="append", required=True)
    p.add_argument("--gt-dir", action="append", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--results", help="append the row to this results JSON")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inflate", help="grow conv input channels to k_max")
    p.add_argument("--weights", required=True)
    p.add_argument("--k-max", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inflate)

    p = sub.add_parser("assemble", help="build the k_max-channel input tensor of a sample")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sample", required=True)
    p.add_argument("--layout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_assemble)

    p = sub.add_parser("rmd", help="random modality drop for one sample/epoch")
    p.add_argument("--modalities", required=True, help="comma-separated names")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sample-id", required=True)
    p.add_argument("--epoch", type=int, required=True)
    p.add_argument("--law", choices=("uniform-size", "bernoulli"), default="uniform-size")
    p.set_defaults(func=cmd_rmd)

    p = sub.add_parser("dctg", help="text-guided cross-attention forward pass")
    p.add_argument("--features", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--params", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dctg)

    p = sub.add_parser("dump", help="describe a VOL1 file slab by slab")
    p.add_argument("--file", required=True)
    p.add_argument("--axis", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_dump)

    p = sub.add_parser("synth", help="generate a synthetic episode corpus")
    p.add_argument("--episodes", type=int, default=3)
    p.add_argument("--samples", type=int, default=20)
    p.add_argument("--dims", type=int, nargs="+", default=[32])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--eval-samples", type=int, default=0)
    p.add_argument("--beta", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("run-stream", help="run a whole episode stream")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--threads", type=int)
    p.set_defaults(func=cmd_run_stream)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ReplayForgeError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
