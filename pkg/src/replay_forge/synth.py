"""Seeded synthetic lesion corpus for desk-scale runs.

Each sample gets one to three random ellipsoidal lesions as ground truth, a
probability map obtained by blurring the mask with iterated 6-neighbour box
averaging plus uniform noise, and one intensity volume per modality. Modality
sets change from episode to episode so a stream exercises channel inflation.
Optional held-out test sets come with simulated predictions whose quality
decays with the number of sessions since the task was learned.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .formats import MANIFEST_VERSION, write_vol1_file
from .prng import SplitMix64, derive_seed
from .schemas import dump

MODALITY_SCHEDULE = [
    ["T1", "T2", "FLAIR"],
    ["T1", "FLAIR"],
    ["T2", "FLAIR", "DWI"],
    ["T1", "T1c", "T2", "FLAIR"],
    ["FLAIR"],
    ["PD", "T2"],
]
LESION_TYPES = ["brain tumor", "stroke", "multiple sclerosis", "white matter hyperintensity"]

_CROSS = ndimage.generate_binary_structure(3, 1).astype(np.float64) / 7.0


def ellipsoid_lesion(rng: SplitMix64, dims: tuple[int, int, int]) -> np.ndarray:
    grid = np.indices(dims, dtype=np.float64)
    mask = np.zeros(dims, dtype=bool)
    for _ in range(1 + rng.below(3)):
        radii = [1.0 + rng.random() * max(1.0, n / 6.0) for n in dims]
        center = [int(r) + rng.below(max(1, n - 2 * int(r) - 1)) for r, n in zip(radii, dims)]
        center = [min(c, n - 1) for c, n in zip(center, dims)]
        dist = sum(((g - c) / r) ** 2 for g, c, r in zip(grid, center, radii))
        mask |= dist <= 1.0
        mask[tuple(center)] = True
    return mask


def blurred_probability(rng: SplitMix64, gt: np.ndarray) -> np.ndarray:
    p = gt.astype(np.float64)
    for _ in range(1 + rng.below(4)):
        p = ndimage.convolve(p, _CROSS, mode="nearest")
    amplitude = 0.05 + 0.3 * rng.random()
    noise = (rng.uniform(p.size) * 2.0 - 1.0) * amplitude
    return np.clip(p + noise.reshape(p.shape), 0.0, 1.0)


def modality_image(rng: SplitMix64, gt: np.ndarray) -> np.ndarray:
    contrast = 0.5 + rng.random()
    base = 0.2 + 0.1 * rng.random()
    noise = rng.uniform(gt.size).reshape(gt.shape) * 0.1
    return base + contrast * gt + noise


def degraded_prediction(rng: SplitMix64, gt: np.ndarray, drop: float) -> np.ndarray:
    u = rng.uniform(gt.size).reshape(gt.shape)
    v = rng.uniform(gt.size).reshape(gt.shape)
    fp = ndimage.binary_dilation(gt, structure=ndimage.generate_binary_structure(3, 1)) & ~gt
    return (gt & (u >= drop)) | (fp & (v < drop / 2))


def generate(
    out: str | Path,
    episodes: int = 3,
    samples: int = 20,
    dims: tuple[int, int, int] = (32, 32, 32),
    seed: int = 0,
    eval_samples: int = 0,
    beta: int = 10,
) -> Path:
    """Write the corpus under ``out`` and return the path of ``stream.json``."""
    if min(dims) < 8:
        raise ValueError("synthetic volumes need every dim >= 8")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    manifests = []
    test_sets = []
    for e in range(episodes):
        mods = MODALITY_SCHEDULE[e % len(MODALITY_SCHEDULE)]
        name = f"episode_{e:02d}"
        ep_dir = out / name
        (ep_dir / "samples").mkdir(parents=True, exist_ok=True)
        records = []
        for s in range(samples):
            sid = f"e{e:02d}_s{s:03d}"
            rng = SplitMix64(derive_seed(seed, "synth", e, s))
            gt = ellipsoid_lesion(rng, dims)
            prob = blurred_probability(rng, gt)
            rec = {
                "sample_id": sid,
                "gt": f"samples/{sid}_gt.vol1",
                "prob": f"samples/{sid}_prob.vol1",
                "modalities": {},
            }
            write_vol1_file(ep_dir / rec["gt"], gt.astype(np.uint8))
            write_vol1_file(ep_dir / rec["prob"], prob.astype(np.float32))
            for m in mods:
                rel = f"samples/{sid}_{m}.vol1"
                write_vol1_file(ep_dir / rel, modality_image(rng, gt).astype(np.float32))
                rec["modalities"][m] = rel
            records.append(rec)
        manifest = {
            "version": MANIFEST_VERSION,
            "episode": name,
            "lesion_type": LESION_TYPES[e % len(LESION_TYPES)],
            "modalities": list(mods),
            "samples": records,
        }
        dump(manifest, "manifest", ep_dir / "manifest.json")
        manifests.append(f"{name}/manifest.json")

        if eval_samples:
            test_dir = ep_dir / "test_gt"
            test_dir.mkdir(exist_ok=True)
            gts = []
            for s in range(eval_samples):
                rng = SplitMix64(derive_seed(seed, "synth-test", e, s))
                gt = ellipsoid_lesion(rng, dims)
                write_vol1_file(test_dir / f"t{s:03d}.vol1", gt.astype(np.uint8))
                gts.append(gt)
            test_sets.append(gts)

    config = {
        "version": "1.0",
        "episodes": manifests,
        "beta": beta,
        "seed": seed,
        "scoring": {"tau": 0.5, "alpha": 0.9, "gamma": 0.9, "band_inward": 4,
                    "band_outward": 4, "connectivity": 26},
        "rmd_epochs": 2,
        "output_dir": "run",
    }
    if eval_samples:
        rows = []
        for t in range(episodes):
            row = []
            for i in range(t + 1):
                pred_dir = out / "eval" / f"session_{t:02d}" / f"task_{i:02d}"
                pred_dir.mkdir(parents=True, exist_ok=True)
                for s, gt in enumerate(test_sets[i]):
                    rng = SplitMix64(derive_seed(seed, "synth-pred", t, i, s))
                    drop = min(0.9, 0.05 + 0.15 * (t - i) + 0.05 * rng.random())
                    pred = degraded_prediction(rng, gt, drop)
                    write_vol1_file(pred_dir / f"t{s:03d}.vol1", pred.astype(np.uint8))
                row.append({
                    "pred_dir": pred_dir.relative_to(out).as_posix(),
                    "gt_dir": f"episode_{i:02d}/test_gt",
                })
            rows.append(row)
        config["eval"] = rows
    path = out / "stream.json"
    dump(config, "stream_config", path)
    return path

