"""Per-sample representativeness and difficulty scores.

Raw scores per sample:

* confidence  - mean over lesion voxels of p if p > tau else 0
* size        - lesion voxel count
* uncertainty - mean |p - 0.5| over the boundary band (lower = less stable)
* complexity  - components**2 / lesion voxels

Each raw list is min-max normalized over the dataset being scored, then
combined into ``r_rep`` (confidence/size, weighted by ``alpha`` toward size)
and ``r_diff`` (inverted uncertainty/complexity, weighted by ``gamma`` toward
uncertainty).
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AllSamplesEmpty, EmptyBand, EmptyInput, EmptyLesion
from .volume import BandSpec, as_mask, as_prob, boundary_band, check_same_dims, connected_components


@dataclass(frozen=True)
class ScoringConfig:
    tau: float = 0.5
    alpha: float = 0.9
    gamma: float = 0.9
    band: BandSpec = field(default_factory=BandSpec)
    connectivity: int = 26

    def __post_init__(self):
        for name in ("tau", "alpha", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.connectivity not in (6, 26):
            raise ValueError(f"connectivity must be 6 or 26, got {self.connectivity}")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "alpha": self.alpha,
            "gamma": self.gamma,
            "band_inward": self.band.inward,
            "band_outward": self.band.outward,
            "connectivity": self.connectivity,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScoringConfig":
        return cls(
            tau=float(d.get("tau", 0.5)),
            alpha=float(d.get("alpha", 0.9)),
            gamma=float(d.get("gamma", 0.9)),
            band=BandSpec(int(d.get("band_inward", 4)), int(d.get("band_outward", 4))),
            connectivity=int(d.get("connectivity", 26)),
        )


@dataclass
class RawScores:
    conf: float
    size: int
    unc: float
    comp: float


@dataclass
class SampleScores:
    sample_id: str
    raw: RawScores | None = None
    norm: RawScores | None = None  # normalized conf/size/unc/comp, all in [0, 1]
    r_rep: float | None = None
    r_diff: float | None = None
    excluded: bool = False
    exclusion_reason: str | None = None

    @property
    def valid(self) -> bool:
        return not self.excluded

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "raw": asdict(self.raw) if self.raw else None,
            "norm": asdict(self.norm) if self.norm else None,
            "r_rep": self.r_rep,
            "r_diff": self.r_diff,
            "excluded": self.excluded,
            "exclusion_reason": self.exclusion_reason,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleScores":
        raw = RawScores(**d["raw"]) if d.get("raw") else None
        norm = RawScores(**d["norm"]) if d.get("norm") else None
        return cls(
            sample_id=d["sample_id"],
            raw=raw,
            norm=norm,
            r_rep=d.get("r_rep"),
            r_diff=d.get("r_diff"),
            excluded=bool(d.get("excluded", False)),
            exclusion_reason=d.get("exclusion_reason"),
        )


def _lesion(prob, gt) -> tuple[np.ndarray, np.ndarray]:
    p, g = as_prob(prob), as_mask(gt)
    check_same_dims(p, g)
    return p, g


def confidence_score(prob, gt, tau: float = 0.5) -> float:
    p, g = _lesion(prob, gt)
    vals = p[g]
    if vals.size == 0:
        raise EmptyLesion("lesion mask is empty")
    return float(np.where(vals > tau, vals, 0.0).sum() / vals.size)


def size_score(gt) -> int:
    return int(as_mask(gt).sum())


def uncertainty_score(prob, gt, band: BandSpec = BandSpec()) -> float:
    p, g = _lesion(prob, gt)
    b = boundary_band(g, band)
    vals = p[b]
    if vals.size == 0:
        raise EmptyBand("boundary band is empty")
    return float(np.abs(vals - 0.5).sum() / vals.size)


def complexity_score(gt, connectivity: int = 26) -> float:
    g = as_mask(gt)
    n = int(g.sum())
    if n == 0:
        raise EmptyLesion("lesion mask is empty")
    _, c = connected_components(g, connectivity)
    return c * c / n


def normalize_scores(values: Sequence[float]) -> list[float]:
    """Min-max scale to [0, 1]; an all-equal list maps to 0.5 everywhere."""
    if len(values) == 0:
        raise EmptyInput("cannot normalize an empty list")
    vals = [float(v) for v in values]
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("scores must be finite")
    lo, hi = min(vals), max(vals)
    if hi == lo:
        return [0.5] * len(vals)
    span = hi - lo
    # clamp guards against rounding just past the unit interval
    return [min(1.0, max(0.0, (v - lo) / span)) for v in vals]


def rep_score(conf_norm: float, size_norm: float, alpha: float = 0.9) -> float:
    return min(1.0, (1.0 - alpha) * conf_norm + alpha * size_norm)


def diff_score(unc_norm: float, comp_norm: float, gamma: float = 0.9) -> float:
    # low uncertainty score means an unstable margin, hence the inversion
    return min(1.0, gamma * (1.0 - unc_norm) + (1.0 - gamma) * comp_norm)


def raw_scores(prob, gt, config: ScoringConfig = ScoringConfig()) -> RawScores:
    p, g = _lesion(prob, gt)
    return RawScores(
        conf=confidence_score(p, g, config.tau),
        size=size_score(g),
        unc=uncertainty_score(p, g, config.band),
        comp=complexity_score(g, config.connectivity),
    )


def _score_one(item, config: ScoringConfig) -> SampleScores:
    sample_id, prob, gt = item
    if callable(prob):
        prob = prob()
    if callable(gt):
        gt = gt()
    try:
        return SampleScores(sample_id, raw=raw_scores(prob, gt, config))
    except (EmptyLesion, EmptyBand) as exc:
        return SampleScores(sample_id, excluded=True, exclusion_reason=exc.code)


def score_dataset(
    samples: Iterable[tuple],
    config: ScoringConfig = ScoringConfig(),
    threads: int = 1,
) -> list[SampleScores]:
    """Score one episode's samples and normalize across exactly that set.

    ``samples`` yields ``(sample_id, prob, gt)``; ``prob``/``gt`` may be arrays
    or zero-argument loaders, so worker threads can also do the file reads.
    Samples with an empty lesion or band come back with ``excluded=True``
    and take no part in normalization. Output order follows input order
    regardless of ``threads``.
    """
    items = list(samples)
    if not items:
        raise EmptyInput("no samples to score")
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda it: _score_one(it, config), items))
    else:
        results = [_score_one(it, config) for it in items]

    valid = [s for s in results if s.valid]
    if not valid:
        raise AllSamplesEmpty(f"all {len(results)} samples were excluded")

    conf = normalize_scores([s.raw.conf for s in valid])
    size = normalize_scores([s.raw.size for s in valid])
    unc = normalize_scores([s.raw.unc for s in valid])
    comp = normalize_scores([s.raw.comp for s in valid])
    for i, s in enumerate(valid):
        s.norm = RawScores(conf=conf[i], size=size[i], unc=unc[i], comp=comp[i])
        s.r_rep = rep_score(conf[i], size[i], config.alpha)
        s.r_diff = diff_score(unc[i], comp[i], config.gamma)
    return results

