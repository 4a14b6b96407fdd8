"""Modality registry, channel inflation and random modality drop.

Channel indices are append-only: a modality keeps the index it received at
first registration, and new modalities go to the end. Inflating the input
convolution is therefore a prefix copy into a zero-initialised tensor.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptyAvailable,
    SchemaMismatch,
    ShrinkNotAllowed,
    UnregisteredModality,
)
from .prng import SplitMix64, derive_seed

LAYOUT_VERSION = "1.0"


def normalize_name(name: str) -> str:
    clean = str(name).strip().upper()
    if not clean:
        raise ValueError("modality names must be non-empty")
    return clean


@dataclass(frozen=True)
class ChannelLayout:
    names: tuple[str, ...] = ()

    @property
    def k_max(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        key = normalize_name(name)
        try:
            return self.names.index(key)
        except ValueError:
            raise UnregisteredModality(f"modality {name!r} is not registered") from None

    def __contains__(self, name: str) -> bool:
        return normalize_name(name) in self.names

    def as_dict(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.names)}

    def to_json(self) -> dict:
        return {
            "version": LAYOUT_VERSION,
            "modalities": [{"name": n, "index": i} for i, n in enumerate(self.names)],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ChannelLayout":
        if str(doc.get("version", "")).split(".")[0] != LAYOUT_VERSION.split(".")[0]:
            raise SchemaMismatch(f"unsupported layout version {doc.get('version')!r}")
        mods = sorted(doc["modalities"], key=lambda m: m["index"])
        if [m["index"] for m in mods] != list(range(len(mods))):
            raise SchemaMismatch("layout indices must be 0..k_max-1 without gaps")
        names = tuple(normalize_name(m["name"]) for m in mods)
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate modality names in layout")
        return cls(names)


def register_modalities(layout: ChannelLayout, episode_modalities: Iterable[str]) -> ChannelLayout:
    names = list(layout.names)
    for raw in episode_modalities:
        name = normalize_name(raw)
        if name not in names:
            names.append(name)
    return ChannelLayout(tuple(names))


def inflate_weights(w: np.ndarray, k_max: int) -> np.ndarray:
    """Grow input channels (axis 1) of a conv weight to ``k_max``.

    The first K input channels are copied bit-for-bit; new channels are zero.
    """
    w = np.asarray(w)
    if w.ndim != 5:
        raise ValueError(f"expected [c_out, c_in, kx, ky, kz] weights, got shape {w.shape}")
    k = w.shape[1]
    if k_max < k:
        raise ShrinkNotAllowed(f"cannot shrink input channels from {k} to {k_max}")
    out = np.zeros((w.shape[0], k_max) + w.shape[2:], dtype=w.dtype)
    out[:, :k] = w
    return out


def assemble_input(
    sample: Mapping[str, np.ndarray],
    layout: ChannelLayout,
    dtype=np.float32,
) -> np.ndarray:
    """Stack a sample's modalities into ``[k_max, X, Y, Z]``, zeros where absent."""
    dims = None
    placed = {}
    for name, vol in sample.items():
        idx = layout.index(name)
        arr = np.asarray(vol)
        if arr.ndim != 3:
            raise DimensionMismatch(f"modality {name!r} is not 3D: {arr.shape}")
        if dims is None:
            dims = arr.shape
        elif arr.shape != dims:
            raise DimensionMismatch(f"modality {name!r} has dims {arr.shape}, expected {dims}")
        placed[idx] = arr
    if dims is None:
        raise EmptyAvailable("sample has no modalities")
    out = np.zeros((layout.k_max,) + dims, dtype=dtype)
    for idx, arr in placed.items():
        out[idx] = arr
    return out


@dataclass(frozen=True)
class RmdConfig:
    """Random modality drop law.

    ``uniform-size`` draws the kept-set size uniformly from 1..n, then the
    members uniformly. ``bernoulli`` keeps each modality with ``keep_prob``
    and redraws an empty result.
    """

    law: str = "uniform-size"
    keep_prob: float = 0.5

    def __post_init__(self):
        if self.law not in ("uniform-size", "bernoulli"):
            raise ValueError(f"unknown RMD law {self.law!r}")
        if not 0.0 < self.keep_prob <= 1.0:
            raise ValueError("keep_prob must lie in (0, 1]")


def rmd_mask(
    available: Iterable[str],
    seed: int,
    sample_id: str,
    epoch: int,
    config: RmdConfig = RmdConfig(),
) -> list[str]:
    """Non-empty kept subset of ``available`` for one (sample, epoch).

    The stream depends only on (seed, sample_id, epoch), so results do not
    depend on loader order or worker count. Returned names keep the sorted
    order of the normalized input.
    """
    names = sorted({normalize_name(n) for n in available})
    if not names:
        raise EmptyAvailable("no available modalities to mask")
    rng = SplitMix64(derive_seed(seed, sample_id, epoch))
    if config.law == "uniform-size":
        k = 1 + rng.below(len(names))
        kept = set(rng.shuffle_prefix(names, k))
    else:
        while True:
            kept = {n for n in names if rng.random() < config.keep_prob}
            if kept:
                break
    return [n for n in names if n in kept]


@dataclass
class LayoutTracker:
    """Episode-boundary bookkeeping: current layout plus logged inflation events."""

    layout: ChannelLayout = field(default_factory=ChannelLayout)
    events: list[dict] = field(default_factory=list)

    def register(self, episode: int, modalities: Iterable[str]) -> dict | None:
        old = self.layout
        self.layout = register_modalities(old, modalities)
        if old.k_max and self.layout.k_max > old.k_max:
            event = {
                "episode": episode,
                "old_k": old.k_max,
                "new_k": self.layout.k_max,
                "added": list(self.layout.names[old.k_max:]),
            }
            self.events.append(event)
            return event
        return None
