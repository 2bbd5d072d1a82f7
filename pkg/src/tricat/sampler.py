"""(anchor, positive, N negatives) tuple sampling per similarity concept.

Concepts and what counts as a positive:
  * artist: a song by the anchor's artist.
  * album:  a song from the anchor's album.
  * track:  a different window of the anchor's own track.

Sampling regimes differ in which split role each slot draws from:

  regime      anchor   positive              negatives
  train       train    train (same group)    train (other groups)
  validation  val      train (same group)    val (other groups)
  holdout     test     val (same group)      test (other groups)

The track concept rides on the artist-basis split and pools tracks across
groups; its positive is always another window of the anchor track (same
role set as the anchor), and its negatives are windows of other tracks
from the same role set. Negatives within one tuple come from pairwise
distinct groups by default and never from the anchor's group.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterator

import numpy as np

from .catalog import CatalogIndex, Split
from .features import FeatureStore, Segment, extract_segment
from .seeding import derive_rng


class Concept(str, Enum):
    ARTIST = "artist"
    ALBUM = "album"
    TRACK = "track"


class Regime(str, Enum):
    TRAIN = "train"
    VALIDATION = "validation"
    HOLDOUT = "holdout"


# regime -> (anchor role, positive role, negative role)
_ROLES = {
    Regime.TRAIN: ("train", "train", "train"),
    Regime.VALIDATION: ("val", "train", "val"),
    Regime.HOLDOUT: ("test", "val", "test"),
}


class SamplingError(ValueError):
    """Raised when a tuple constraint cannot be satisfied."""


@dataclass(frozen=True)
class TupleSpec:
    concept: Concept
    segment_len: int
    n_negatives: int = 4
    regime: Regime = Regime.TRAIN
    distinct_negatives: bool = True

    def __post_init__(self) -> None:
        if self.n_negatives < 1:
            raise ValueError(f"n_negatives must be >= 1, got {self.n_negatives}")
        if self.segment_len < 1:
            raise ValueError(f"segment_len must be >= 1, got {self.segment_len}")


@dataclass(frozen=True)
class SampledTuple:
    concept: Concept
    regime: Regime
    anchor: Segment
    positive: Segment
    negatives: tuple[Segment, ...]


@dataclass(frozen=True)
class TupleBatch:
    concept: Concept
    regime: Regime
    tuples: tuple[SampledTuple, ...]

    @property
    def anchors(self) -> tuple[Segment, ...]:
        return tuple(t.anchor for t in self.tuples)

    @property
    def positives(self) -> tuple[Segment, ...]:
        return tuple(t.positive for t in self.tuples)

    @property
    def negatives(self) -> tuple[tuple[Segment, ...], ...]:
        return tuple(t.negatives for t in self.tuples)

    def anchor_values(self) -> np.ndarray:
        return np.stack([t.anchor.values for t in self.tuples])

    def positive_values(self) -> np.ndarray:
        return np.stack([t.positive.values for t in self.tuples])

    def negative_values(self) -> np.ndarray:
        return np.stack([[n.values for n in t.negatives] for t in self.tuples])


class TupleSampler:
    """Draws tuples for one (concept, regime) pair from a split.

    Pure function of the generator passed to :meth:`sample`; a sampler
    holds no mutable state, so independent streams can share it.
    """

    def __init__(
        self,
        catalog: CatalogIndex,
        split: Split,
        store: FeatureStore,
        spec: TupleSpec,
    ) -> None:
        if spec.concept in (Concept.ARTIST, Concept.ALBUM):
            if split.basis != spec.concept.value:
                raise SamplingError(
                    f"{spec.concept.value} concept requires a {spec.concept.value}-basis "
                    f"split, got basis {split.basis!r}"
                )
        elif split.basis != "artist":
            raise SamplingError(
                f"track concept rides on the artist-basis split, got basis {split.basis!r}"
            )
        self.catalog = catalog
        self.split = split
        self.store = store
        self.spec = spec
        anchor_role, positive_role, negative_role = _ROLES[spec.regime]
        self._gids = sorted(split.groups)

        if spec.concept is Concept.TRACK:
            pool = list(split.role_tracks(anchor_role))
            min_frames = spec.segment_len + 1
            self._track_pool = pool
            self._track_index = {t: i for i, t in enumerate(pool)}
            self._track_anchor_pool = [
                t for t in pool if catalog.by_id[t].n_frames >= min_frames
            ]
            if not self._track_anchor_pool:
                raise SamplingError(
                    "track concept needs a track with at least "
                    f"{min_frames} frames (segment_len + 1) in the {anchor_role} set "
                    "to draw a distinct positive window; none qualify"
                )
            if len(pool) - 1 < spec.n_negatives and spec.distinct_negatives:
                raise SamplingError(
                    f"track concept with {spec.n_negatives} distinct negatives needs "
                    f"at least {spec.n_negatives + 1} {anchor_role} tracks, split has {len(pool)}"
                )
        else:
            if spec.distinct_negatives and len(self._gids) - 1 < spec.n_negatives:
                raise SamplingError(
                    f"{spec.concept.value} concept with {spec.n_negatives} distinct "
                    f"negatives needs at least {spec.n_negatives + 1} groups, "
                    f"split has {len(self._gids)}"
                )
            if len(self._gids) < 2:
                raise SamplingError(
                    f"{spec.concept.value} concept needs at least 2 groups to draw "
                    f"negatives, split has {len(self._gids)}"
                )
            self._anchor_tracks = {
                gid: getattr(split.groups[gid], anchor_role) for gid in self._gids
            }
            self._positive_tracks = {
                gid: getattr(split.groups[gid], positive_role) for gid in self._gids
            }
            self._negative_tracks = {
                gid: getattr(split.groups[gid], negative_role) for gid in self._gids
            }
            for gid in self._gids:
                for name, pool in (
                    (anchor_role, self._anchor_tracks[gid]),
                    (positive_role, self._positive_tracks[gid]),
                    (negative_role, self._negative_tracks[gid]),
                ):
                    if not pool:
                        raise SamplingError(
                            f"group {gid} has no {name} tracks for the "
                            f"{spec.regime.value} regime"
                        )

    def _segment(self, track_id: str, rng: np.random.Generator) -> Segment:
        rec = self.catalog.by_id[track_id]
        start = int(rng.integers(rec.n_frames - self.spec.segment_len + 1))
        return extract_segment(self.store.get(rec.feature_ref), start, self.spec.segment_len, track_id)

    def _segment_excluding(self, track_id: str, taboo_start: int, rng: np.random.Generator) -> Segment:
        rec = self.catalog.by_id[track_id]
        n_starts = rec.n_frames - self.spec.segment_len + 1
        start = int(rng.integers(n_starts - 1))
        if start >= taboo_start:
            start += 1
        return extract_segment(self.store.get(rec.feature_ref), start, self.spec.segment_len, track_id)

    def _pick_groups(self, exclude_idx: int, count: int, size: int, rng: np.random.Generator) -> list[int]:
        if self.spec.distinct_negatives:
            picks = rng.choice(size - 1, size=count, replace=False)
        else:
            picks = rng.integers(size - 1, size=count)
        return [int(p) + 1 if p >= exclude_idx else int(p) for p in picks]

    def sample(self, rng: np.random.Generator) -> SampledTuple:
        spec = self.spec
        if spec.concept is Concept.TRACK:
            anchor_track = self._track_anchor_pool[int(rng.integers(len(self._track_anchor_pool)))]
            anchor = self._segment(anchor_track, rng)
            positive = self._segment_excluding(anchor_track, anchor.start, rng)
            pool_idx = self._track_index[anchor_track]
            neg_idx = self._pick_groups(pool_idx, spec.n_negatives, len(self._track_pool), rng)
            negatives = tuple(self._segment(self._track_pool[i], rng) for i in neg_idx)
        else:
            gid_idx = int(rng.integers(len(self._gids)))
            gid = self._gids[gid_idx]
            anchor_pool = self._anchor_tracks[gid]
            anchor = self._segment(anchor_pool[int(rng.integers(len(anchor_pool)))], rng)
            positive_pool = self._positive_tracks[gid]
            positive = self._segment(positive_pool[int(rng.integers(len(positive_pool)))], rng)
            neg_gidx = self._pick_groups(gid_idx, spec.n_negatives, len(self._gids), rng)
            negatives = []
            for gi in neg_gidx:
                pool = self._negative_tracks[self._gids[gi]]
                negatives.append(self._segment(pool[int(rng.integers(len(pool)))], rng))
            negatives = tuple(negatives)
        return SampledTuple(spec.concept, spec.regime, anchor, positive, negatives)

    def batch(self, size: int, rng: np.random.Generator) -> TupleBatch:
        return TupleBatch(
            concept=self.spec.concept,
            regime=self.spec.regime,
            tuples=tuple(self.sample(rng) for _ in range(size)),
        )

    def stream(self, seed: int, count: int, batch_size: int = 1) -> Iterator[TupleBatch]:
        """``count`` tuples grouped into batches, deterministic given seed."""
        rng = derive_rng(seed, f"sampler/{self.spec.concept.value}/{self.spec.regime.value}")
        remaining = count
        while remaining > 0:
            take = min(batch_size, remaining)
            yield self.batch(take, rng)
            remaining -= take


def sample_tuple(
    split: Split,
    spec: TupleSpec,
    rng: np.random.Generator,
    *,
    catalog: CatalogIndex,
    store: FeatureStore,
) -> SampledTuple:
    return TupleSampler(catalog, split, store, spec).sample(rng)


def tuple_stream(
    split: Split,
    spec: TupleSpec,
    seed: int,
    count: int,
    *,
    catalog: CatalogIndex,
    store: FeatureStore,
    batch_size: int = 1,
) -> Iterator[TupleBatch]:
    return TupleSampler(catalog, split, store, spec).stream(seed, count, batch_size)
