"""Independent oracles used across the test suite.

These re-derive every constraint from the catalog and split alone, never
calling back into the code paths they check.
"""

from __future__ import annotations

import numpy as np

from tricat.catalog import CatalogIndex, Split, TrackRecord, build_index
from tricat.sampler import SampledTuple, TupleSpec

# regime -> (anchor role, positive role, negative role), restated here on
# purpose so a sampler regression cannot hide inside a shared constant
TUPLE_ROLES = {
    "train": ("train", "train", "train"),
    "validation": ("val", "train", "val"),
    "holdout": ("test", "val", "test"),
}


def pooled_role_tracks(split: Split, role: str) -> set[str]:
    out: set[str] = set()
    for group in split.groups.values():
        out.update(getattr(group, role))
    return out


def check_tuple(
    t: SampledTuple, catalog: CatalogIndex, split: Split, spec: TupleSpec
) -> list[str]:
    """All violated membership constraints for one sampled tuple."""
    errs: list[str] = []
    anchor_role, pos_role, neg_role = TUPLE_ROLES[t.regime.value]
    if t.concept.value == "track":
        # the track positive is another window of the anchor song itself
        pos_role = anchor_role
    anchor_set = pooled_role_tracks(split, anchor_role)
    pos_set = pooled_role_tracks(split, pos_role)
    neg_set = pooled_role_tracks(split, neg_role)

    if t.anchor.track_id not in anchor_set:
        errs.append(f"anchor {t.anchor.track_id} not in {anchor_role} set")
    if t.positive.track_id not in pos_set:
        errs.append(f"positive {t.positive.track_id} not in {pos_role} set")
    for n in t.negatives:
        if n.track_id not in neg_set:
            errs.append(f"negative {n.track_id} not in {neg_role} set")

    concept = t.concept.value
    if concept == "artist":
        key = catalog.artist_of
    elif concept == "album":
        key = catalog.album_of
    else:
        key = None

    if key is not None:
        if key(t.positive.track_id) != key(t.anchor.track_id):
            errs.append("positive group differs from anchor group")
        neg_groups = [key(n.track_id) for n in t.negatives]
        for g in neg_groups:
            if g == key(t.anchor.track_id):
                errs.append("negative shares the anchor group")
        if spec.distinct_negatives and len(set(neg_groups)) != len(neg_groups):
            errs.append("negatives not pairwise distinct groups")
    else:  # track concept
        if t.positive.track_id != t.anchor.track_id:
            errs.append("track positive from a different track")
        if t.positive.start == t.anchor.start:
            errs.append("track positive reuses the anchor window")
        neg_tracks = [n.track_id for n in t.negatives]
        for tid in neg_tracks:
            if tid == t.anchor.track_id:
                errs.append("track negative comes from the anchor track")
        if spec.distinct_negatives and len(set(neg_tracks)) != len(neg_tracks):
            errs.append("track negatives not pairwise distinct")

    if len(t.negatives) != spec.n_negatives:
        errs.append(f"expected {spec.n_negatives} negatives, got {len(t.negatives)}")
    for seg in (t.anchor, t.positive, *t.negatives):
        rec = catalog.by_id[seg.track_id]
        if seg.values.shape[0] != spec.segment_len:
            errs.append(f"segment of {seg.track_id} has wrong length")
        if not (0 <= seg.start <= rec.n_frames - spec.segment_len):
            errs.append(f"segment start {seg.start} out of range for {seg.track_id}")
    return errs


def scalar_margin_loss(anchor, positive, negatives, margin, reduce="sum") -> float:
    """Plain-Python recomputation of the hinge loss, one float op at a time."""

    def dot(u, v):
        return sum(float(a) * float(b) for a, b in zip(u, v))

    pos = dot(anchor, positive)
    terms = [max(0.0, margin - pos + dot(anchor, n)) for n in negatives]
    return sum(terms) if reduce == "sum" else sum(terms) / len(terms)


def random_unit(rng: np.random.Generator, dim: int) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def make_records(
    n_artists: int,
    albums_per_artist: int,
    tracks_per_album: int,
    n_frames: int = 40,
    ref_prefix: str = "mem",
) -> list[TrackRecord]:
    records = []
    for a in range(n_artists):
        artist = f"art{a:03d}"
        for b in range(albums_per_artist):
            album = f"{artist}-alb{b:02d}"
            for t in range(tracks_per_album):
                track = f"{album}-trk{t:02d}"
                records.append(
                    TrackRecord(track, artist, album, f"{ref_prefix}/{track}.tfm", n_frames)
                )
    return records


def make_catalog(
    n_artists: int, albums_per_artist: int, tracks_per_album: int, n_frames: int = 40
) -> CatalogIndex:
    return build_index(make_records(n_artists, albums_per_artist, tracks_per_album, n_frames))


def joint_gradient_max_rel_err(
    n_inputs: int = 5, n_coords: int = 20, eps: float = 1e-6, data_seed: int = 0
) -> float:
    """Autograd vs central finite differences through a miniature encoder.

    Returns the worst relative error over ``n_coords`` random parameter
    coordinates at each of ``n_inputs`` random input batches.
    """
    import torch

    from tricat.losses import MarginConfig, joint_loss
    from tricat.model import default_encoder_config, init_encoder

    config = default_encoder_config(
        8, 6, base_filters=(2, 2), embedding_dim=8, filter_multiplier=2.0, seed=0
    )
    assert config.realized_filters == (4, 4)
    margins = MarginConfig()
    rng = np.random.default_rng(data_seed)
    coord_rng = np.random.default_rng(data_seed + 1)
    worst = 0.0

    for _ in range(n_inputs):
        encoder = init_encoder(config).double()
        inputs = {
            concept: torch.tensor(
                rng.normal(size=(2 * (2 + 2), 1, 8, 6)), dtype=torch.float64
            )
            for concept in ("artist", "album", "track")
        }

        def loss_value():
            batches = {}
            for concept, x in inputs.items():
                z = encoder(x)
                batches[concept] = (z[:2], z[2:4], z[4:].reshape(2, 2, -1))
            return joint_loss(batches, margins)

        value = loss_value()
        encoder.zero_grad()
        value.backward()
        params = list(encoder.parameters())
        flat_grad = torch.cat([p.grad.flatten() for p in params]).numpy()
        flat = torch.cat([p.detach().flatten() for p in params]).numpy()
        coords = coord_rng.choice(flat.size, size=n_coords, replace=False)

        def set_flat(values):
            offset = 0
            with torch.no_grad():
                for p in params:
                    n = p.numel()
                    p.copy_(torch.tensor(values[offset : offset + n]).reshape(p.shape))
                    offset += n

        for i in coords:
            bumped = flat.copy()
            bumped[i] += eps
            set_flat(bumped)
            up = float(loss_value().detach())
            bumped[i] -= 2 * eps
            set_flat(bumped)
            down = float(loss_value().detach())
            set_flat(flat)
            fd = (up - down) / (2 * eps)
            denom = max(abs(fd), abs(flat_grad[i]), 1e-8)
            worst = max(worst, abs(fd - flat_grad[i]) / denom)
    return worst


class FixedProjectionEmbedder:
    """Deterministic stand-in encoder: unit-normalized random projection of
    the segment's mean frame. No learning anywhere."""

    def __init__(self, n_bins: int, dim: int = 32, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.projection = rng.normal(size=(dim, n_bins)).astype(np.float32)

    def embed_segments(self, values: np.ndarray) -> np.ndarray:
        means = values.mean(axis=1)  # (B, n_bins)
        z = means @ self.projection.T
        norms = np.linalg.norm(z, axis=1, keepdims=True)
        norms[norms == 0] = 1.0
        return (z / norms).astype(np.float32)

    def embed_song(self, feature, hop=None):
        z = self.embed_segments(feature.values[None])
        return z[0]
