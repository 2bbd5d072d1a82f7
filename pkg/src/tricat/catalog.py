"""Track metadata ingestion, the artist/album hierarchy index, and splits.

The metadata format is a UTF-8 CSV with header
``track_id,artist_id,album_id,feature_ref,n_frames``. Feature refs are
resolved relative to the CSV's directory.

Splits assign each selected group's tracks to train/validation/test with
fixed sizes: 20 songs per artist split 16/2/2, 10 songs per album split
8/1/1. Group selection and the within-group assignment are seeded, so a
split is a pure function of (catalog, group count, seed).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .seeding import derive_rng

ARTIST_GROUP_SIZES = (16, 2, 2)
ALBUM_GROUP_SIZES = (8, 1, 1)


class CatalogError(ValueError):
    """Raised when a metadata file violates the catalog invariants."""


class SplitShortfallError(ValueError):
    """Raised when a catalog cannot supply the requested number of groups."""


@dataclass(frozen=True)
class TrackRecord:
    track_id: str
    artist_id: str
    album_id: str
    feature_ref: str
    n_frames: int


@dataclass(frozen=True)
class CatalogIndex:
    tracks: tuple[TrackRecord, ...]
    by_artist: dict[str, tuple[str, ...]]
    by_album: dict[str, tuple[str, ...]]
    by_id: dict[str, TrackRecord]
    rejected: tuple[tuple[str, str], ...] = ()  # (track_id, reason)

    @property
    def artist_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.by_artist))

    @property
    def album_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.by_album))

    def artist_of(self, track_id: str) -> str:
        return self.by_id[track_id].artist_id

    def album_of(self, track_id: str) -> str:
        return self.by_id[track_id].album_id


@dataclass(frozen=True)
class SplitGroup:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]

    def all_tracks(self) -> tuple[str, ...]:
        return self.train + self.val + self.test


@dataclass(frozen=True)
class Split:
    basis: str  # "artist" | "album"
    seed: int
    groups: dict[str, SplitGroup] = field(default_factory=dict)

    def role_tracks(self, role: str) -> tuple[str, ...]:
        out: list[str] = []
        for gid in sorted(self.groups):
            out.extend(getattr(self.groups[gid], role))
        return tuple(out)


def build_index(
    records: list[TrackRecord], rejected: tuple[tuple[str, str], ...] = ()
) -> CatalogIndex:
    """Assemble a CatalogIndex, enforcing uniqueness and album ownership."""
    by_id: dict[str, TrackRecord] = {}
    album_owner: dict[str, str] = {}
    for rec in records:
        if rec.track_id in by_id:
            raise CatalogError(f"duplicate track_id {rec.track_id!r}")
        owner = album_owner.setdefault(rec.album_id, rec.artist_id)
        if owner != rec.artist_id:
            raise CatalogError(
                f"album {rec.album_id!r} appears under two artists "
                f"({owner!r} and {rec.artist_id!r})"
            )
        by_id[rec.track_id] = rec
    by_artist: dict[str, list[str]] = {}
    by_album: dict[str, list[str]] = {}
    for rec in records:
        by_artist.setdefault(rec.artist_id, []).append(rec.track_id)
        by_album.setdefault(rec.album_id, []).append(rec.track_id)
    return CatalogIndex(
        tracks=tuple(records),
        by_artist={k: tuple(v) for k, v in sorted(by_artist.items())},
        by_album={k: tuple(v) for k, v in sorted(by_album.items())},
        by_id=by_id,
        rejected=rejected,
    )


METADATA_HEADER = ["track_id", "artist_id", "album_id", "feature_ref", "n_frames"]


def load_catalog(path: str | Path, segment_len: int) -> CatalogIndex:
    """Read a metadata CSV into a validated CatalogIndex.

    Records whose track is shorter than ``segment_len`` frames are dropped
    and listed on the returned index's ``rejected`` field.
    """
    path = Path(path)
    base = path.parent
    records: list[TrackRecord] = []
    rejected: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != METADATA_HEADER:
            raise CatalogError(
                f"{path}: expected header {','.join(METADATA_HEADER)}, got {header}"
            )
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise CatalogError(f"{path}: line {line_no}: expected 5 fields, got {len(row)}")
            track_id, artist_id, album_id, feature_ref, n_frames_raw = row
            if not track_id or not artist_id or not album_id:
                raise CatalogError(f"{path}: line {line_no}: empty id field")
            try:
                n_frames = int(n_frames_raw)
            except ValueError:
                raise CatalogError(
                    f"{path}: line {line_no}: n_frames {n_frames_raw!r} is not an integer"
                ) from None
            if n_frames < 1:
                raise CatalogError(f"{path}: line {line_no}: n_frames must be positive")
            resolved = feature_ref if Path(feature_ref).is_absolute() else str(base / feature_ref)
            rec = TrackRecord(track_id, artist_id, album_id, resolved, n_frames)
            if n_frames < segment_len:
                rejected.append(
                    (track_id, f"n_frames {n_frames} < segment_len {segment_len}")
                )
                continue
            records.append(rec)
    return build_index(records, rejected=tuple(rejected))


def _build_split(
    catalog: CatalogIndex,
    basis: str,
    bucket: dict[str, tuple[str, ...]],
    sizes: tuple[int, int, int],
    n_groups: int,
    seed: int,
) -> Split:
    if n_groups < 1:
        raise ValueError(f"n_{basis}s must be >= 1, got {n_groups}")
    need = sum(sizes)
    qualifying = [gid for gid in sorted(bucket) if len(bucket[gid]) >= need]
    if len(qualifying) < n_groups:
        raise SplitShortfallError(
            f"need {n_groups} {basis}s with >= {need} tracks, catalog has "
            f"{len(qualifying)} (shortfall {n_groups - len(qualifying)})"
        )
    rng = derive_rng(seed, f"split/{basis}")
    chosen_idx = rng.choice(len(qualifying), size=n_groups, replace=False)
    chosen = sorted(qualifying[i] for i in chosen_idx)
    n_train, n_val, n_test = sizes
    groups: dict[str, SplitGroup] = {}
    for gid in chosen:
        tracks = sorted(bucket[gid])
        order = rng.permutation(len(tracks))[:need]
        picked = [tracks[i] for i in order]
        groups[gid] = SplitGroup(
            train=tuple(picked[:n_train]),
            val=tuple(picked[n_train : n_train + n_val]),
            test=tuple(picked[n_train + n_val : need]),
        )
    return Split(basis=basis, seed=seed, groups=groups)


def build_artist_split(catalog: CatalogIndex, n_artists: int, seed: int) -> Split:
    """Select artists with >= 20 tracks and split each 16/2/2."""
    return _build_split(catalog, "artist", catalog.by_artist, ARTIST_GROUP_SIZES, n_artists, seed)


def build_album_split(catalog: CatalogIndex, n_albums: int, seed: int) -> Split:
    """Select albums with >= 10 tracks and split each 8/1/1."""
    return _build_split(catalog, "album", catalog.by_album, ALBUM_GROUP_SIZES, n_albums, seed)


def validate_split(split: Split, catalog: CatalogIndex) -> list[str]:
    """Cross-check a split against the catalog; one report line per violation."""
    report: list[str] = []
    if split.basis == "artist":
        sizes = ARTIST_GROUP_SIZES
        group_of = catalog.artist_of
    elif split.basis == "album":
        sizes = ALBUM_GROUP_SIZES
        group_of = catalog.album_of
    else:
        return [f"unknown basis {split.basis!r}"]
    seen: dict[str, str] = {}
    for gid in sorted(split.groups):
        group = split.groups[gid]
        parts = (group.train, group.val, group.test)
        actual = tuple(len(p) for p in parts)
        if actual != sizes:
            report.append(
                f"group {gid}: train/val/test sizes {actual} != expected {sizes}"
            )
        members = group.all_tracks()
        if len(set(members)) != len(members):
            dupes = sorted({t for t in members if members.count(t) > 1})
            report.append(f"group {gid}: duplicated tracks {dupes}")
        for track_id in members:
            where = seen.get(track_id)
            if where is not None:
                report.append(f"track {track_id} assigned in both {where} and group {gid}")
            seen[track_id] = f"group {gid}"
            if track_id not in catalog.by_id:
                report.append(f"group {gid}: track {track_id} not in catalog")
            elif group_of(track_id) != gid:
                report.append(
                    f"group {gid}: track {track_id} belongs to "
                    f"{split.basis} {group_of(track_id)!r}"
                )
    return report


def split_to_json(split: Split) -> str:
    payload = {
        "basis": split.basis,
        "seed": split.seed,
        "groups": {
            gid: {"train": list(g.train), "val": list(g.val), "test": list(g.test)}
            for gid, g in split.groups.items()
        },
    }
    return json.dumps(payload, indent=2, sort_keys=True)


def save_split(split: Split, path: str | Path) -> None:
    Path(path).write_text(split_to_json(split), encoding="utf-8")


def load_split(path: str | Path) -> Split:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    groups = {
        gid: SplitGroup(
            train=tuple(g["train"]), val=tuple(g["val"]), test=tuple(g["test"])
        )
        for gid, g in payload["groups"].items()
    }
    return Split(basis=payload["basis"], seed=payload["seed"], groups=groups)
