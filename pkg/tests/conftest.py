from __future__ import annotations

import warnings

import pytest

from tricat import (
    FeatureStore,
    HierarchyParams,
    build_album_split,
    build_artist_split,
    generate_catalog,
)


@pytest.fixture(scope="session")
def small_catalog(tmp_path_factory):
    """10 artists x 2 albums x 10 tracks: enough for both split bases."""
    out = tmp_path_factory.mktemp("small-cat")
    params = HierarchyParams(n_artists=10, albums_per_artist=2, tracks_per_album=10, seed=0)
    catalog = generate_catalog(params, out)
    return params, catalog, out


@pytest.fixture(scope="session")
def small_store(small_catalog):
    return FeatureStore()


@pytest.fixture(scope="session")
def small_splits(small_catalog):
    _, catalog, _ = small_catalog
    return {
        "artist": build_artist_split(catalog, 10, seed=0),
        "album": build_album_split(catalog, 20, seed=0),
    }


@pytest.fixture(scope="session")
def default_catalog(tmp_path_factory):
    """The desk-scale default: 100 artists x 2 albums x 10 tracks."""
    out = tmp_path_factory.mktemp("default-cat")
    params = HierarchyParams(seed=0)
    catalog = generate_catalog(params, out)
    return params, catalog, out


@pytest.fixture(scope="session")
def default_store(default_catalog):
    return FeatureStore()


@pytest.fixture(scope="session")
def default_splits(default_catalog):
    _, catalog, _ = default_catalog
    return {
        "artist": build_artist_split(catalog, 100, seed=0),
        "album": build_album_split(catalog, 200, seed=0),
    }


@pytest.fixture(scope="session")
def structureless_catalog(tmp_path_factory):
    """No hierarchy signal at all: every frame is pure noise.

    Sized generously (250 artists) so chance-level accuracies measured under
    one fixed random encoder concentrate tightly around 1/(N+1).
    """
    out = tmp_path_factory.mktemp("flat-cat")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        params = HierarchyParams(
            n_artists=250, sigma_artist=0.0, sigma_album=0.0, sigma_track=0.0,
            sigma_frame=1.0, seed=7,
        )
        catalog = generate_catalog(params, out)
    return params, catalog, out
