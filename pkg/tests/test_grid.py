import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irrnn.errors import FormatError, InvalidArgumentError
from irrnn.grid import (MANIFEST, Dataset, dataset_meta, load_dataset, make_grid,
                        save_dataset)


def test_two_point_axis():
    assert make_grid([2]).coords.tolist() == [[-1.0], [1.0]]


def test_singleton_axis_maps_to_zero():
    assert make_grid([1, 3]).coords.tolist() == [[0, -1], [0, 0], [0, 1]]


@pytest.mark.parametrize("dims, V", [((16, 16, 8), 2048), ((32, 32, 8), 8192),
                                     ((64, 64, 8), 32768), ((128, 128, 8), 131072)])
def test_benchmark_grid_sizes(dims, V):
    assert make_grid(dims).V == V


@pytest.mark.parametrize("dims", [[], [0], [3, 0], [1, 2, 3, 4], ["a"]])
def test_bad_dims(dims):
    with pytest.raises(InvalidArgumentError):
        make_grid(dims)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(1, 7), min_size=1, max_size=3))
def test_grid_invariants(dims):
    g = make_grid(dims)
    assert g.coords.shape == (int(np.prod(dims)), len(dims))
    assert len({tuple(r) for r in g.coords}) == g.V
    for k, d in enumerate(dims):
        col = g.coords[:, k]
        if d > 1:
            assert col.min() == -1.0 and col.max() == 1.0
        else:
            assert np.all(col == 0)
    # row-major: last axis fastest
    idx = g.index_coords()
    assert np.array_equal(np.ravel_multi_index(idx.T, dims), np.arange(g.V))


def test_coords_read_only():
    g = make_grid([3, 3])
    with pytest.raises(ValueError):
        g.coords[0, 0] = 5


def test_dataset_shape_checks(rng):
    g = make_grid([5])
    with pytest.raises(InvalidArgumentError):
        Dataset(g, rng.normal(size=(3, 2)), rng.normal(size=(4, 5)))
    with pytest.raises(InvalidArgumentError):
        Dataset(g, rng.normal(size=(3, 2)), rng.normal(size=(3, 4)))
    Y = rng.normal(size=(3, 5))
    Y[1, 1] = np.nan
    with pytest.raises(InvalidArgumentError):
        Dataset(g, rng.normal(size=(3, 2)), Y)


def test_round_trip_with_truth(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path / "d", meta={"note": "x"})
    loaded = load_dataset(tmp_path / "d")
    assert loaded == small_dataset
    assert loaded.grid.dims == (4, 3, 2)
    assert dataset_meta(tmp_path / "d") == {"note": "x"}


def test_round_trip_without_truth(tmp_path, small_dataset):
    ds = small_dataset.without_truth()
    save_dataset(ds, tmp_path)
    loaded = load_dataset(tmp_path)
    assert loaded == ds and loaded.truth is None


def test_round_trip_preserves_dims_order(tmp_path, rng):
    for dims in [(2, 3, 4), (4, 3, 2), (3, 4)]:
        g = make_grid(dims)
        ds = Dataset(g, rng.normal(size=(3, 1)), rng.normal(size=(3, g.V)))
        save_dataset(ds, tmp_path / str(dims))
        assert load_dataset(tmp_path / str(dims)).grid.dims == dims


def _edit_manifest(path, fn):
    m = json.loads((path / MANIFEST).read_text())
    fn(m)
    (path / MANIFEST).write_text(json.dumps(m))


def test_manifest_voxel_count_mismatch(tmp_path, rng):
    g = make_grid([8])
    N = 3
    save_dataset(Dataset(g, rng.normal(size=(N, 1)), rng.normal(size=(N, 8))), tmp_path)
    # truncate Y to 7 * N values while the manifest still says V = 8
    raw = (tmp_path / "Y.f64").read_bytes()
    (tmp_path / "Y.f64").write_bytes(raw[: 7 * N * 8])
    with pytest.raises(FormatError) as info:
        load_dataset(tmp_path)
    assert info.value.field == "Y"


def test_declared_shape_disagreeing_with_sizes(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    _edit_manifest(tmp_path, lambda m: m.update(V=999))
    with pytest.raises(FormatError, match="V"):
        load_dataset(tmp_path)


def test_non_finite_payload(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    X = np.fromfile(tmp_path / "X.f64", dtype="<f8")
    X[0] = np.inf
    X.tofile(tmp_path / "X.f64")
    with pytest.raises(FormatError) as info:
        load_dataset(tmp_path)
    assert info.value.field == "X"


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        load_dataset(tmp_path)


def test_incomplete_truth(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    _edit_manifest(tmp_path, lambda m: m["arrays"].pop("truth_alpha"))
    with pytest.raises(FormatError, match="incomplete"):
        load_dataset(tmp_path)


def test_every_single_byte_corruption_is_handled(tmp_path, small_dataset):
    save_dataset(small_dataset, tmp_path)
    original = (tmp_path / MANIFEST).read_bytes()
    for pos in range(len(original)):
        corrupted = bytearray(original)
        corrupted[pos] ^= 0x5A
        (tmp_path / MANIFEST).write_bytes(bytes(corrupted))
        try:
            load_dataset(tmp_path)
        except FormatError:
            pass
    (tmp_path / MANIFEST).write_bytes(original[:1] + b"!" + original[2:])
    with pytest.raises(FormatError):
        load_dataset(tmp_path)


def test_payload_is_little_endian_row_major(tmp_path, rng):
    g = make_grid([2, 2])
    X = rng.normal(size=(2, 1))
    Y = np.arange(8, dtype=float).reshape(2, 4)
    save_dataset(Dataset(g, X, Y), tmp_path)
    assert (tmp_path / "Y.f64").read_bytes() == Y.astype("<f8").tobytes()
