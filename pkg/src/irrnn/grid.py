"""Voxel grids, subject datasets and their on-disk layout.

A dataset directory holds a UTF-8 JSON ``manifest.json`` plus one flat,
row-major, little-endian binary file per array::

    manifest.json
    X.f64            N x J covariates
    Y.f64            N x V responses
    truth_beta.f64   J x V   (optional)
    truth_alpha.f64  N x V   (optional)
    truth_sigma2.f64 V       (optional)
    truth_support.u8 J x V   (optional)
    truth_noise.f64  N x V   (optional)

Voxels are enumerated in row-major order (last axis fastest) everywhere.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import FormatError, InvalidArgumentError

MANIFEST = "manifest.json"
FORMAT_VERSION = 1

_DTYPES = {"f64": np.dtype("<f8"), "u8": np.dtype("u1")}


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """Rectangular lattice with coordinates scaled to [-1, 1] per axis."""

    dims: tuple
    coords: np.ndarray

    @property
    def V(self) -> int:
        return int(np.prod(self.dims))

    @property
    def D(self) -> int:
        return len(self.dims)

    def __eq__(self, other):
        return (isinstance(other, VoxelGrid) and self.dims == other.dims
                and np.array_equal(self.coords, other.coords))

    def __hash__(self):
        return hash(self.dims)

    def index_coords(self) -> np.ndarray:
        """Integer lattice indices (V x D), same row order as ``coords``."""
        return np.indices(self.dims).reshape(self.D, -1).T.copy()


def make_grid(dims) -> VoxelGrid:
    """Build a grid over ``dims`` (1 to 3 axes).

    >>> make_grid([2]).coords.tolist()
    [[-1.0], [1.0]]
    """
    try:
        dims = tuple(int(d) for d in dims)
    except (TypeError, ValueError) as exc:
        raise InvalidArgumentError(f"dims must be integers, got {dims!r}") from exc
    if not 1 <= len(dims) <= 3:
        raise InvalidArgumentError(f"need 1 to 3 axes, got {len(dims)}")
    if any(d < 1 for d in dims):
        raise InvalidArgumentError(f"every dimension must be >= 1, got {dims}")
    idx = np.indices(dims, dtype=np.float64).reshape(len(dims), -1).T
    coords = np.zeros_like(idx)
    for k, d in enumerate(dims):
        if d > 1:
            coords[:, k] = 2.0 * idx[:, k] / (d - 1) - 1.0
    return VoxelGrid(dims, _frozen(coords))


@dataclass(frozen=True, eq=False)
class GroundTruth:
    """Simulated fields. ``noise`` holds the realized errors when known."""

    beta: np.ndarray
    alpha: np.ndarray
    sigma2: np.ndarray
    support: np.ndarray = None
    noise: np.ndarray = None

    def __post_init__(self):
        beta = _frozen(self.beta)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        object.__setattr__(self, "sigma2", _frozen(self.sigma2))
        support = np.abs(beta) > 0 if self.support is None else self.support
        object.__setattr__(self, "support", _frozen(support, dtype=bool))
        if self.noise is not None:
            object.__setattr__(self, "noise", _frozen(self.noise))
        if beta.ndim != 2 or self.support.shape != beta.shape:
            raise InvalidArgumentError("beta and support must both be J x V")
        if not np.array_equal(self.support, np.abs(beta) > 0):
            raise InvalidArgumentError("support must equal (beta != 0)")
        if np.any(self.sigma2 <= 0):
            raise InvalidArgumentError("sigma2 must be strictly positive")

    def __eq__(self, other):
        if not isinstance(other, GroundTruth):
            return NotImplemented
        if (self.noise is None) != (other.noise is None):
            return False
        pairs = [(self.beta, other.beta), (self.alpha, other.alpha),
                 (self.sigma2, other.sigma2), (self.support, other.support)]
        if self.noise is not None:
            pairs.append((self.noise, other.noise))
        return all(_bit_equal(a, b) for a, b in pairs)


@dataclass(frozen=True, eq=False)
class Dataset:
    grid: VoxelGrid
    X: np.ndarray
    Y: np.ndarray
    truth: GroundTruth = None

    def __post_init__(self):
        X = _frozen(self.X)
        Y = _frozen(self.Y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        if X.ndim != 2 or Y.ndim != 2:
            raise InvalidArgumentError("X must be N x J and Y must be N x V")
        if X.shape[0] != Y.shape[0]:
            raise InvalidArgumentError(
                f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if Y.shape[1] != self.grid.V:
            raise InvalidArgumentError(
                f"Y has {Y.shape[1]} columns, grid has {self.grid.V} voxels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise InvalidArgumentError("X and Y must be finite")
        if self.truth is not None:
            t = self.truth
            if t.beta.shape != (X.shape[1], self.grid.V) or \
                    t.alpha.shape != Y.shape or t.sigma2.shape != (self.grid.V,):
                raise InvalidArgumentError("ground truth shapes disagree with data")

    @property
    def N(self) -> int:
        return self.X.shape[0]

    @property
    def J(self) -> int:
        return self.X.shape[1]

    @property
    def V(self) -> int:
        return self.grid.V

    def without_truth(self) -> "Dataset":
        return Dataset(self.grid, self.X, self.Y)

    def subset(self, rows) -> "Dataset":
        """Dataset restricted to the given subjects (truth alpha/noise sliced too)."""
        rows = np.asarray(rows)
        truth = None
        if self.truth is not None:
            t = self.truth
            truth = GroundTruth(t.beta, t.alpha[rows], t.sigma2, t.support,
                                None if t.noise is None else t.noise[rows])
        return Dataset(self.grid, self.X[rows], self.Y[rows], truth)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (self.grid == other.grid and _bit_equal(self.X, other.X)
                and _bit_equal(self.Y, other.Y) and self.truth == other.truth)


def _bit_equal(a, b):
    return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()


# ---------------------------------------------------------------------------
# flat-array + manifest helpers (shared with nn and estimator)

def write_array(directory, name, array, kind="f64") -> dict:
    """Write ``array`` as ``<name>.<kind>`` and return its manifest entry."""
    dtype = _DTYPES[kind]
    array = np.ascontiguousarray(array, dtype=dtype)
    fname = f"{name}.{kind}"
    with open(Path(directory) / fname, "wb") as fh:
        fh.write(array.tobytes(order="C"))
    return {"file": fname, "shape": list(array.shape), "dtype": kind}


def read_array(directory, entry, field, expected_shape=None, finite=True):
    if not isinstance(entry, dict):
        raise FormatError("array entry must be an object", field)
    try:
        fname = entry["file"]
        shape = tuple(int(s) for s in entry["shape"])
        kind = entry["dtype"]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed array entry ({exc})", field) from exc
    if kind not in _DTYPES:
        raise FormatError(f"unknown element type {kind!r}", field)
    if not isinstance(fname, str) or os.path.basename(fname) != fname:
        raise FormatError(f"bad file name {fname!r}", field)
    if expected_shape is not None and shape != tuple(expected_shape):
        raise FormatError(
            f"declared shape {shape} disagrees with manifest sizes {tuple(expected_shape)}",
            field)
    dtype = _DTYPES[kind]
    path = Path(directory) / fname
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path} ({exc.strerror})", field) from exc
    n = int(np.prod(shape)) if shape else 1
    if len(raw) != n * dtype.itemsize:
        raise FormatError(
            f"{fname} holds {len(raw)} bytes, expected {n * dtype.itemsize} "
            f"for shape {shape}", field)
    arr = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if kind == "f64" and finite and not np.all(np.isfinite(arr)):
        raise FormatError("contains non-finite values", field)
    if kind == "u8" and np.any(arr > 1):
        raise FormatError("boolean array holds values other than 0/1", field)
    return arr


def write_manifest(directory, manifest: dict):
    text = json.dumps(manifest, indent=2, sort_keys=True) + "\n"
    with open(Path(directory) / MANIFEST, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_manifest(directory, expected_format) -> dict:
    path = Path(directory) / MANIFEST
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FormatError(f"no manifest at {path}", MANIFEST) from exc
    except UnicodeDecodeError as exc:
        raise FormatError(f"manifest is not UTF-8 ({exc})", MANIFEST) from exc
    try:
        manifest = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"manifest is not valid JSON ({exc})", MANIFEST) from exc
    if not isinstance(manifest, dict):
        raise FormatError("manifest must be a JSON object", MANIFEST)
    if manifest.get("format") != expected_format:
        raise FormatError(
            f"expected format {expected_format!r}, found {manifest.get('format')!r}",
            "format")
    if manifest.get("byte_order", "little") != "little":
        raise FormatError("only little-endian payloads are supported", "byte_order")
    return manifest


def _positive_int(manifest, key, minimum=1):
    value = manifest.get(key)
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise FormatError(f"must be an integer >= {minimum}, got {value!r}", key)
    return value


def grid_manifest(grid: VoxelGrid) -> dict:
    return {"dims": list(grid.dims), "V": grid.V,
            "coords": "row-major lattice, each axis mapped affinely onto [-1, 1]"}


def grid_from_manifest(manifest) -> VoxelGrid:
    dims = manifest.get("dims")
    if not isinstance(dims, list) or not dims or \
            any(isinstance(d, bool) or not isinstance(d, int) for d in dims):
        raise FormatError(f"must be a non-empty list of integers, got {dims!r}", "dims")
    try:
        grid = make_grid(dims)
    except InvalidArgumentError as exc:
        raise FormatError(str(exc), "dims") from exc
    if _positive_int(manifest, "V") != grid.V:
        raise FormatError(f"V={manifest['V']} but dims give {grid.V}", "V")
    return grid


# ---------------------------------------------------------------------------

def save_dataset(ds: Dataset, path, meta=None) -> None:
    """Write ``ds`` (and its truth, if any); ``meta`` is stored verbatim in the manifest."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    arrays = {"X": write_array(path, "X", ds.X), "Y": write_array(path, "Y", ds.Y)}
    if ds.truth is not None:
        t = ds.truth
        arrays["truth_beta"] = write_array(path, "truth_beta", t.beta)
        arrays["truth_alpha"] = write_array(path, "truth_alpha", t.alpha)
        arrays["truth_sigma2"] = write_array(path, "truth_sigma2", t.sigma2)
        arrays["truth_support"] = write_array(path, "truth_support", t.support, "u8")
        if t.noise is not None:
            arrays["truth_noise"] = write_array(path, "truth_noise", t.noise)
    manifest = {"format": "irrnn-dataset", "version": FORMAT_VERSION,
                "byte_order": "little", "element_type": "float64",
                "N": ds.N, "J": ds.J, "arrays": arrays, **grid_manifest(ds.grid)}
    if meta:
        manifest["meta"] = meta
    write_manifest(path, manifest)


def dataset_meta(path) -> dict:
    meta = read_manifest(path, "irrnn-dataset").get("meta", {})
    return meta if isinstance(meta, dict) else {}


def load_dataset(path) -> Dataset:
    path = Path(path)
    m = read_manifest(path, "irrnn-dataset")
    grid = grid_from_manifest(m)
    N = _positive_int(m, "N")
    J = _positive_int(m, "J")
    V = grid.V
    arrays = m.get("arrays")
    if not isinstance(arrays, dict) or "X" not in arrays or "Y" not in arrays:
        raise FormatError("must list at least X and Y", "arrays")
    X = read_array(path, arrays["X"], "X", (N, J))
    Y = read_array(path, arrays["Y"], "Y", (N, V))
    truth = None
    truth_keys = {"truth_beta", "truth_alpha", "truth_sigma2", "truth_support"}
    present = truth_keys & arrays.keys()
    if present and present != truth_keys:
        raise FormatError(f"incomplete ground truth, missing {sorted(truth_keys - present)}",
                          "arrays")
    if present:
        beta = read_array(path, arrays["truth_beta"], "truth_beta", (J, V))
        alpha = read_array(path, arrays["truth_alpha"], "truth_alpha", (N, V))
        sigma2 = read_array(path, arrays["truth_sigma2"], "truth_sigma2", (V,))
        support = read_array(path, arrays["truth_support"], "truth_support", (J, V))
        noise = None
        if "truth_noise" in arrays:
            noise = read_array(path, arrays["truth_noise"], "truth_noise", (N, V))
        try:
            truth = GroundTruth(beta, alpha, sigma2, support.astype(bool), noise)
        except InvalidArgumentError as exc:
            raise FormatError(str(exc), "truth") from exc
    return Dataset(grid, X, Y, truth)
