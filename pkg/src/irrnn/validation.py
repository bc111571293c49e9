"""Input checks shared by the estimators and the CLI."""
import numpy as np
from sklearn.utils import check_array

from .errors import InvalidArgumentError
from .grid import VoxelGrid, make_grid


def check_covariates(X):
    return check_array(X, dtype=np.float64, ensure_min_samples=1)


def check_images(Y, n_samples, grid=None):
    Y = check_array(Y, dtype=np.float64, ensure_min_samples=1)
    if Y.shape[0] != n_samples:
        raise InvalidArgumentError(f"Y has {Y.shape[0]} rows, X has {n_samples}")
    if grid is not None and Y.shape[1] != grid.V:
        raise InvalidArgumentError(f"Y has {Y.shape[1]} voxels, grid has {grid.V}")
    return Y


def as_grid(grid, n_voxels) -> VoxelGrid:
    """Accept a VoxelGrid, a dims sequence, or None (a 1-d line of voxels)."""
    if grid is None:
        return make_grid([n_voxels])
    if not isinstance(grid, VoxelGrid):
        grid = make_grid(grid)
    if grid.V != n_voxels:
        raise InvalidArgumentError(f"grid has {grid.V} voxels, images have {n_voxels}")
    return grid


def parse_dims(text):
    """'16,16,8' or '16x16x8' -> (16, 16, 8)."""
    parts = str(text).replace("x", ",").split(",")
    try:
        dims = tuple(int(p) for p in parts if p.strip())
    except ValueError as exc:
        raise InvalidArgumentError(f"cannot parse dims {text!r}") from exc
    make_grid(dims)
    return dims
