"""Core hyperspectral data types and patch extraction.

A cube is stored band-major as a (k, H, W) float array so that spectral
operators touch contiguous band images. Patches are (k, S, S) windows
labeled with the mean of a per-pixel label field over the window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

ABUNDANCE_SUM_TOL = 1e-6


@dataclass(frozen=True)
class HyperCube:
    """A (k, H, W) reflectance volume with optional wavelength metadata (micrometers)."""

    data: np.ndarray
    wavelengths: np.ndarray | None = None
    name: str = "cube"

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeError(f"cube must be (k, H, W) with positive dims, got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("cube contains non-finite values")
        if self.wavelengths is not None:
            wl = np.asarray(self.wavelengths, dtype=np.float64)
            object.__setattr__(self, "wavelengths", wl)
            if wl.ndim != 1 or wl.size != arr.shape[0]:
                raise ShapeError(f"wavelengths must have length k={arr.shape[0]}")
            if not np.all(np.diff(wl) > 0):
                raise ShapeError("wavelengths must be strictly increasing")

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True)
class LabelVector:
    """Regression target with s components; abundance labels live on the simplex."""

    values: np.ndarray
    is_abundance: bool = False

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 1 or arr.size < 1:
            raise ShapeError(f"label must be a non-empty vector, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("label contains non-finite values")
        if self.is_abundance:
            if arr.min() < 0.0 or arr.max() > 1.0:
                raise ShapeError("abundance label components must lie in [0, 1]")
            if abs(arr.sum() - 1.0) > ABUNDANCE_SUM_TOL:
                raise ShapeError(f"abundance label sums to {arr.sum():.9f}, not 1")

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Patch:
    """A (k, S, S) window of a cube, anchored at `origin` = (row, col)."""

    data: np.ndarray
    origin: tuple[int, int]
    label: LabelVector

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        object.__setattr__(self, "data", arr)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[1] < 1:
            raise ShapeError(f"patch must be (k, S, S), got {arr.shape}")

    @property
    def k(self) -> int:
        return self.data.shape[0]

    @property
    def size(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "Patch":
        """Same origin and label, new values (used by augmentation)."""
        return Patch(data=data, origin=self.origin, label=self.label)


@dataclass(frozen=True)
class PatchSet:
    """Ordered patches sharing k, S and label dimension."""

    patches: tuple[Patch, ...]
    source_name: str = ""
    stride: int = 1

    def __post_init__(self):
        object.__setattr__(self, "patches", tuple(self.patches))
        if self.patches:
            k = self.patches[0].k
            s = self.patches[0].size
            d = self.patches[0].label.dim
            for p in self.patches:
                if p.k != k or p.size != s or p.label.dim != d:
                    raise ShapeError("patches in a set must share k, S, and label dimension")

    def __len__(self) -> int:
        return len(self.patches)

    def __getitem__(self, i: int) -> Patch:
        return self.patches[i]

    @property
    def patch_size(self) -> int:
        return self.patches[0].size

    @property
    def k(self) -> int:
        return self.patches[0].k

    @property
    def label_dim(self) -> int:
        return self.patches[0].label.dim

    def data_array(self) -> np.ndarray:
        """(n, k, S, S) stack of patch values."""
        return np.stack([p.data for p in self.patches])

    def labels_array(self) -> np.ndarray:
        """(n, s) stack of labels."""
        return np.stack([p.label.values for p in self.patches])

    def subset(self, indices) -> "PatchSet":
        return PatchSet(
            patches=tuple(self.patches[i] for i in indices),
            source_name=self.source_name,
            stride=self.stride,
        )


def patch_label(window: np.ndarray, is_abundance: bool = False) -> LabelVector:
    """Mean label over an (s, S, S) window of per-pixel label vectors."""
    arr = np.asarray(window)
    if arr.dtype == object or arr.ndim != 3:
        raise ShapeError("label window must be a dense (s, S, S) array")
    if arr.shape[1] == 0 or arr.shape[2] == 0:
        raise ShapeError("label window must be non-empty")
    mean = arr.astype(np.float64).mean(axis=(1, 2))
    return LabelVector(values=mean, is_abundance=is_abundance)


def extract_patches(
    cube: HyperCube,
    label_field: np.ndarray,
    patch_size: int,
    stride: int,
    is_abundance: bool = False,
) -> PatchSet:
    """Tile the cube with (k, S, S) windows at the given stride.

    `label_field` is (s, H, W); each patch's label is the window mean.
    Origins run row-major: (0,0), (0,stride), ... Count per axis is
    floor((extent - S) / stride) + 1.
    """
    if patch_size < 1 or stride < 1:
        raise ShapeError("patch_size and stride must be positive")
    k, h, w = cube.data.shape
    if patch_size > min(h, w):
        raise ShapeError(f"patch size {patch_size} exceeds cube extent {h}x{w}")
    lf = np.asarray(label_field, dtype=np.float64)
    if lf.ndim != 3 or lf.shape[1] != h or lf.shape[2] != w:
        raise ShapeError(f"label field must be (s, {h}, {w}), got {lf.shape}")

    patches = []
    for r in range(0, h - patch_size + 1, stride):
        for c in range(0, w - patch_size + 1, stride):
            window = cube.data[:, r : r + patch_size, c : c + patch_size].copy()
            label = patch_label(lf[:, r : r + patch_size, c : c + patch_size], is_abundance)
            patches.append(Patch(data=window, origin=(r, c), label=label))
    return PatchSet(patches=tuple(patches), source_name=cube.name, stride=stride)


def patch_grid_count(h: int, w: int, patch_size: int, stride: int) -> int:
    """Number of windows extract_patches will produce."""
    return ((h - patch_size) // stride + 1) * ((w - patch_size) // stride + 1)
