"""On-disk formats: the HSB1 hyperspectral bundle and parameter checkpoints.

Bundle layout (bit-exact): magic ``HSB1``, header length (u32 LE), the
header as canonical ``key = value`` text in a fixed order, then the
payloads declared by the header, each band-major little-endian float32.
An sha256 of the payload bytes is stored in the header and verified on
load. Writes are atomic (temp file + rename).
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ShapeError
from .hsi import HyperCube

_MAGIC = b"HSB1"
_HEADER_KEYS = (
    "version",
    "name",
    "k",
    "h",
    "w",
    "s",
    "dtype",
    "endian",
    "wavelength_start",
    "wavelength_end",
    "seed",
    "config_digest",
    "payloads",
    "payload_sha256",
)
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}


def atomic_write_bytes(path, payload: bytes) -> None:
    """Write-temp-then-rename so readers never observe a partial file."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-bundle-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class HsiBundle:
    """A cube plus optional clean twin and per-pixel labels, ready for disk."""

    cube: HyperCube
    clean: HyperCube | None = None
    labels: np.ndarray | None = None  # (s, H, W)
    seed: int | None = None
    config_digest: str = ""
    dtype: str = "f32"

    def __post_init__(self):
        if self.dtype not in _DTYPES:
            raise DataError(f"unknown dtype tag {self.dtype!r}")
        k, h, w = self.cube.data.shape
        np_dtype = _DTYPES[self.dtype]
        object.__setattr__(
            self,
            "cube",
            HyperCube(
                data=self.cube.data.astype(np_dtype).astype(np.float64),
                wavelengths=self.cube.wavelengths,
                name=self.cube.name,
            ),
        )
        if self.clean is not None:
            if self.clean.data.shape != (k, h, w):
                raise ShapeError("clean cube dims must match the noisy cube")
            object.__setattr__(
                self,
                "clean",
                HyperCube(
                    data=self.clean.data.astype(np_dtype).astype(np.float64),
                    wavelengths=self.clean.wavelengths,
                    name=self.clean.name,
                ),
            )
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.float64)
            if lab.ndim != 3 or lab.shape[1:] != (h, w):
                raise ShapeError(f"labels must be (s, {h}, {w}), got {lab.shape}")
            object.__setattr__(self, "labels", lab.astype(np_dtype).astype(np.float64))

    @property
    def label_dim(self) -> int:
        return 0 if self.labels is None else self.labels.shape[0]


def _payload_arrays(bundle: HsiBundle) -> list[tuple[str, np.ndarray]]:
    np_dtype = _DTYPES[bundle.dtype]
    out = [("cube", bundle.cube.data.astype(np_dtype))]
    if bundle.clean is not None:
        out.append(("clean", bundle.clean.data.astype(np_dtype)))
    if bundle.labels is not None:
        out.append(("labels", bundle.labels.astype(np_dtype)))
    return out


def write_bundle(bundle: HsiBundle, path) -> None:
    payloads = _payload_arrays(bundle)
    blob = b"".join(np.ascontiguousarray(a).tobytes() for _, a in payloads)
    wl = bundle.cube.wavelengths
    values = {
        "version": "1",
        "name": bundle.cube.name,
        "k": str(bundle.cube.k),
        "h": str(bundle.cube.height),
        "w": str(bundle.cube.width),
        "s": str(bundle.label_dim),
        "dtype": bundle.dtype,
        "endian": "little",
        "wavelength_start": "none" if wl is None else f"{wl[0]:.9g}",
        "wavelength_end": "none" if wl is None else f"{wl[-1]:.9g}",
        "seed": "none" if bundle.seed is None else str(bundle.seed),
        "config_digest": bundle.config_digest or "none",
        "payloads": ",".join(name for name, _ in payloads),
        "payload_sha256": hashlib.sha256(blob).hexdigest(),
    }
    header = "".join(f"{k} = {values[k]}\n" for k in _HEADER_KEYS).encode("utf-8")
    atomic_write_bytes(path, _MAGIC + struct.pack("<I", len(header)) + header + blob)


def read_bundle(path) -> HsiBundle:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != _MAGIC:
        raise DataError(f"{path}: not an HSB1 bundle")
    header_len = struct.unpack("<I", raw[4:8])[0]
    if len(raw) < 8 + header_len:
        raise DataError(f"{path}: truncated header")
    fields: dict[str, str] = {}
    for line in raw[8 : 8 + header_len].decode("utf-8").splitlines():
        if " = " not in line:
            raise DataError(f"{path}: malformed header line {line!r}")
        key, value = line.split(" = ", 1)
        fields[key] = value
    missing = [k for k in _HEADER_KEYS if k not in fields]
    if missing:
        raise DataError(f"{path}: header missing keys {missing}")
    if fields["dtype"] not in _DTYPES:
        raise DataError(f"{path}: unknown dtype {fields['dtype']!r}")
    if fields["endian"] != "little":
        raise DataError(f"{path}: unsupported endianness {fields['endian']!r}")
    np_dtype = _DTYPES[fields["dtype"]]
    k, h, w, s = (int(fields[x]) for x in ("k", "h", "w", "s"))
    names = fields["payloads"].split(",") if fields["payloads"] else []
    sizes = {"cube": k * h * w, "clean": k * h * w, "labels": s * h * w}
    for name in names:
        if name not in sizes:
            raise DataError(f"{path}: unknown payload {name!r}")
    expected = sum(sizes[n] for n in names) * np_dtype.itemsize
    blob = raw[8 + header_len :]
    if len(blob) != expected:
        raise DataError(f"{path}: payload truncated: expected {expected} bytes, found {len(blob)}")
    if hashlib.sha256(blob).hexdigest() != fields["payload_sha256"]:
        raise DataError(f"{path}: payload digest mismatch")

    wavelengths = None
    if fields["wavelength_start"] != "none":
        wavelengths = np.linspace(float(fields["wavelength_start"]), float(fields["wavelength_end"]), k)
    arrays: dict[str, np.ndarray] = {}
    offset = 0
    for name in names:
        nbytes = sizes[name] * np_dtype.itemsize
        arr = np.frombuffer(blob[offset : offset + nbytes], dtype=np_dtype)
        shape = (s, h, w) if name == "labels" else (k, h, w)
        arrays[name] = arr.reshape(shape).astype(np.float64)
        offset += nbytes

    cube = HyperCube(data=arrays["cube"], wavelengths=wavelengths, name=fields["name"])
    clean = None
    if "clean" in arrays:
        clean = HyperCube(data=arrays["clean"], wavelengths=wavelengths, name=fields["name"])
    return HsiBundle(
        cube=cube,
        clean=clean,
        labels=arrays.get("labels"),
        seed=None if fields["seed"] == "none" else int(fields["seed"]),
        config_digest="" if fields["config_digest"] == "none" else fields["config_digest"],
        dtype=fields["dtype"],
    )


# ---------------------------------------------------------------------------
# parameter checkpoints


def save_checkpoint(path, digest: str, arrays: dict[str, np.ndarray]) -> None:
    """Header (digest, tensor count), then per-tensor name, shape, LE float64."""
    chunks = [f"HCP1 {digest} {len(arrays)}\n".encode()]
    for name, arr in arrays.items():
        if any(ch.isspace() for ch in name):
            raise DataError(f"tensor name {name!r} may not contain whitespace")
        a = np.ascontiguousarray(arr, dtype="<f8")
        dims = ",".join(str(d) for d in a.shape)
        chunks.append(f"{name} {dims}\n".encode())
        chunks.append(a.tobytes())
    atomic_write_bytes(path, b"".join(chunks))


def load_checkpoint(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        raw = fh.read()
    newline = raw.find(b"\n")
    if newline < 0:
        raise DataError(f"{path}: missing checkpoint header")
    head = raw[:newline].decode("utf-8").split()
    if len(head) != 3 or head[0] != "HCP1":
        raise DataError(f"{path}: not an HCP1 checkpoint")
    digest, count = head[1], int(head[2])
    offset = newline + 1
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        newline = raw.find(b"\n", offset)
        if newline < 0:
            raise DataError(f"{path}: truncated tensor header")
        name, dims = raw[offset:newline].decode("utf-8").split(" ", 1)
        shape = tuple(int(d) for d in dims.split(",") if d)
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        offset = newline + 1
        if offset + nbytes > len(raw):
            raise DataError(
                f"{path}: tensor {name!r} truncated: expected {nbytes} bytes, "
                f"found {len(raw) - offset}"
            )
        arrays[name] = np.frombuffer(raw[offset : offset + nbytes], dtype="<f8").reshape(shape).copy()
        offset += nbytes
    if offset != len(raw):
        raise DataError(f"{path}: {len(raw) - offset} trailing bytes after payload")
    return digest, arrays
