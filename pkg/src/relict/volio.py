"""Loading, validation, and normalization of volumes, masks, and embeddings.

All loaded objects are immutable (frozen dataclasses over read-only numpy
arrays) and therefore safe to share across worker threads.

File formats
------------
NIfTI-1 volumes
    ``.nii`` or ``.nii.gz``; only ``dim[0] == 3`` is accepted, spacing comes
    from ``pixdim[1..3]``. Orientation beyond spacing is ignored: corpora are
    expected to be pre-aligned and pairs are compared voxel-for-voxel.
RVEC embedding files
    bytes 0-4 ASCII ``RVEC1``; bytes 5-8 unsigned 32-bit little-endian
    vector length; then that many IEEE-754 float32 little-endian values.
RMAP feature-map files
    ASCII ``RMAP1``; four u32 LE (channels, d, h, w); then channels*d*h*w
    float32 LE values in channel-major order.
Corpus manifests
    JSON ``{"role": "training", "entries": [{"id", "volume", "mask",
    "embedding", "feature_map"}]}``; relative paths resolve against the
    manifest's directory.

Voxel layout: ``Volume3D.voxels[i, j, k]`` indexes (x, y, z); the flat
on-disk order runs x fastest, matching NIfTI. All intensity arithmetic is
done in float64 regardless of the on-disk type.
"""

from __future__ import annotations

import gzip
import json
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConstantInputWarning,
    CorpusError,
    DataError,
    DegenerateInputError,
    DimensionError,
    FormatError,
)

__all__ = [
    "Volume3D",
    "SegmentationMask",
    "EmbeddingVector",
    "FeatureMap4D",
    "CorpusEntry",
    "Corpus",
    "load_volume",
    "write_volume",
    "load_mask",
    "write_mask",
    "load_embedding",
    "write_embedding",
    "load_feature_map",
    "write_feature_map",
    "load_corpus",
    "zscore_normalize",
]

RVEC_MAGIC = b"RVEC1"
RMAP_MAGIC = b"RMAP1"

# NIfTI-1 datatype codes we can read.
_NIFTI_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
    1024: np.int64,
    1280: np.uint64,
}


def _check_spacing(spacing) -> tuple[float, float, float]:
    sp = tuple(float(s) for s in spacing)
    if len(sp) != 3:
        raise DimensionError(f"spacing must have 3 components, got {len(sp)}")
    if not all(np.isfinite(s) and s > 0 for s in sp):
        raise DataError(f"spacing components must be positive finite, got {sp}")
    return sp


@dataclass(frozen=True, eq=False)
class Volume3D:
    """A dense 3D scalar grid with physical voxel spacing in millimeters."""

    id: str
    voxels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __eq__(self, other):
        if not isinstance(other, Volume3D):
            return NotImplemented
        return (
            self.id == other.id
            and self.spacing == other.spacing
            and np.array_equal(self.voxels, other.voxels)
        )

    def __post_init__(self):
        vox = np.asarray(self.voxels, dtype=np.float64)
        if vox.ndim != 3:
            raise DimensionError(f"volume {self.id!r}: expected 3 axes, got {vox.ndim}")
        if min(vox.shape) < 1:
            raise DimensionError(f"volume {self.id!r}: empty axis in dims {vox.shape}")
        if not np.all(np.isfinite(vox)):
            raise DataError(f"volume {self.id!r}: voxels contain NaN/Inf")
        vox = np.ascontiguousarray(vox)
        vox.setflags(write=False)
        object.__setattr__(self, "voxels", vox)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass(frozen=True, eq=False)
class SegmentationMask:
    """An integer-labeled grid aligned to a Volume3D; 0 is background."""

    id: str
    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    label_set: tuple[int, ...] = field(init=False)

    def __eq__(self, other):
        if not isinstance(other, SegmentationMask):
            return NotImplemented
        return (
            self.id == other.id
            and self.spacing == other.spacing
            and np.array_equal(self.labels, other.labels)
        )

    def __post_init__(self):
        lab = np.asarray(self.labels)
        if lab.ndim != 3:
            raise DimensionError(f"mask {self.id!r}: expected 3 axes, got {lab.ndim}")
        if not np.issubdtype(lab.dtype, np.integer):
            if not np.all(np.isfinite(lab)) or not np.all(lab == np.round(lab)):
                raise DataError(f"mask {self.id!r}: labels must be integers")
            lab = lab.astype(np.int64)
        else:
            lab = lab.astype(np.int64)
        if lab.min(initial=0) < 0:
            raise DataError(f"mask {self.id!r}: labels must be non-negative")
        lab = np.ascontiguousarray(lab)
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing))
        present = np.unique(lab)
        object.__setattr__(
            self, "label_set", tuple(int(v) for v in present if v != 0)
        )

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    """A flattened feature representation of one image."""

    id: str
    values: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.values, other.values)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 1 or vals.size < 1:
            raise DimensionError(f"embedding {self.id!r}: expected a non-empty vector")
        if not np.all(np.isfinite(vals)):
            raise DataError(f"embedding {self.id!r}: values contain NaN/Inf")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def dim(self) -> int:
        return self.values.size


@dataclass(frozen=True, eq=False)
class FeatureMap4D:
    """A channel-major stack of 3D feature grids (channels, d, h, w)."""

    id: str
    values: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, FeatureMap4D):
            return NotImplemented
        return self.id == other.id and np.array_equal(self.values, other.values)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 4:
            raise DimensionError(
                f"feature map {self.id!r}: expected 4 axes, got {vals.ndim}"
            )
        if min(vals.shape) < 1:
            raise DimensionError(f"feature map {self.id!r}: empty axis {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise DataError(f"feature map {self.id!r}: values contain NaN/Inf")
        vals = np.ascontiguousarray(vals)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape[1:]


@dataclass(frozen=True)
class CorpusEntry:
    id: str
    volume: Path
    mask: Path | None = None
    embedding: Path | None = None
    feature_map: Path | None = None


@dataclass(frozen=True)
class Corpus:
    """An ordered set of image entries with a training/synthetic role."""

    role: str
    entries: tuple[CorpusEntry, ...]

    def __post_init__(self):
        if self.role not in ("training", "synthetic"):
            raise CorpusError(f"role must be 'training' or 'synthetic', got {self.role!r}")
        object.__setattr__(self, "entries", tuple(self.entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.entries)

    def entry(self, image_id: str) -> CorpusEntry:
        for e in self.entries:
            if e.id == image_id:
                return e
        raise KeyError(image_id)


def _is_gzip(path: Path) -> bool:
    with open(path, "rb") as fh:
        return fh.read(2) == b"\x1f\x8b"


def _open_for_read(path: Path):
    return gzip.open(path, "rb") if _is_gzip(path) else open(path, "rb")


def _open_for_write(path: Path):
    if str(path).endswith(".gz"):
        # fixed mtime keeps written files byte-reproducible
        return gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0)
    return open(path, "wb")


def _read_nifti(path: Path):
    """Return (grid, spacing) for a 3D NIfTI-1 file; grid is float64 (nx,ny,nz)."""
    with _open_for_read(path) as fh:
        header = fh.read(348)
        if len(header) < 348:
            raise FormatError(f"{path}: truncated NIfTI header ({len(header)} bytes)")
        order = None
        for candidate in ("<", ">"):
            if struct.unpack(candidate + "i", header[0:4])[0] == 348:
                order = candidate
                break
        if order is None:
            raise FormatError(f"{path}: not a NIfTI-1 file (sizeof_hdr != 348)")
        magic = header[344:348]
        if magic == b"ni1\x00":
            raise FormatError(f"{path}: two-file NIfTI (.hdr/.img) is not supported")
        if magic != b"n+1\x00":
            raise FormatError(f"{path}: bad NIfTI magic {magic!r}")
        dim = struct.unpack(order + "8h", header[40:56])
        if dim[0] != 3:
            raise DimensionError(f"{path}: expected a 3D image, got dim[0]={dim[0]}")
        nx, ny, nz = int(dim[1]), int(dim[2]), int(dim[3])
        if min(nx, ny, nz) < 1:
            raise DimensionError(f"{path}: non-positive dims ({nx}, {ny}, {nz})")
        datatype, _bitpix = struct.unpack(order + "2h", header[70:74])
        if datatype not in _NIFTI_DTYPES:
            raise FormatError(f"{path}: unsupported NIfTI datatype code {datatype}")
        pixdim = struct.unpack(order + "8f", header[76:108])
        spacing = pixdim[1:4]
        (vox_offset,) = struct.unpack(order + "f", header[108:112])
        (scl_slope,) = struct.unpack(order + "f", header[112:116])
        (scl_inter,) = struct.unpack(order + "f", header[116:120])
        offset = int(round(vox_offset))
        if offset < 348:
            raise FormatError(f"{path}: vox_offset {offset} overlaps the header")
        skip = offset - 348
        if skip and len(fh.read(skip)) != skip:
            raise FormatError(f"{path}: file ends before vox_offset")
        dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(order)
        count = nx * ny * nz
        raw = fh.read(count * dtype.itemsize)
        got = len(raw) // dtype.itemsize
        if got != count:
            raise DimensionError(
                f"{path}: header dims ({nx}, {ny}, {nz}) need {count} voxel values, "
                f"file holds {got}"
            )
        data = np.frombuffer(raw, dtype=dtype).astype(np.float64)
    # NIfTI scaling convention: slope 0 means "no scaling stored"
    if np.isfinite(scl_slope) and scl_slope != 0.0:
        if scl_slope != 1.0 or scl_inter != 0.0:
            data = data * float(scl_slope) + float(scl_inter)
    grid = data.reshape((nx, ny, nz), order="F")
    return grid, spacing


def _strip_image_suffix(path: Path) -> str:
    name = path.name
    for suffix in (".nii.gz", ".nii", ".gz"):
        if name.endswith(suffix):
            return name[: -len(suffix)]
    return path.stem


def load_volume(path, image_id: str | None = None) -> Volume3D:
    """Load a 3D NIfTI-1 volume (optionally gzipped) as float64.

    Raises FormatError on malformed headers, DimensionError when the header
    and payload disagree or the image is not 3D, DataError on NaN/Inf voxels
    or non-positive spacing.
    """
    path = Path(path)
    grid, spacing = _read_nifti(path)
    return Volume3D(
        id=image_id if image_id is not None else _strip_image_suffix(path),
        voxels=grid,
        spacing=spacing,
    )


def _nifti_header(dims, spacing, datatype: int, bitpix: int) -> bytes:
    header = bytearray(348)
    struct.pack_into("<i", header, 0, 348)
    struct.pack_into("<8h", header, 40, 3, dims[0], dims[1], dims[2], 1, 1, 1, 1)
    struct.pack_into("<2h", header, 70, datatype, bitpix)
    struct.pack_into(
        "<8f", header, 76, 1.0, spacing[0], spacing[1], spacing[2], 0.0, 0.0, 0.0, 0.0
    )
    struct.pack_into("<f", header, 108, 352.0)  # vox_offset
    struct.pack_into("<f", header, 112, 1.0)  # scl_slope
    struct.pack_into("<f", header, 116, 0.0)  # scl_inter
    header[344:348] = b"n+1\x00"
    return bytes(header)


def write_volume(volume: Volume3D, path) -> None:
    """Write a volume as single-file NIfTI-1, float64, gzipped iff path ends .gz."""
    path = Path(path)
    header = _nifti_header(volume.dims, volume.spacing, datatype=64, bitpix=64)
    payload = volume.voxels.astype("<f8").tobytes(order="F")
    with _open_for_write(path) as fh:
        fh.write(header + b"\x00\x00\x00\x00" + payload)


def load_mask(path, mask_id: str | None = None) -> SegmentationMask:
    """Load an integer-labeled NIfTI-1 volume as a segmentation mask."""
    path = Path(path)
    grid, spacing = _read_nifti(path)
    if not np.all(grid == np.round(grid)):
        raise DataError(f"{path}: mask voxels are not integral")
    return SegmentationMask(
        id=mask_id if mask_id is not None else _strip_image_suffix(path),
        labels=grid.astype(np.int64),
        spacing=spacing,
    )


def write_mask(mask: SegmentationMask, path) -> None:
    """Write a mask as single-file NIfTI-1 int32."""
    path = Path(path)
    if mask.labels.max(initial=0) > np.iinfo(np.int32).max:
        raise DataError(f"mask {mask.id!r}: labels exceed int32 range")
    header = _nifti_header(mask.dims, mask.spacing, datatype=8, bitpix=32)
    payload = mask.labels.astype("<i4").tobytes(order="F")
    with _open_for_write(path) as fh:
        fh.write(header + b"\x00\x00\x00\x00" + payload)


def load_embedding(path, embedding_id: str | None = None) -> EmbeddingVector:
    """Load an RVEC embedding file."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:5] != RVEC_MAGIC:
        raise FormatError(f"{path}: bad RVEC magic {blob[:5]!r}")
    if len(blob) < 9:
        raise FormatError(f"{path}: truncated RVEC header")
    (dim,) = struct.unpack("<I", blob[5:9])
    if dim < 1:
        raise FormatError(f"{path}: RVEC declares dim {dim}")
    payload = blob[9:]
    if len(payload) != 4 * dim:
        raise DimensionError(
            f"{path}: RVEC declares {dim} values, payload holds {len(payload) // 4}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return EmbeddingVector(
        id=embedding_id if embedding_id is not None else path.stem, values=values
    )


def write_embedding(embedding: EmbeddingVector, path) -> None:
    """Write an RVEC file; values are stored as float32."""
    path = Path(path)
    payload = embedding.values.astype("<f4").tobytes()
    path.write_bytes(RVEC_MAGIC + struct.pack("<I", embedding.dim) + payload)


def load_feature_map(path, map_id: str | None = None) -> FeatureMap4D:
    """Load an RMAP feature-map file."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:5] != RMAP_MAGIC:
        raise FormatError(f"{path}: bad RMAP magic {blob[:5]!r}")
    if len(blob) < 21:
        raise FormatError(f"{path}: truncated RMAP header")
    channels, d, h, w = struct.unpack("<4I", blob[5:21])
    if min(channels, d, h, w) < 1:
        raise FormatError(f"{path}: RMAP declares empty shape ({channels},{d},{h},{w})")
    count = channels * d * h * w
    payload = blob[21:]
    if len(payload) != 4 * count:
        raise DimensionError(
            f"{path}: RMAP declares {count} values, payload holds {len(payload) // 4}"
        )
    values = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    return FeatureMap4D(
        id=map_id if map_id is not None else path.stem,
        values=values.reshape(channels, d, h, w),
    )


def write_feature_map(fmap: FeatureMap4D, path) -> None:
    """Write an RMAP file; values are stored as float32, channel-major."""
    path = Path(path)
    c, d, h, w = fmap.values.shape
    payload = fmap.values.astype("<f4").tobytes(order="C")
    path.write_bytes(RMAP_MAGIC + struct.pack("<4I", c, d, h, w) + payload)


def load_corpus(manifest_path) -> Corpus:
    """Load and validate a corpus manifest.

    Validation is atomic: ids must be unique and every referenced path must
    exist, otherwise CorpusError is raised and nothing is returned. Relative
    paths resolve against the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CorpusError(f"{manifest_path}: cannot parse manifest: {exc}") from exc
    if not isinstance(doc, dict) or "role" not in doc or "entries" not in doc:
        raise CorpusError(f"{manifest_path}: manifest needs 'role' and 'entries'")
    role = doc["role"]
    base = manifest_path.parent
    entries = []
    seen: set[str] = set()
    missing: list[str] = []
    for raw in doc["entries"]:
        if "id" not in raw or "volume" not in raw or raw["volume"] is None:
            raise CorpusError(f"{manifest_path}: every entry needs 'id' and 'volume'")
        image_id = str(raw["id"])
        if image_id in seen:
            raise CorpusError(f"{manifest_path}: duplicate id {image_id!r}")
        seen.add(image_id)

        def resolve(key):
            value = raw.get(key)
            if value is None:
                return None
            p = Path(value)
            if not p.is_absolute():
                p = base / p
            if not p.exists():
                missing.append(f"{image_id}:{key}={p}")
            return p

        entries.append(
            CorpusEntry(
                id=image_id,
                volume=resolve("volume"),
                mask=resolve("mask"),
                embedding=resolve("embedding"),
                feature_map=resolve("feature_map"),
            )
        )
    if missing:
        raise CorpusError(f"{manifest_path}: missing files: {', '.join(missing)}")
    return Corpus(role=role, entries=tuple(entries))


def zscore_normalize(volume: Volume3D) -> Volume3D:
    """Normalize intensities to mean 0, population std 1.

    A constant volume cannot be normalized; it maps to all zeros and a
    ConstantInputWarning is emitted so degenerate images still flow through
    the pipeline (and rank as anomalies) instead of aborting it.
    """
    if volume.voxels.size < 2:
        raise DegenerateInputError(
            f"volume {volume.id!r}: need at least 2 voxels to normalize"
        )
    mean = float(volume.voxels.mean())
    std = float(volume.voxels.std())
    if std == 0.0:
        warnings.warn(
            f"volume {volume.id!r} is constant; z-score normalization returns zeros",
            ConstantInputWarning,
            stacklevel=2,
        )
        out = np.zeros_like(volume.voxels)
    else:
        out = (volume.voxels - mean) / std
    return Volume3D(id=volume.id, voxels=out, spacing=volume.spacing)
