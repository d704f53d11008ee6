"""Raster, reference-map and change-map I/O, plus synthetic pair generation.

Arrays use band-interleaved (H, W, C) layout; reference maps and change maps
are (H, W). Three on-disk formats are supported so nothing here needs a
geospatial stack: multi-page float32 TIFF for rasters, a raw float32 tensor
format with a 16-byte header, and 8-bit PNG for binary / tri-state maps.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageSequence, UnidentifiedImageError

# Tri-state label codes. These double as the on-disk integer coding.
CHANGED = 1
UNCHANGED = 0
UNDEFINED = 255

# Raw tensor format: 16-byte header = magic + W + H + C (little-endian u32),
# followed by H*W*C float32 values in C order.
RAW_MAGIC = 0x46544343  # b"CCTF" read as little-endian u32
_RAW_HEADER = struct.Struct("<4I")

_RED = (255, 0, 0)
_GREEN = (0, 255, 0)
_GRAY = (128, 128, 128)


@dataclass(frozen=True, eq=False)
class ImageTensor:
    """A W x H x C raster held as an (H, W, C) float array, all values finite."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, np.newaxis]
        if arr.ndim != 3:
            raise ValueError(f"expected 2-D or 3-D image data, got ndim={arr.ndim}")
        if arr.shape[0] < 1 or arr.shape[1] < 1 or arr.shape[2] < 1:
            raise ValueError(f"empty image of shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        if not np.all(np.isfinite(arr)):
            raise ValueError("image contains NaN or Inf values")
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class ReferenceMap:
    """Tri-state ground truth: CHANGED / UNCHANGED / UNDEFINED per pixel."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"reference map must be 2-D, got ndim={arr.ndim}")
        valid = np.isin(arr, (CHANGED, UNCHANGED, UNDEFINED))
        if not valid.all():
            bad = np.unique(np.asarray(arr)[~valid])
            raise ValueError(f"reference map holds labels outside the coding: {bad}")
        object.__setattr__(self, "labels", arr.astype(np.uint8))

    @property
    def defined_mask(self) -> np.ndarray:
        return self.labels != UNDEFINED

    def count(self, label: int) -> int:
        return int(np.count_nonzero(self.labels == label))


@dataclass(frozen=True)
class ChangeRegion:
    """Rectangle whose content is replaced between the two acquisition times.

    ``content`` sets the second image's replacement: a constant fill value,
    "independent" (a fresh procedural field, unpredictable from the first
    image) or "invert" (negated first-image content, re-rendered in
    second-image style). ``t1_offset`` optionally brightens the first image
    inside the region, giving the pre-change object a distinctive local
    appearance.
    """

    x: int
    y: int
    width: int
    height: int
    content: float | str = "independent"
    t1_offset: float = 0.0

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("change region must have positive extent")
        if isinstance(self.content, str) and self.content not in ("independent", "invert"):
            raise ValueError(f"unknown region content mode: {self.content!r}")

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.height), slice(self.x, self.x + self.width)


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for a deterministic bi-temporal pair with known ground truth."""

    size: tuple[int, int, int]  # (W, H, C)
    style_gain: tuple[float, ...] = (1.0,)
    style_bias: tuple[float, ...] = (0.0,)
    noise_sigma: float = 0.0
    change_regions: tuple[ChangeRegion, ...] = field(default_factory=tuple)
    rng_seed: int = 0

    def __post_init__(self):
        w, h, c = self.size
        if w < 1 or h < 1 or c < 1:
            raise ValueError(f"invalid synthetic size {self.size}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        gain = _per_channel(self.style_gain, c, "style_gain")
        bias = _per_channel(self.style_bias, c, "style_bias")
        object.__setattr__(self, "style_gain", gain)
        object.__setattr__(self, "style_bias", bias)
        object.__setattr__(self, "change_regions", tuple(self.change_regions))
        occupancy = np.zeros((h, w), dtype=bool)
        for region in self.change_regions:
            if region.x < 0 or region.y < 0 or region.x + region.width > w or region.y + region.height > h:
                raise ValueError(f"change region {region} exceeds image bounds {w}x{h}")
            ys, xs = region.slices()
            if occupancy[ys, xs].any():
                raise ValueError(f"change region {region} overlaps another region")
            occupancy[ys, xs] = True


def _per_channel(values, channels: int, name: str) -> tuple[float, ...]:
    if np.isscalar(values):
        return (float(values),) * channels
    values = tuple(float(v) for v in values)
    if len(values) == 1:
        return values * channels
    if len(values) != channels:
        raise ValueError(f"{name} needs 1 or {channels} entries, got {len(values)}")
    return values


# ---------------------------------------------------------------------------
# Raster files
# ---------------------------------------------------------------------------

def load_raster(path: str | Path) -> ImageTensor:
    """Load a multi-band raster (.tif/.tiff multi-page or interleaved, .raw).

    Raises FileNotFoundError for a missing file and ValueError for
    undecodable payloads or bands of mismatched size.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"raster not found: {path}")
    if path.suffix.lower() == ".raw":
        return ImageTensor(_read_raw(path))
    try:
        with Image.open(path) as im:
            bands = [np.asarray(page, dtype=np.float32) for page in ImageSequence.Iterator(im)]
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"cannot decode raster {path}: {exc}") from exc
    if not bands:
        raise ValueError(f"raster {path} holds no bands")
    if len(bands) == 1:
        data = bands[0]
        if data.ndim == 2:
            data = data[:, :, np.newaxis]
    else:
        shapes = {b.shape for b in bands}
        if len(shapes) != 1 or bands[0].ndim != 2:
            raise ValueError(f"raster {path} has mismatched band dimensions: {sorted(shapes)}")
        data = np.stack(bands, axis=-1)
    return ImageTensor(data)


def save_raster(image: ImageTensor, path: str | Path) -> None:
    """Write a raster as multi-page float32 TIFF or the raw tensor format."""
    path = Path(path)
    data = image.data.astype(np.float32)
    if path.suffix.lower() == ".raw":
        _write_raw(data, path)
        return
    if path.suffix.lower() not in (".tif", ".tiff"):
        raise ValueError(f"unsupported raster extension: {path.suffix!r}")
    frames = [Image.fromarray(data[:, :, c], mode="F") for c in range(data.shape[2])]
    frames[0].save(path, save_all=True, append_images=frames[1:])


def _read_raw(path: Path) -> np.ndarray:
    blob = path.read_bytes()
    if len(blob) < _RAW_HEADER.size:
        raise ValueError(f"raw tensor file {path} is truncated")
    magic, width, height, channels = _RAW_HEADER.unpack_from(blob)
    if magic != RAW_MAGIC:
        raise ValueError(f"raw tensor file {path} has bad magic {magic:#x}")
    expected = height * width * channels * 4
    payload = blob[_RAW_HEADER.size:]
    if len(payload) != expected:
        raise ValueError(f"raw tensor file {path}: expected {expected} payload bytes, found {len(payload)}")
    data = np.frombuffer(payload, dtype="<f4").reshape(height, width, channels)
    return data.copy()


def _write_raw(data: np.ndarray, path: Path) -> None:
    h, w, c = data.shape
    header = _RAW_HEADER.pack(RAW_MAGIC, w, h, c)
    path.write_bytes(header + np.ascontiguousarray(data, dtype="<f4").tobytes())


# ---------------------------------------------------------------------------
# Reference maps
# ---------------------------------------------------------------------------

def load_reference_map(path: str | Path, encoding: str = "color") -> ReferenceMap:
    """Load a tri-state reference map from an 8-bit PNG.

    ``encoding`` is "color" (red=changed, green=unchanged, anything else
    undefined) or "integer" (1=changed, 0=unchanged, anything else undefined).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"reference map not found: {path}")
    try:
        with Image.open(path) as im:
            if encoding == "color":
                arr = np.asarray(im.convert("RGB"))
            else:
                arr = np.asarray(im.convert("L"))
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"cannot decode reference map {path}: {exc}") from exc

    labels = np.full(arr.shape[:2], UNDEFINED, dtype=np.uint8)
    if encoding == "color":
        labels[np.all(arr == _RED, axis=-1)] = CHANGED
        labels[np.all(arr == _GREEN, axis=-1)] = UNCHANGED
    elif encoding == "integer":
        labels[arr == CHANGED] = CHANGED
        labels[arr == UNCHANGED] = UNCHANGED
    else:
        raise ValueError(f"unknown reference encoding: {encoding!r}")
    return ReferenceMap(labels)


def save_reference_map(ref: ReferenceMap, path: str | Path, encoding: str = "color") -> None:
    path = Path(path)
    if encoding == "color":
        rgb = np.empty(ref.labels.shape + (3,), dtype=np.uint8)
        rgb[:] = _GRAY
        rgb[ref.labels == CHANGED] = _RED
        rgb[ref.labels == UNCHANGED] = _GREEN
        Image.fromarray(rgb).save(path)
    elif encoding == "integer":
        Image.fromarray(ref.labels, mode="L").save(path)
    else:
        raise ValueError(f"unknown reference encoding: {encoding!r}")


# ---------------------------------------------------------------------------
# Change maps
# ---------------------------------------------------------------------------

def save_change_map(mask: np.ndarray, path: str | Path) -> None:
    """Write a change-probability (or binary) map.

    .png quantizes to 8 bit (quantum 1/255, exact for {0,1} maps); .tif keeps
    float32; .raw uses the raw tensor format. Values must lie in [0, 1].
    """
    mask = np.asarray(mask)
    if mask.ndim != 2 or mask.size == 0:
        raise ValueError(f"change map must be a non-empty 2-D array, got shape {mask.shape}")
    mask = mask.astype(np.float32)
    if not np.all(np.isfinite(mask)) or mask.min() < 0.0 or mask.max() > 1.0:
        raise ValueError("change map values must be finite and within [0, 1]")
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".png":
        Image.fromarray(np.round(mask * 255.0).astype(np.uint8), mode="L").save(path)
    elif suffix in (".tif", ".tiff"):
        Image.fromarray(mask, mode="F").save(path)
    elif suffix == ".raw":
        _write_raw(mask[:, :, np.newaxis], path)
    else:
        raise ValueError(f"unsupported change map extension: {path.suffix!r}")


def load_change_map(path: str | Path) -> np.ndarray:
    """Load a change map saved by :func:`save_change_map` as float32 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"change map not found: {path}")
    if path.suffix.lower() == ".png":
        with Image.open(path) as im:
            return np.asarray(im.convert("L"), dtype=np.float32) / 255.0
    if path.suffix.lower() in (".tif", ".tiff"):
        with Image.open(path) as im:
            return np.asarray(im, dtype=np.float32)
    if path.suffix.lower() == ".raw":
        return _read_raw(path)[:, :, 0]
    raise ValueError(f"unsupported change map extension: {path.suffix!r}")


# ---------------------------------------------------------------------------
# Synthetic pairs
# ---------------------------------------------------------------------------

def make_synthetic_pair(spec: SyntheticSpec) -> tuple[ImageTensor, ImageTensor, ReferenceMap]:
    """Build a deterministic bi-temporal pair with a known change map.

    The first image is smooth procedural content; the second applies the
    per-channel affine style shift plus Gaussian noise, except inside the
    change regions where the content itself is replaced.
    """
    w, h, c = spec.size
    rng = np.random.default_rng(spec.rng_seed)

    # float32 throughout so the no-noise style relation holds bit-exactly
    t1 = _procedural_content(rng, h, w, c).astype(np.float32)
    for region in spec.change_regions:
        if region.t1_offset:
            ys, xs = region.slices()
            t1[ys, xs] += np.float32(region.t1_offset)
    gain = np.asarray(spec.style_gain, dtype=np.float32)
    bias = np.asarray(spec.style_bias, dtype=np.float32)
    t2 = t1 * gain + bias

    labels = np.full((h, w), UNCHANGED, dtype=np.uint8)
    for region in spec.change_regions:
        ys, xs = region.slices()
        if region.content == "independent":
            fresh = _procedural_content(rng, region.height, region.width, c).astype(np.float32)
            t2[ys, xs] = fresh * gain + bias
        elif region.content == "invert":
            t2[ys, xs] = -t1[ys, xs] * gain + bias
        else:
            t2[ys, xs] = np.float32(region.content)
        labels[ys, xs] = CHANGED

    if spec.noise_sigma > 0:
        t2 = t2 + rng.normal(0.0, spec.noise_sigma, size=t2.shape).astype(np.float32)

    return ImageTensor(t1), ImageTensor(t2), ReferenceMap(labels)


def _procedural_content(rng: np.random.Generator, h: int, w: int, channels: int) -> np.ndarray:
    """Multi-scale smooth random fields, correlated across channels."""
    shared = _smooth_field(rng, h, w)
    out = np.empty((h, w, channels), dtype=np.float64)
    for ch in range(channels):
        out[:, :, ch] = 0.75 * shared + 0.5 * _smooth_field(rng, h, w)
    return out


def _smooth_field(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    field = np.zeros((h, w), dtype=np.float64)
    for cells, amplitude in ((3, 1.0), (6, 0.5), (12, 0.25)):
        coarse = rng.normal(size=(cells + 1, cells + 1))
        field += amplitude * _bilinear_upsample(coarse, h, w)
    return field


def _bilinear_upsample(coarse: np.ndarray, h: int, w: int) -> np.ndarray:
    cells_y = coarse.shape[0] - 1
    cells_x = coarse.shape[1] - 1
    ys = np.linspace(0.0, cells_y, h) if h > 1 else np.zeros(1)
    xs = np.linspace(0.0, cells_x, w) if w > 1 else np.zeros(1)
    y0 = np.minimum(ys.astype(int), cells_y - 1) if cells_y else np.zeros(h, dtype=int)
    x0 = np.minimum(xs.astype(int), cells_x - 1) if cells_x else np.zeros(w, dtype=int)
    fy = (ys - y0)[:, np.newaxis]
    fx = (xs - x0)[np.newaxis, :]
    top = coarse[y0][:, x0] * (1 - fx) + coarse[y0][:, x0 + 1] * fx
    bottom = coarse[y0 + 1][:, x0] * (1 - fx) + coarse[y0 + 1][:, x0 + 1] * fx
    return top * (1 - fy) + bottom * fy
