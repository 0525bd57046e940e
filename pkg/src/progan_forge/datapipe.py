"""Dataset ingestion, augmentation, resolution stores, synthetic corpora.

Source imagery follows the ``<River>_<Year>_<Index>.jpg`` convention and
may be lossy-compressed; every pipeline *output* (augmented variants,
resolution folders, masks) is written as lossless PNG so downstream
numeric checks stay exact.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

MIN_RESOLUTION = 4
STYLES = ("desert", "lush", "moderate")


class FilenameError(ValueError):
    pass


class ImageSizeError(ValueError):
    pass


@dataclass
class ImageRecord:
    river: str
    year: int
    index: int
    path: str = ""
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if not self.river:
            raise FilenameError("river name must be non-empty")
        if not 1000 <= self.year <= 9999:
            raise FilenameError(f"year must be 4 digits, got {self.year}")
        if self.index < 0:
            raise FilenameError(f"index must be >= 0, got {self.index}")
        for dim, val in (("width", self.width), ("height", self.height)):
            if val is not None and val < 1:
                raise ImageSizeError(f"{dim} must be >= 1, got {val}")


def parse_filename(name: str) -> ImageRecord:
    """Parse ``<River>_<Year>_<Index>.jpg``; the river part may itself
    contain underscores, so year and index bind from the right."""
    stem, dot, ext = name.rpartition(".")
    if not dot or ext.lower() != "jpg":
        raise FilenameError(f"{name!r}: extension must be .jpg")
    parts = stem.rsplit("_", 2)
    if len(parts) != 3:
        raise FilenameError(
            f"{name!r}: expected <River>_<Year>_<Index>.jpg, missing segments"
        )
    river, year_s, index_s = parts
    if not river:
        raise FilenameError(f"{name!r}: river segment is empty")
    if not (len(year_s) == 4 and year_s.isdigit()):
        raise FilenameError(f"{name!r}: year segment {year_s!r} must be 4 digits")
    if not index_s.isdigit():
        raise FilenameError(f"{name!r}: index segment {index_s!r} must be digits")
    index = int(index_s)
    if index_s != str(index).zfill(4):
        raise FilenameError(
            f"{name!r}: index segment {index_s!r} is not canonically zero-padded"
        )
    return ImageRecord(river=river, year=int(year_s), index=index)


def format_filename(record: ImageRecord) -> str:
    return f"{record.river}_{record.year:04d}_{str(record.index).zfill(4)}.jpg"


def load_rgb(path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


def save_png(path, image: np.ndarray) -> None:
    Image.fromarray(image).save(path, format="PNG")


MANIFEST_HEADER = ["path", "river", "year", "index", "width", "height"]


def build_manifest(src_dir) -> list[ImageRecord]:
    """Scan a directory of convention-named images, reading dimensions."""
    records = []
    for path in sorted(Path(src_dir).glob("*.jpg")):
        rec = parse_filename(path.name)
        with Image.open(path) as img:
            rec.width, rec.height = img.size
        rec.path = str(path)
        records.append(rec)
    return records


def save_manifest(path, records) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_HEADER)
        for r in records:
            writer.writerow([r.path, r.river, r.year, r.index, r.width, r.height])


def load_manifest(path) -> list[ImageRecord]:
    base = Path(path).parent
    records = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_HEADER:
            raise ValueError(f"{path}: manifest header must be {','.join(MANIFEST_HEADER)}")
        for row in reader:
            rec_path = row["path"]
            if rec_path and not Path(rec_path).is_absolute():
                rec_path = str(base / rec_path)  # manifests may be relocatable
            records.append(
                ImageRecord(
                    river=row["river"],
                    year=int(row["year"]),
                    index=int(row["index"]),
                    path=rec_path,
                    width=int(row["width"]),
                    height=int(row["height"]),
                )
            )
    return records


def center_crop(image: np.ndarray, size: int) -> np.ndarray:
    """Crop a size*size window centred on the pixel midpoint."""
    h, w = image.shape[:2]
    if h < size or w < size:
        raise ImageSizeError(f"image {w}x{h} is smaller than crop size {size}")
    oy = (h - size) // 2
    ox = (w - size) // 2
    return image[oy : oy + size, ox : ox + size]


def box_downsample2x(image: np.ndarray) -> np.ndarray:
    """2x2 box mean with round-half-even quantization back to uint8."""
    h, w = image.shape[:2]
    if h % 2 or w % 2:
        raise ImageSizeError(f"box downsample needs even size, got {w}x{h}")
    acc = image.reshape(h // 2, 2, w // 2, 2, -1).astype(np.float64).mean(axis=(1, 3))
    return np.rint(acc).astype(np.uint8).reshape(h // 2, w // 2, *image.shape[2:])


class ResolutionStore:
    """On-disk folders of power-of-two square PNGs: ``<root>/<res>/<name>.png``."""

    def __init__(self, root):
        self.root = Path(root)

    @property
    def resolutions(self) -> set[int]:
        if not self.root.is_dir():
            return set()
        return {int(p.name) for p in self.root.iterdir() if p.is_dir() and p.name.isdigit()}

    def counts(self) -> dict:
        return {r: len(self.paths(r)) for r in sorted(self.resolutions)}

    def paths(self, resolution: int) -> list[Path]:
        folder = self.root / str(resolution)
        if not folder.is_dir():
            raise FileNotFoundError(f"store has no folder for resolution {resolution}")
        return sorted(folder.glob("*.png"))

    def load_images(self, resolution: int) -> np.ndarray:
        paths = self.paths(resolution)
        if not paths:
            raise FileNotFoundError(f"resolution folder {resolution} is empty")
        out = np.stack([load_rgb(p) for p in paths])
        if out.shape[1:] != (resolution, resolution, 3):
            raise ImageSizeError(
                f"folder {resolution} holds images of shape {out.shape[1:]}"
            )
        return out

    def write(self, resolution: int, stem: str, image: np.ndarray) -> Path:
        folder = self.root / str(resolution)
        folder.mkdir(parents=True, exist_ok=True)
        path = folder / f"{stem}.png"
        save_png(path, image)
        return path


def pyramid_resolutions(max_resolution: int) -> list[int]:
    if max_resolution < MIN_RESOLUTION or max_resolution & (max_resolution - 1):
        raise ValueError(f"max resolution must be a power of two >= {MIN_RESOLUTION}")
    out = []
    r = max_resolution
    while r >= MIN_RESOLUTION:
        out.append(r)
        r //= 2
    return out[::-1]


def build_resolution_store(
    manifest, target_root, max_resolution: int, mode: str = "downsample"
) -> ResolutionStore:
    """Write folders 4..max for every manifest entry.

    ``downsample`` builds a box-mean pyramid from the max-resolution
    centre crop; ``crop`` (the literal protocol) centre-crops each
    resolution directly out of that crop.
    """
    if mode not in ("downsample", "crop"):
        raise ValueError(f"unknown mode {mode!r}")
    store = ResolutionStore(target_root)
    resolutions = pyramid_resolutions(max_resolution)
    for rec in manifest:
        image = load_rgb(rec.path)
        stem = Path(rec.path).stem
        crop = center_crop(image, max_resolution)
        if mode == "downsample":
            current = crop
            for res in resolutions[::-1]:
                store.write(res, stem, current)
                if res > MIN_RESOLUTION:
                    current = box_downsample2x(current)
        else:
            for res in resolutions:
                store.write(res, stem, center_crop(crop, res))
    return store


# ---------------------------------------------------------------------------
# augmentation


@dataclass(frozen=True)
class AugmentSpec:
    """Parameter ranges for the nine-transform suite."""

    crops: int = 2
    crop_range: tuple = (0.80, 0.95)
    hue_delta: float = 0.1
    saturation_delta: float = 0.2
    noise_sigma: tuple = (0.01, 0.05)
    affine_limit: float = 0.1
    rotations: int = 3
    rotation_limit: float = 25.0
    seed: int = 0

    @property
    def n_outputs(self) -> int:
        # crops + hue/sat + dihedral + noise + affine + rotations
        return self.crops + 1 + 1 + 1 + 1 + self.rotations


def dihedral(image: np.ndarray, element: int) -> np.ndarray:
    """One of the 8 symmetries of the square: optional horizontal flip,
    then ``element % 4`` quarter-turns."""
    if not 0 <= element <= 7:
        raise ValueError(f"element must be in 0..7, got {element}")
    out = image
    if element >= 4:
        out = np.fliplr(out)
    k = element % 4
    if k:
        out = np.rot90(out, k)
    return np.ascontiguousarray(out)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = rgb.max(axis=-1)
    minc = rgb.min(axis=-1)
    v = maxc
    span = maxc - minc
    s = np.where(maxc > 0, span / np.where(maxc > 0, maxc, 1), 0.0)
    safe = np.where(span > 0, span, 1)
    rc = (maxc - r) / safe
    gc = (maxc - g) / safe
    bc = (maxc - b) / safe
    h = np.where(maxc == r, bc - gc, np.where(maxc == g, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(span > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0)
    f = h * 6.0 - i
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))
    i = i.astype(int) % 6
    choices = [
        np.stack([v, t, p], -1),
        np.stack([q, v, p], -1),
        np.stack([p, v, t], -1),
        np.stack([p, q, v], -1),
        np.stack([t, p, v], -1),
        np.stack([v, p, q], -1),
    ]
    out = np.empty(hsv.shape, dtype=hsv.dtype)
    for k in range(6):
        out[i == k] = choices[k][i == k]
    return out


def _to_u8(arr: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(arr), 0, 255).astype(np.uint8)


def _random_crop_resize(image, rng, lo, hi):
    h, w = image.shape[:2]
    factor = rng.uniform(lo, hi)
    ch = max(1, round(h * factor))
    cw = max(1, round(w * factor))
    oy = int(rng.integers(0, h - ch + 1))
    ox = int(rng.integers(0, w - cw + 1))
    patch = Image.fromarray(image[oy : oy + ch, ox : ox + cw])
    return np.asarray(patch.resize((w, h), Image.BILINEAR))


def _hue_saturation(image, rng, hue_delta, sat_delta):
    hsv = rgb_to_hsv(image.astype(np.float64) / 255.0)
    hsv[..., 0] = (hsv[..., 0] + rng.uniform(-hue_delta, hue_delta)) % 1.0
    hsv[..., 1] = np.clip(hsv[..., 1] + rng.uniform(-sat_delta, sat_delta), 0.0, 1.0)
    return _to_u8(hsv_to_rgb(hsv) * 255.0)


def _gaussian_noise(image, rng, sigma_lo, sigma_hi):
    sigma = rng.uniform(sigma_lo, sigma_hi) * 255.0
    noisy = image.astype(np.float64) + rng.normal(0.0, sigma, image.shape)
    return _to_u8(noisy)


def _affine(image, rng, limit):
    h, w = image.shape[:2]
    sx, sy = rng.uniform(-limit, limit, 2)
    tx = rng.uniform(-limit, limit) * w
    ty = rng.uniform(-limit, limit) * h
    # map output coords to input coords around the image centre
    matrix = np.array([[1.0, sy], [sx, 1.0]])
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    offset = centre - matrix @ centre + np.array([ty, tx])
    out = np.empty_like(image)
    for c in range(image.shape[2]):
        out[..., c] = ndimage.affine_transform(
            image[..., c].astype(np.float64), matrix, offset=offset, order=1, mode="reflect"
        ).round()
    return np.clip(out, 0, 255)


def _rotate(image, rng, limit):
    angle = rng.uniform(-limit, limit)
    rot = ndimage.rotate(
        image.astype(np.float64), angle, axes=(0, 1), reshape=False, order=1, mode="reflect"
    )
    return _to_u8(rot)


def augment(image: np.ndarray, spec: AugmentSpec) -> list[np.ndarray]:
    """Apply the transform suite; deterministic given ``spec.seed``."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageSizeError(f"expected HWC RGB image, got shape {image.shape}")
    rng = np.random.default_rng(spec.seed)
    out = []
    lo, hi = spec.crop_range
    for _ in range(spec.crops):
        out.append(_random_crop_resize(image, rng, lo, hi))
    out.append(_hue_saturation(image, rng, spec.hue_delta, spec.saturation_delta))
    out.append(dihedral(image, int(rng.integers(0, 8))))
    out.append(_gaussian_noise(image, rng, *spec.noise_sigma))
    out.append(_affine(image, rng, spec.affine_limit))
    for _ in range(spec.rotations):
        out.append(_rotate(image, rng, spec.rotation_limit))
    return out


class Augmenter:
    """Stateless transformer wrapper around :func:`augment`."""

    def __init__(self, spec: AugmentSpec | None = None):
        self.spec = spec or AugmentSpec()

    def get_params(self) -> dict:
        return {"spec": self.spec}

    def transform(self, image: np.ndarray, seed: int | None = None) -> list[np.ndarray]:
        spec = self.spec if seed is None else replace(self.spec, seed=seed)
        return augment(image, spec)


def augment_corpus(manifest, out_dir, spec: AugmentSpec, n_jobs: int = 1) -> int:
    """Write each source image plus its variants as PNG; returns file count.

    Per-image randomness derives from (spec.seed, manifest position), so
    the corpus is reproducible regardless of parallelism.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def one(i, rec):
        image = load_rgb(rec.path)
        stem = Path(rec.path).stem
        save_png(out_dir / f"{stem}_orig.png", image)
        child_seed = np.random.SeedSequence(entropy=[spec.seed, i])
        variants = augment(image, replace(spec, seed=child_seed))
        for k, variant in enumerate(variants):
            save_png(out_dir / f"{stem}_aug{k}.png", variant)
        return 1 + len(variants)

    if n_jobs != 1:
        from joblib import Parallel, delayed

        counts = Parallel(n_jobs=n_jobs)(
            delayed(one)(i, rec) for i, rec in enumerate(manifest)
        )
    else:
        counts = [one(i, rec) for i, rec in enumerate(manifest)]
    return int(sum(counts))


# ---------------------------------------------------------------------------
# synthetic river corpus


STYLE_PALETTES = {
    # (background a, background b, river colour)
    "desert": ((208, 186, 138), (174, 146, 96), (168, 196, 210)),
    "lush": ((26, 58, 22), (52, 88, 40), (18, 34, 52)),
    "moderate": ((88, 120, 58), (122, 108, 70), (62, 96, 118)),
}


def _value_noise(rng, size: int) -> np.ndarray:
    """Smooth [0,1] field: bilinearly upsampled coarse grids, two octaves."""
    field_sum = np.zeros((size, size))
    total = 0.0
    for cells, weight in ((max(2, size // 8), 1.0), (max(2, size // 3), 0.4)):
        grid = rng.random((cells + 1, cells + 1))
        ys = np.linspace(0, cells, size)
        xs = np.linspace(0, cells, size)
        y0 = np.minimum(ys.astype(int), cells - 1)
        x0 = np.minimum(xs.astype(int), cells - 1)
        fy = (ys - y0)[:, None]
        fx = (xs - x0)[None, :]
        g00 = grid[np.ix_(y0, x0)]
        g01 = grid[np.ix_(y0, x0 + 1)]
        g10 = grid[np.ix_(y0 + 1, x0)]
        g11 = grid[np.ix_(y0 + 1, x0 + 1)]
        layer = (
            g00 * (1 - fy) * (1 - fx)
            + g01 * (1 - fy) * fx
            + g10 * fy * (1 - fx)
            + g11 * fy * fx
        )
        field_sum += weight * layer
        total += weight
    return field_sum / total


def synth_river(seed: int, resolution: int, style: str | None = None):
    """Procedural overhead river scene.

    Returns ``(image, mask)``: a uint8 HWC image and the boolean river
    mask. The channel is a sum of 2-4 sinusoids with bounded slope, so
    the mask is always one 8-connected component crossing the frame.
    """
    if resolution < MIN_RESOLUTION or resolution & (resolution - 1):
        raise ValueError(f"resolution must be a power of two >= {MIN_RESOLUTION}")
    rng = np.random.default_rng(seed)
    if style is None:
        style = STYLES[int(rng.integers(0, len(STYLES)))]
    if style not in STYLE_PALETTES:
        raise ValueError(f"unknown style {style!r} (expected one of {STYLES})")
    size = resolution

    bg_a, bg_b, river_rgb = (np.array(c, dtype=np.float64) for c in STYLE_PALETTES[style])
    shade = _value_noise(rng, size)[..., None]
    image = bg_a * (1.0 - shade) + bg_b * shade

    # meandering centreline: slope capped so adjacent columns stay 8-connected
    n_waves = int(rng.integers(2, 5))
    amps = rng.uniform(0.05, 0.14, n_waves) * size
    freqs = rng.uniform(0.4, 2.6, n_waves)
    phases = rng.uniform(0.0, 2.0 * np.pi, n_waves)
    slope = float(np.sum(amps * 2.0 * np.pi * freqs / size))
    if slope > 0.9:
        amps *= 0.9 / slope
    xs = np.arange(size)
    centre = size / 2.0 + sum(
        a * np.sin(2.0 * np.pi * f * xs / size + p) for a, f, p in zip(amps, freqs, phases)
    )
    centre = np.clip(centre, 0.0, size - 1.0)

    width = rng.uniform(0.08, 0.16) * size
    wobble = 0.25 * width * np.sin(2.0 * np.pi * rng.uniform(0.5, 1.5) * xs / size + rng.uniform(0, 2 * np.pi))
    widths = np.maximum(width + wobble, 1.0)

    mask = np.zeros((size, size), dtype=bool)
    for x in xs:
        lo = int(math.floor(centre[x] - widths[x] / 2.0 + 0.5))
        hi = int(math.floor(centre[x] + widths[x] / 2.0 + 0.5))
        lo = max(lo, 0)
        hi = min(hi, size - 1)
        if hi < lo:
            lo = hi = min(max(int(math.floor(centre[x] + 0.5)), 0), size - 1)
        mask[lo : hi + 1, x] = True

    water_shade = _value_noise(rng, size)[..., None]
    water = river_rgb * (0.85 + 0.3 * water_shade)
    image = np.where(mask[..., None], water, image)
    image = image + rng.normal(0.0, 3.0, image.shape)

    element = int(rng.integers(0, 8))
    image_u8 = dihedral(_to_u8(image), element)
    mask = dihedral(mask, element)
    return image_u8, mask


def synth_corpus(
    out_dir,
    count: int,
    resolution: int,
    seed: int = 0,
    style: str | None = None,
    masks_dir=None,
    year: int = 2021,
) -> list[ImageRecord]:
    """Write a convention-named synthetic corpus plus manifest records."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if masks_dir is not None:
        masks_dir = Path(masks_dir)
        masks_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for i in range(count):
        child = np.random.SeedSequence(entropy=[seed, i])
        lead = np.random.default_rng(child)
        img_style = style or STYLES[int(lead.integers(0, len(STYLES)))]
        image, mask = synth_river(child.spawn(1)[0], resolution, style=img_style)
        rec = ImageRecord(
            river=img_style.capitalize(), year=year, index=i,
            width=resolution, height=resolution,
        )
        name = format_filename(rec)
        Image.fromarray(image).save(out_dir / name, format="JPEG", quality=95)
        rec.path = str(out_dir / name)
        records.append(rec)
        if masks_dir is not None:
            save_png(masks_dir / f"{Path(name).stem}_mask.png", mask.astype(np.uint8) * 255)
    return records
