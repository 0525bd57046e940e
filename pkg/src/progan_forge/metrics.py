"""Generated-image quality metrics.

Laplacian pyramids feed a patch-based sliced Wasserstein distance,
reported per resolution; the Inception Score works on any row-stochastic
class-probability matrix so the classifier behind it stays pluggable.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d

BLUR_KERNEL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
PROB_CLAMP = 1e-12


class PyramidError(ValueError):
    pass


class ProbMatrixError(ValueError):
    pass


def _blur(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(image, kernel, axis=0, mode="reflect")
    return correlate1d(out, kernel, axis=1, mode="reflect")


def _downsample(gauss: np.ndarray) -> np.ndarray:
    return _blur(gauss, BLUR_KERNEL)[::2, ::2]


def _upsample_axis0(gauss: np.ndarray) -> np.ndarray:
    # expand with the doubled blur kernel, reflecting in the coarse domain:
    # out[2j]   = (g[j-1] + 6 g[j] + g[j+1]) / 8
    # out[2j+1] = (g[j] + g[j+1]) / 2
    n = gauss.shape[0]
    prev_idx = np.maximum(np.arange(n) - 1, 0)  # reflect: -1 -> 0
    next_idx = np.minimum(np.arange(n) + 1, n - 1)  # reflect: n -> n-1
    prev, nxt = gauss[prev_idx], gauss[next_idx]
    out = np.empty((2 * n,) + gauss.shape[1:], dtype=gauss.dtype)
    out[::2] = (prev + 6.0 * gauss + nxt) / 8.0
    out[1::2] = (gauss + nxt) / 2.0
    return out


def _upsample(gauss: np.ndarray) -> np.ndarray:
    out = _upsample_axis0(gauss)
    return _upsample_axis0(out.swapaxes(0, 1)).swapaxes(0, 1)


@dataclass
class LaplacianPyramid:
    levels: list  # detail images, finest -> coarsest
    residual: np.ndarray  # coarsest Gaussian image

    def level_sides(self) -> list:
        return [lv.shape[0] for lv in self.levels]


def laplacian_pyramid(image: np.ndarray, levels: int) -> LaplacianPyramid:
    """Band-pass decomposition; reconstruct() inverts it exactly."""
    image = np.asarray(image, dtype=np.float64)
    side = image.shape[0]
    if image.ndim not in (2, 3) or image.shape[1] != side:
        raise PyramidError(f"expected a square HW[C] image, got shape {image.shape}")
    if levels < 1:
        raise PyramidError("levels must be >= 1")
    if side % (2**levels):
        raise PyramidError(
            f"image side {side} is not divisible by 2^{levels}"
        )
    details = []
    gauss = image
    for _ in range(levels):
        smaller = _downsample(gauss)
        details.append(gauss - _upsample(smaller))
        gauss = smaller
    return LaplacianPyramid(levels=details, residual=gauss)


def reconstruct(pyramid: LaplacianPyramid) -> np.ndarray:
    image = pyramid.residual
    for detail in pyramid.levels[::-1]:
        image = _upsample(image) + detail
    return image


# ---------------------------------------------------------------------------
# patch descriptors and sliced Wasserstein distance


@dataclass
class PatchDescriptorSet:
    data: np.ndarray  # (patches, patch_side**2 * channels) float64
    channel_mean: np.ndarray
    channel_std: np.ndarray
    patch_side: int
    channels: int

    @property
    def stats(self):
        return self.channel_mean, self.channel_std


def pyramid_plane(image: np.ndarray, level: int, plane: str = "detail") -> np.ndarray:
    """The pyramid plane with side ``image_side / 2**level``.

    ``detail`` is the band-pass Laplacian level; ``gaussian`` is the
    blurred-and-decimated image (used at the coarsest reported scale, so
    low-frequency statistics are not discarded).
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 2:
        image = image[..., None]
    if plane == "detail":
        return laplacian_pyramid(image, level + 1).levels[level]
    if plane == "gaussian":
        return image if level == 0 else laplacian_pyramid(image, level).residual
    raise ValueError(f"unknown plane {plane!r}")


def extract_descriptors(
    images,
    level: int = 0,
    patches_per_image: int = 128,
    patch_side: int = 7,
    seed=0,
    stats=None,
    plane: str = "gaussian",
) -> PatchDescriptorSet:
    """Random patches from one pyramid plane of each image.

    Without ``stats`` the set is normalized per channel over itself;
    passing another set's stats applies that normalization instead (the
    usual arrangement: real-set statistics applied to both sides).
    """
    rng = np.random.default_rng(seed)
    rows = []
    channels = None
    for image in images:
        img_plane = pyramid_plane(image, level, plane)
        side = img_plane.shape[0]
        if side < patch_side:
            raise PyramidError(
                f"level side {side} is smaller than patch side {patch_side}"
            )
        channels = img_plane.shape[2]
        ys = rng.integers(0, side - patch_side + 1, size=patches_per_image)
        xs = rng.integers(0, side - patch_side + 1, size=patches_per_image)
        for y, x in zip(ys, xs):
            rows.append(img_plane[y : y + patch_side, x : x + patch_side, :])
    patches = np.stack(rows)  # (P, k, k, C)
    if stats is None:
        mean = patches.mean(axis=(0, 1, 2))
        std = np.maximum(patches.std(axis=(0, 1, 2)), 1e-12)
    else:
        mean, std = stats
    normalized = (patches - mean) / std
    data = normalized.reshape(len(rows), patch_side * patch_side * channels)
    return PatchDescriptorSet(
        data=data, channel_mean=mean, channel_std=std,
        patch_side=patch_side, channels=channels,
    )


def _descriptor_data(x) -> np.ndarray:
    return x.data if isinstance(x, PatchDescriptorSet) else np.asarray(x, dtype=np.float64)


def sliced_wasserstein(a, b, n_projections: int = 512, seed=0) -> float:
    """Mean 1-D Wasserstein-1 over random unit directions.

    Directions are pre-generated from the seed and each contributes an
    independent sorted-difference mean, so the result does not depend on
    how the projection loop is chunked. If the sets differ in size the
    larger is subsampled to match.
    """
    da, db = _descriptor_data(a), _descriptor_data(b)
    if da.ndim != 2 or db.ndim != 2:
        raise ValueError("descriptor sets must be 2-D (patches, dims)")
    if da.shape[1] != db.shape[1]:
        raise ValueError(
            f"descriptor dimensions differ: {da.shape[1]} vs {db.shape[1]}"
        )
    if da.shape[0] == 0 or db.shape[0] == 0:
        raise ValueError("empty descriptor set")
    rng = np.random.default_rng(seed)
    dirs = rng.standard_normal((n_projections, da.shape[1]))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    target = min(da.shape[0], db.shape[0])
    if da.shape[0] > target:
        da = da[rng.choice(da.shape[0], size=target, replace=False)]
    if db.shape[0] > target:
        db = db[rng.choice(db.shape[0], size=target, replace=False)]
    scores = projection_scores(da, db, dirs)
    return float(scores.mean())


PROJECTION_CHUNK = 64  # canonical chunk grid; BLAS output differs across widths


def projection_scores(da: np.ndarray, db: np.ndarray, dirs: np.ndarray,
                      chunk_ids=None) -> np.ndarray:
    """Per-direction sorted-difference means for pre-generated directions.

    Directions are always evaluated on a fixed chunk grid, so distributing
    chunks over parallel workers reproduces the serial result bit for bit.
    ``chunk_ids`` restricts evaluation to those grid chunks (NaN elsewhere).
    """
    n = dirs.shape[0]
    out = np.full(n, np.nan)
    total_chunks = -(-n // PROJECTION_CHUNK)
    ids = range(total_chunks) if chunk_ids is None else chunk_ids
    for cid in ids:
        sl = slice(cid * PROJECTION_CHUNK, min((cid + 1) * PROJECTION_CHUNK, n))
        pa = np.sort(da @ dirs[sl].T, axis=0)
        pb = np.sort(db @ dirs[sl].T, axis=0)
        out[sl] = np.abs(pa - pb).mean(axis=0)
    return out


@dataclass(frozen=True)
class SwdConfig:
    patches_per_image: int = 128
    patch_side: int = 7
    n_projections: int = 512
    seed: int = 0


@dataclass
class SwdReport:
    scores: dict  # resolution -> score
    n_real: int
    n_fake: int
    n_projections: int
    seed: int

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["resolution", "score", "n_real", "n_fake", "n_projections", "seed"])
            for res in sorted(self.scores):
                writer.writerow(
                    [res, f"{self.scores[res]:.17g}", self.n_real, self.n_fake,
                     self.n_projections, self.seed]
                )

    @classmethod
    def load_csv(cls, path) -> "SwdReport":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty report")
        scores = {int(r["resolution"]): float(r["score"]) for r in rows}
        first = rows[0]
        return cls(
            scores=scores,
            n_real=int(first["n_real"]),
            n_fake=int(first["n_fake"]),
            n_projections=int(first["n_projections"]),
            seed=int(first["seed"]),
        )


def swd_report(real_store, fake_store, resolutions, config: SwdConfig | None = None) -> SwdReport:
    """Per-resolution Laplacian SWD between two resolution stores.

    Pyramids are built from the highest requested resolution; each
    requested resolution uses the pyramid plane whose side matches it.
    Real-set normalization statistics are applied to both sides.
    """
    config = config or SwdConfig()
    resolutions = sorted(set(int(r) for r in resolutions))
    if not resolutions:
        raise ValueError("no resolutions requested")
    for store, tag in ((real_store, "real"), (fake_store, "fake")):
        missing = [r for r in resolutions if r not in store.resolutions]
        if missing:
            raise FileNotFoundError(f"{tag} store lacks resolution folder(s) {missing}")
    top = resolutions[-1]
    real = real_store.load_images(top).astype(np.float64) / 255.0
    fake = fake_store.load_images(top).astype(np.float64) / 255.0
    scores = {}
    for res in resolutions:
        level = int(math.log2(top // res))
        plane = "gaussian" if res == resolutions[0] else "detail"
        child = np.random.SeedSequence(entropy=[config.seed, res])
        patch_seed, swd_seed = child.spawn(2)
        # same patch positions on both sides: identical stores score exactly 0
        real_desc = extract_descriptors(
            real, level, config.patches_per_image, config.patch_side,
            seed=patch_seed, plane=plane,
        )
        fake_desc = extract_descriptors(
            fake, level, config.patches_per_image, config.patch_side,
            seed=patch_seed, stats=real_desc.stats, plane=plane,
        )
        scores[res] = sliced_wasserstein(
            real_desc, fake_desc, config.n_projections, seed=swd_seed
        )
    return SwdReport(
        scores=scores, n_real=len(real), n_fake=len(fake),
        n_projections=config.n_projections, seed=config.seed,
    )


# ---------------------------------------------------------------------------
# inception score


def validate_prob_matrix(probs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise ProbMatrixError(f"expected (N, K>=2) matrix, got shape {probs.shape}")
    if np.any(probs < 0):
        raise ProbMatrixError("probability entries must be >= 0")
    sums = probs.sum(axis=1)
    bad = np.abs(sums - 1.0) > tol
    if np.any(bad):
        raise ProbMatrixError(
            f"{int(bad.sum())} row(s) do not sum to 1 within {tol}"
        )
    return probs


def inception_score(probs, splits: int = 1) -> float:
    """exp(mean KL(p(y|x) || p(y))), optionally averaged over row splits."""
    probs = validate_prob_matrix(probs)
    if splits < 1 or splits > probs.shape[0]:
        raise ProbMatrixError(f"splits must be in 1..{probs.shape[0]}")
    part_scores = []
    for part in np.array_split(probs, splits):
        marginal = part.mean(axis=0)
        log_ratio = np.log(np.maximum(part, PROB_CLAMP)) - np.log(
            np.maximum(marginal, PROB_CLAMP)
        )
        kl = (part * log_ratio).sum(axis=1)
        part_scores.append(np.exp(kl.mean()))
    return float(np.mean(part_scores))


def classify(classifier, images) -> np.ndarray:
    """Run a pluggable classifier; returns a validated (N, K) matrix."""
    probs = classifier.predict_proba(images)
    return validate_prob_matrix(probs)


def save_prob_matrix(path, probs: np.ndarray, ids=None) -> None:
    probs = validate_prob_matrix(probs)
    n, k = probs.shape
    ids = list(ids) if ids is not None else [f"img{i:05d}" for i in range(n)]
    if len(ids) != n:
        raise ProbMatrixError("ids length must match row count")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["img_id"] + [f"p{j}" for j in range(k)])
        for i in range(n):
            writer.writerow([ids[i]] + [f"{p:.17g}" for p in probs[i]])


def load_prob_matrix(path):
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "img_id" or len(header) < 3:
            raise ProbMatrixError(f"{path}: header must be img_id,p0..p{{K-1}}")
        ids, rows = [], []
        for row in reader:
            ids.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return ids, validate_prob_matrix(np.asarray(rows))
