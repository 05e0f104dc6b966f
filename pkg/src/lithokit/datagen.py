"""Synthetic Manhattan mask generation and oracle-rendered datasets.

Two parametric layout styles stand in for real layer clips: "via"
scatters non-overlapping squares, "metal" draws full-length horizontal
or vertical bars with a single jog. Both respect a minimum feature
size and a minimum edge-to-edge spacing, enforced between feature
bounding boxes inside the tile (the periodic boundary is not checked).
Ground truth comes from the imaging oracle at near-full eigenvalue
coverage, binarized at a constant threshold.
"""

import hashlib
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import formats
from .errors import ConfigError, DataError
from .optics import oracle_kernels, resist_image, socs_image
from .training import kernel_dims

_STYLES = ("via", "metal")
_MAX_TRIES = 2000
_SPLIT_SEED_GAP = 10_000  # test seeds start this far above train seeds


@dataclass(frozen=True)
class MaskSpec:
    """Parameters of one synthetic mask. Lengths in nm, rasterized
    through pixel_size_nm onto a square image_px grid."""

    style: str = "via"
    image_px: int = 256
    min_feature_nm: float = 144.0
    min_space_nm: float = 72.0
    density: float = 0.25
    seed: int = 0
    pixel_size_nm: float = 1.0

    def __post_init__(self):
        if self.style not in _STYLES:
            raise ConfigError(f"mask style must be one of {_STYLES}, got {self.style!r}")
        if self.image_px < 8:
            raise ConfigError(f"image_px must be >= 8, got {self.image_px}")
        if self.min_feature_nm <= 0 or self.min_space_nm <= 0:
            raise ConfigError("min feature and space must be positive")
        if not 0 <= self.density <= 1:
            raise ConfigError(f"density must lie in [0, 1], got {self.density}")
        if self.pixel_size_nm <= 0:
            raise ConfigError(f"pixel size must be positive, got {self.pixel_size_nm}")


def _box_gap(a, b):
    """Euclidean edge-to-edge gap in pixels between half-open boxes."""
    dr = max(a[0] - b[1], b[0] - a[1], 0)
    dc = max(a[2] - b[3], b[2] - a[3], 0)
    return math.hypot(dr, dc)


def _respects_spacing(candidates, placed, space_px):
    for c in candidates:
        for p in placed:
            if _box_gap(c, p) < space_px:
                return False
    return True


def gen_mask(spec):
    """Rasterize one random layout; deterministic per seed.

    Features are proposed until the open-area density target is met;
    proposals violating spacing are discarded. Falling short of the
    target after bounded retries raises a generation error.
    """
    rng = np.random.default_rng(spec.seed)
    size = spec.image_px
    feat = max(1, round(spec.min_feature_nm / spec.pixel_size_nm))
    space = spec.min_space_nm / spec.pixel_size_nm
    if feat > size:
        raise DataError(
            f"min feature {feat} px does not fit the {size} px tile"
        )
    mask = np.zeros((size, size))
    boxes = []  # (r0, r1, c0, c1) half-open, per feature
    target = spec.density * size * size
    for _ in range(_MAX_TRIES):
        if mask.sum() >= target:
            break
        if spec.style == "via":
            new = _propose_via(rng, size, feat)
        else:
            new = _propose_metal(rng, size, feat)
        if _respects_spacing(new, boxes, space):
            for r0, r1, c0, c1 in new:
                mask[r0:r1, c0:c1] = 1.0
            boxes.extend(new)
    if mask.sum() < target:
        raise DataError(
            f"could not reach density {spec.density} under spacing "
            f"{spec.min_space_nm} nm after {_MAX_TRIES} tries (seed {spec.seed})"
        )
    return mask


def _propose_via(rng, size, feat):
    side = int(rng.integers(feat, min(2 * feat, size) + 1))
    r0 = int(rng.integers(0, size - side + 1))
    c0 = int(rng.integers(0, size - side + 1))
    return [(r0, r0 + side, c0, c0 + side)]


def _propose_metal(rng, size, feat):
    width = int(rng.integers(feat, min(2 * feat, size) + 1))
    pos = int(rng.integers(0, size - width + 1))
    split = int(rng.integers(size // 4, 3 * size // 4 + 1))
    # lateral jog small enough that the two segments stay connected
    jog = int(rng.integers(-(width - 1), width)) if width > 1 else 0
    pos2 = min(max(pos + jog, 0), size - width)
    horizontal = bool(rng.integers(0, 2))
    if horizontal:
        return [(pos, pos + width, 0, split), (pos2, pos2 + width, split, size)]
    return [(0, split, pos, pos + width), (split, size, pos2, pos2 + width)]


def render_truth(mask, imaging, r_full=None, *, stack=None, coverage=None,
                 threshold=0.225, threads=1):
    """Oracle aerial image and thresholded resist for one mask.

    The kernel stack may be passed in to amortize the decomposition
    across samples; otherwise it is built here at order r_full or at
    the given eigenvalue coverage.
    """
    mask = np.asarray(mask, dtype=np.float64)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise DataError(f"oracle rendering needs a square mask, got {mask.shape}")
    if stack is None:
        size = mask.shape[0]
        m, n = kernel_dims(size, size, imaging.wavelength_nm,
                           imaging.numerical_aperture, imaging.pixel_size_nm)
        stack, _ = oracle_kernels(imaging, size, n, m, r=r_full, coverage=coverage)
    aerial = socs_image(stack, mask, threads=threads)
    return aerial, resist_image(aerial, threshold)


@dataclass(frozen=True)
class ManifestRecord:
    mask_path: str
    aerial_path: str
    resist_path: str
    split: str
    seed: int
    style: str


@dataclass
class DatasetManifest:
    """Dataset index: file records plus shared imaging metadata.

    Paths are stored relative to the manifest's directory so the
    dataset moves as a unit.
    """

    records: list
    metadata: dict
    base_dir: str = "."

    def save(self, path):
        obj = {
            "metadata": self.metadata,
            "records": [
                {
                    "mask": r.mask_path, "aerial": r.aerial_path,
                    "resist": r.resist_path, "split": r.split,
                    "seed": r.seed, "style": r.style,
                }
                for r in self.records
            ],
        }
        formats.write_json(path, obj)

    @classmethod
    def load(cls, path):
        obj = formats.read_json(path)
        try:
            records = [
                ManifestRecord(
                    mask_path=r["mask"], aerial_path=r["aerial"],
                    resist_path=r["resist"], split=r["split"],
                    seed=int(r["seed"]), style=r["style"],
                )
                for r in obj["records"]
            ]
            metadata = obj["metadata"]
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: malformed manifest: {exc}") from exc
        return cls(records=records, metadata=metadata,
                   base_dir=os.path.dirname(os.fspath(path)) or ".")

    def split_records(self, split):
        return [r for r in self.records if r.split == split]

    def load_split(self, split):
        """Read (masks, aerials, resists) arrays; validates shared dims."""
        masks, aerials, resists = [], [], []
        shape = None
        for rec in self.split_records(split):
            mk = formats.read_pgm(os.path.join(self.base_dir, rec.mask_path))
            ae = formats.read_pfm(os.path.join(self.base_dir, rec.aerial_path))
            rs = formats.read_pgm(os.path.join(self.base_dir, rec.resist_path))
            if shape is None:
                shape = mk.shape
            if not (mk.shape == ae.shape == rs.shape == shape):
                raise DataError(
                    f"inconsistent grid dims in split {split!r}: {rec.mask_path}"
                )
            masks.append(mk)
            aerials.append(ae)
            resists.append(rs)
        return masks, aerials, resists


def build_dataset(n_train, n_test, spec, imaging, out_dir, *, threshold=0.225,
                  coverage=0.99999, threads=1):
    """Generate, render and write a train/test dataset; returns the manifest.

    Sample seeds are spec.seed + i for train and spec.seed + 10000 + i
    for test, so the splits never share a seed; identical masks across
    splits are additionally rejected by content hash.
    """
    if n_train < 0 or n_test < 0:
        raise ConfigError("record counts must be nonnegative")
    if max(n_train, n_test) > _SPLIT_SEED_GAP:
        raise ConfigError(f"at most {_SPLIT_SEED_GAP} records per split")
    if spec.pixel_size_nm != imaging.pixel_size_nm:
        raise ConfigError(
            f"mask pixel size {spec.pixel_size_nm} differs from imaging "
            f"pixel size {imaging.pixel_size_nm}"
        )
    resolution = 0.5 * imaging.wavelength_nm / imaging.numerical_aperture
    if spec.min_feature_nm < 2 * resolution:
        raise ConfigError(
            f"min feature {spec.min_feature_nm} nm below twice the resolution "
            f"element {resolution:.2f} nm; patterns would not print"
        )
    os.makedirs(out_dir, exist_ok=True)
    size = spec.image_px
    m, n = kernel_dims(size, size, imaging.wavelength_nm,
                       imaging.numerical_aperture, imaging.pixel_size_nm)
    stack, spectrum = oracle_kernels(imaging, size, n, m, coverage=coverage)
    residual = max(0.0, 1.0 - stack.weights().sum() / spectrum.sum())

    jobs = [("train", spec.seed + i) for i in range(n_train)]
    jobs += [("test", spec.seed + _SPLIT_SEED_GAP + i) for i in range(n_test)]

    def make(job):
        split, seed = job
        sample = replace(spec, seed=seed)
        mask = gen_mask(sample)
        aerial, resist = render_truth(mask, imaging, stack=stack,
                                      threshold=threshold)
        return split, seed, mask, aerial, resist

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(make, jobs))
    else:
        results = [make(j) for j in jobs]

    records = []
    hashes = {"train": set(), "test": set()}
    counters = {"train": 0, "test": 0}
    for split, seed, mask, aerial, resist in results:
        idx = counters[split]
        counters[split] += 1
        stem = f"{split}_{idx:04d}"
        formats.write_pgm(os.path.join(out_dir, f"{stem}_mask.pgm"), mask)
        formats.write_pfm(os.path.join(out_dir, f"{stem}_aerial.pfm"), aerial)
        formats.write_pgm(os.path.join(out_dir, f"{stem}_resist.pgm"), resist)
        hashes[split].add(hashlib.sha256(mask.tobytes()).hexdigest())
        records.append(ManifestRecord(
            mask_path=f"{stem}_mask.pgm", aerial_path=f"{stem}_aerial.pfm",
            resist_path=f"{stem}_resist.pgm", split=split, seed=seed,
            style=spec.style,
        ))
    if hashes["train"] & hashes["test"]:
        raise DataError("identical mask generated in both splits")

    manifest = DatasetManifest(
        records=records,
        metadata={
            "wavelength_nm": imaging.wavelength_nm,
            "numerical_aperture": imaging.numerical_aperture,
            "pixel_size_nm": imaging.pixel_size_nm,
            "source_shape": imaging.source_shape,
            "sigma_inner": imaging.sigma_inner,
            "sigma_outer": imaging.sigma_outer,
            "sigma_fill": imaging.sigma_fill,
            "source_grid": imaging.source_grid,
            "threshold": threshold,
            "coverage": coverage,
            "coverage_residual": residual,
            "r_full": stack.r,
            "image_px": size,
            "style": spec.style,
        },
        base_dir=os.fspath(out_dir),
    )
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest
