"""Partially coherent imaging oracle.

Builds the discrete illumination source and the ideal projector pupil,
assembles the Hopkins transmission cross-coefficient (TCC) matrix over
a truncated frequency support, eigendecomposes it into coherent
kernels (SOCS), and renders aerial images along two independent paths:
the kernel sum (socs_image) and the direct source-point sum
(abbe_image). Resist images are constant-threshold binarizations.

All intensities are in clear-field units: a fully open mask images to
1.0 because the source weights are normalized to sum to one.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, NumericError
from .grid import center_crop, fft2_centered, ifft2_centered, magnitude_sq

_SOURCE_SHAPES = ("point", "circular", "annular")
_MAX_NA = 1.44  # immersion bound


@dataclass(frozen=True)
class ImagingConfig:
    """Optical system settings. Frequencies are in 1/nm, lengths in nm."""

    wavelength_nm: float = 193.0
    numerical_aperture: float = 1.35
    pixel_size_nm: float = 1.0
    source_shape: str = "annular"
    sigma_fill: float = 1.0
    sigma_inner: float = 0.5
    sigma_outer: float = 0.8
    source_grid: int = 15

    def __post_init__(self):
        if self.wavelength_nm <= 0:
            raise ConfigError(f"wavelength must be positive, got {self.wavelength_nm}")
        if not 0 < self.numerical_aperture <= _MAX_NA:
            raise ConfigError(
                f"numerical aperture must lie in (0, {_MAX_NA}], got {self.numerical_aperture}"
            )
        if self.pixel_size_nm <= 0:
            raise ConfigError(f"pixel size must be positive, got {self.pixel_size_nm}")
        if self.source_shape not in _SOURCE_SHAPES:
            raise ConfigError(
                f"source shape must be one of {_SOURCE_SHAPES}, got {self.source_shape!r}"
            )
        if self.source_shape == "circular" and not 0 < self.sigma_fill <= 1:
            raise ConfigError(f"sigma_fill must lie in (0, 1], got {self.sigma_fill}")
        if self.source_shape == "annular":
            if not 0 <= self.sigma_inner < self.sigma_outer <= 1:
                raise ConfigError(
                    "annular source needs 0 <= sigma_inner < sigma_outer <= 1, "
                    f"got ({self.sigma_inner}, {self.sigma_outer})"
                )
        if self.source_grid < 1:
            raise ConfigError(f"source_grid must be >= 1, got {self.source_grid}")


@dataclass(frozen=True)
class PupilFunction:
    """Ideal circular low-pass pupil: transmission 1 inside the cutoff disk."""

    cutoff_frequency: float  # NA / lambda, 1/nm

    def __call__(self, f, g):
        """Complex transmission at spatial frequencies (f, g) in 1/nm."""
        inside = np.hypot(f, g) <= self.cutoff_frequency
        return inside.astype(np.complex128)


@dataclass(frozen=True)
class SourceMap:
    """Discrete illumination points (f, g, weight), weights summing to 1."""

    f: np.ndarray
    g: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if not (self.f.shape == self.g.shape == self.weights.shape):
            raise DimensionError("source point arrays must share shape")
        if self.f.size == 0:
            raise ConfigError("source map has no points")
        if np.any(self.weights <= 0):
            raise ConfigError("source weights must all be positive")

    @property
    def count(self):
        return self.f.size


@dataclass(frozen=True)
class TccMatrix:
    """Hermitian PSD system operator over the flattened n x m kernel support.

    Entry (p, q) couples frequency bins p = a*m + b and q; bin (a, b)
    sits at physical frequency ((a - n//2) * freq_step, (b - m//2) * freq_step).
    """

    matrix: np.ndarray
    n: int
    m: int
    freq_step: float

    def __post_init__(self):
        dim = self.n * self.m
        if self.matrix.shape != (dim, dim):
            raise DimensionError(
                f"TCC matrix shape {self.matrix.shape} does not match support dim {dim}"
            )

    @property
    def dim(self):
        return self.n * self.m


@dataclass(frozen=True)
class KernelStack:
    """r coherent kernels of shape n x m, eigenvalue weight absorbed.

    Kernels are ordered by descending weight; for oracle stacks the
    flattened kernels are mutually orthogonal and the squared norm of
    kernel i equals the i-th TCC eigenvalue.
    """

    kernels: np.ndarray  # (r, n, m) complex
    wavelength_nm: float = float("nan")
    numerical_aperture: float = float("nan")
    pixel_size_nm: float = float("nan")
    provenance: str = "oracle"

    def __post_init__(self):
        if self.kernels.ndim != 3:
            raise DimensionError(f"kernel stack must be (r, n, m), got {self.kernels.shape}")
        r, n, m = self.kernels.shape
        if r < 1:
            raise DimensionError("kernel stack needs at least one kernel")
        if n % 2 == 0 or m % 2 == 0:
            raise DimensionError(f"kernel dims must be odd, got ({n}, {m})")
        if self.provenance not in ("oracle", "learned"):
            raise ConfigError(f"unknown provenance {self.provenance!r}")

    @property
    def r(self):
        return self.kernels.shape[0]

    @property
    def n(self):
        return self.kernels.shape[1]

    @property
    def m(self):
        return self.kernels.shape[2]

    def weights(self):
        """Per-kernel energy; equals the TCC eigenvalues for oracle stacks."""
        return magnitude_sq(self.kernels).sum(axis=(1, 2))


def build_pupil(cfg):
    """Ideal circular pupil with cutoff NA / lambda."""
    return PupilFunction(cutoff_frequency=cfg.numerical_aperture / cfg.wavelength_nm)


def build_source(cfg):
    """Sample the illumination shape on a uniform grid, normalize weights.

    Grid points are laid over the source extent in pupil-relative
    (sigma) coordinates, kept when they fall inside the shape, then
    scaled by NA / lambda into frequency units. Weights are uniform.
    """
    na_over_lambda = cfg.numerical_aperture / cfg.wavelength_nm
    if cfg.source_shape == "point":
        return SourceMap(
            f=np.zeros(1), g=np.zeros(1), weights=np.ones(1)
        )
    extent = cfg.sigma_fill if cfg.source_shape == "circular" else cfg.sigma_outer
    ax = np.linspace(-extent, extent, cfg.source_grid)
    xs, ys = np.meshgrid(ax, ax, indexing="ij")
    rho = np.hypot(xs, ys)
    if cfg.source_shape == "circular":
        keep = rho <= cfg.sigma_fill
    else:
        keep = (rho >= cfg.sigma_inner) & (rho <= cfg.sigma_outer)
    if not np.any(keep):
        raise ConfigError(
            f"source grid {cfg.source_grid} too coarse: no points fall inside the "
            f"{cfg.source_shape} shape"
        )
    f = xs[keep] * na_over_lambda
    g = ys[keep] * na_over_lambda
    w = np.full(f.size, 1.0 / f.size)
    return SourceMap(f=f, g=g, weights=w)


def support_frequencies(n, m, freq_step):
    """Flattened (f, g) coordinates of the n x m centered support bins."""
    fa = (np.arange(n) - n // 2) * freq_step
    gb = (np.arange(m) - m // 2) * freq_step
    return np.repeat(fa, m), np.tile(gb, n)


def assemble_tcc(src, pupil, n, m, freq_step):
    """Weighted sum over source points of shifted-pupil outer products.

    T(p, q) = sum_s w_s * H(f_s + f_p, g_s + g_p) * conj(H(f_s + f_q, g_s + g_q)),
    Hermitian by construction since each outer product is.
    """
    n = int(n)
    m = int(m)
    if n < 1 or m < 1 or n % 2 == 0 or m % 2 == 0:
        raise DimensionError(f"kernel support dims must be odd and positive, got ({n}, {m})")
    if freq_step <= 0:
        raise ConfigError(f"freq_step must be positive, got {freq_step}")
    fr, fc = support_frequencies(n, m, freq_step)
    T = np.zeros((n * m, n * m), dtype=np.complex128)
    for fs, gs, ws in zip(src.f, src.g, src.weights):
        h = pupil(fr + fs, fc + gs)
        T += ws * np.outer(h, h.conj())
    return TccMatrix(matrix=T, n=n, m=m, freq_step=freq_step)


def tcc_spectrum(tcc):
    """Eigenvalues of the TCC in descending order, tiny negatives clamped."""
    try:
        vals = np.linalg.eigvalsh(tcc.matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"TCC eigensolver failed: {exc}") from exc
    vals = vals[::-1].copy()
    _clamp_spectrum(vals)
    return vals


def _clamp_spectrum(vals):
    top = vals.max(initial=0.0)
    floor = -1e-10 * top
    if vals.min(initial=0.0) < floor:
        raise NumericError(
            f"TCC spectrum violates positive semidefiniteness: min eigenvalue "
            f"{vals.min():.3e} below tolerance {floor:.3e}"
        )
    np.clip(vals, 0.0, None, out=vals)


def coverage_rank(spectrum, coverage):
    """Smallest r with the top-r eigenvalue mass >= coverage of the total."""
    if not 0 < coverage <= 1:
        raise ConfigError(f"coverage must lie in (0, 1], got {coverage}")
    cum = np.cumsum(spectrum)
    total = cum[-1]
    if total <= 0:
        raise NumericError("TCC spectrum has no positive mass")
    return int(np.searchsorted(cum, coverage * total) + 1)


def decompose_tcc(tcc, r, *, wavelength_nm=float("nan"),
                  numerical_aperture=float("nan"), pixel_size_nm=float("nan")):
    """Top-r eigenpairs of the TCC as a kernel stack.

    Kernel i is sqrt(alpha_i) times eigenvector i reshaped to n x m.
    Each eigenvector's largest-magnitude component is rotated to the
    positive real axis so the decomposition is deterministic.
    """
    if r < 1 or r > tcc.dim:
        raise ConfigError(f"kernel order r={r} out of range [1, {tcc.dim}]")
    try:
        vals, vecs = np.linalg.eigh(tcc.matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"TCC eigensolver failed: {exc}") from exc
    vals = vals[::-1].copy()
    vecs = vecs[:, ::-1]
    _clamp_spectrum(vals)
    kernels = np.zeros((r, tcc.n, tcc.m), dtype=np.complex128)
    for i in range(r):
        h = vecs[:, i]
        j = int(np.argmax(np.abs(h)))
        if np.abs(h[j]) > 0:
            h = h * (np.conj(h[j]) / np.abs(h[j]))
        kernels[i] = np.sqrt(vals[i]) * h.reshape(tcc.n, tcc.m)
    return KernelStack(
        kernels=kernels,
        wavelength_nm=wavelength_nm,
        numerical_aperture=numerical_aperture,
        pixel_size_nm=pixel_size_nm,
        provenance="oracle",
    )


def _chunks(total, threads):
    edges = np.linspace(0, total, min(threads, total) + 1).astype(int)
    return [(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def socs_image(stack, mask, threads=1):
    """Aerial image as the kernel sum of squared filtered mask fields.

    I = sum_i |ifft2_centered(embed(K_i * crop(F(M))))|^2. Per-kernel
    work may be split across threads; per-chunk partial images are
    reduced in chunk index order so the result is stable across runs
    at a fixed thread count.
    """
    mask = np.asarray(mask, dtype=np.float64)
    rows, cols = mask.shape[-2], mask.shape[-1]
    spectrum = fft2_centered(mask.astype(np.complex128))
    small = center_crop(spectrum, stack.n, stack.m)
    r0 = rows // 2 - stack.n // 2
    c0 = cols // 2 - stack.m // 2

    def partial(lo, hi):
        full = np.zeros((hi - lo, rows, cols), dtype=np.complex128)
        full[:, r0:r0 + stack.n, c0:c0 + stack.m] = stack.kernels[lo:hi] * small[None]
        fields = ifft2_centered(full)
        return magnitude_sq(fields).sum(axis=0)

    spans = _chunks(stack.r, max(1, threads))
    if len(spans) == 1:
        return partial(*spans[0])
    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        parts = list(pool.map(lambda s: partial(*s), spans))
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def abbe_image(src, pupil, mask, pixel_size_nm=1.0, threads=1):
    """Aerial image as the weighted sum of coherent source-point images.

    I = sum_s w_s |ifft2_centered(H(f + f_s, g + g_s) * F(M))|^2, with
    frequency bins of the full mask spectrum. Mathematically equal to
    socs_image at full kernel order when the support covers the pupil.
    """
    mask = np.asarray(mask, dtype=np.float64)
    rows, cols = mask.shape[-2], mask.shape[-1]
    fr = (np.arange(rows) - rows // 2) / (rows * pixel_size_nm)
    fc = (np.arange(cols) - cols // 2) / (cols * pixel_size_nm)
    FR, FC = np.meshgrid(fr, fc, indexing="ij")
    spectrum = fft2_centered(mask.astype(np.complex128))

    def partial(lo, hi):
        acc = np.zeros((rows, cols))
        for s in range(lo, hi):
            H = pupil(FR + src.f[s], FC + src.g[s])
            field = ifft2_centered(H * spectrum)
            acc += src.weights[s] * magnitude_sq(field)
        return acc

    spans = _chunks(src.count, max(1, threads))
    if len(spans) == 1:
        return partial(*spans[0])
    with ThreadPoolExecutor(max_workers=len(spans)) as pool:
        parts = list(pool.map(lambda s: partial(*s), spans))
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def resist_image(aerial, threshold):
    """Binarize an aerial image: 1 where intensity >= threshold, else 0."""
    aerial = np.asarray(aerial, dtype=np.float64)
    return (aerial >= threshold).astype(np.float64)


def oracle_kernels(cfg, image_px, n, m, r=None, coverage=None):
    """Assemble and decompose the TCC for a square image_px mask grid.

    Exactly one of r / coverage selects the kernel order; coverage
    picks the smallest order holding that fraction of eigenvalue mass.
    Returns (stack, spectrum).
    """
    if (r is None) == (coverage is None):
        raise ConfigError("specify exactly one of r or coverage")
    src = build_source(cfg)
    pupil = build_pupil(cfg)
    freq_step = 1.0 / (image_px * cfg.pixel_size_nm)
    tcc = assemble_tcc(src, pupil, n, m, freq_step)
    spectrum = tcc_spectrum(tcc)
    if r is None:
        r = coverage_rank(spectrum, coverage)
    stack = decompose_tcc(
        tcc, r,
        wavelength_nm=cfg.wavelength_nm,
        numerical_aperture=cfg.numerical_aperture,
        pixel_size_nm=cfg.pixel_size_nm,
    )
    return stack, spectrum
