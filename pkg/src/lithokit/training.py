"""End-to-end kernel regression from mask/aerial pairs.

The forward path reuses the imaging kernel sum with network-predicted
kernels; gradients are hand-derived reverse-mode, treating the real
and imaginary part of every parameter as independent real variables:

  MSE -> |E|^2        cotangent G_E = 2 * G_I * E
  inverse FFT         adjoint is the forward FFT scaled by 1/(rows*cols)
  embed               adjoint is the central crop
  K * spectrum        adjoint multiplies by conj(spectrum)
  CLinear / CReLU     see neural.backward_through_layers

Because the coordinate encoding is fixed, the network runs once per
optimizer step regardless of batch size: per-sample cotangents with
respect to the kernel stack are accumulated in sample order, then a
single backward pass distributes them to the parameters.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError
from .grid import center_crop, fft2_centered, ifft2_centered, magnitude_sq
from .metrics import mse, psnr
from .neural import (CMlpParams, NerfEncoder, RawEncoder, RffEncoder,
                     backward_through_layers, cmlp_forward, forward_with_cache,
                     init_params, make_coord_grid)
from .optics import socs_image


def kernel_dims(width_px, height_px, wavelength_nm, numerical_aperture, pixel_nm=1.0):
    """Odd kernel support covering the doubled pupil passband.

    Returns (m, n): m = 2*ceil(width_px * pixel_nm * 2*NA/lambda) + 1
    spans the image width (columns), n likewise the height (rows).
    The ceiling keeps the support at least as wide as the band limit,
    and the 2k+1 form makes both dims odd by construction.
    """
    if min(width_px, height_px, wavelength_nm, numerical_aperture, pixel_nm) <= 0:
        raise ConfigError("kernel_dims arguments must all be positive")
    bandwidth = 2.0 * numerical_aperture / wavelength_nm
    m = 2 * math.ceil(width_px * pixel_nm * bandwidth) + 1
    n = 2 * math.ceil(height_px * pixel_nm * bandwidth) + 1
    return m, n


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 4
    learning_rate: float = 1e-3
    lr_final: float = 1e-5
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 3
    r: int = 24
    kernel_n: int | None = None  # override for the dims rule
    kernel_m: int | None = None
    precision: str = "f64"
    threads: int = 1
    val_every: int = 10
    val_count: int = 8
    out_init_scale: float = 0.05
    ridge: float = 1e-3  # kernel energy penalty; decays directions the data never excites

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0 or self.lr_final <= 0:
            raise ConfigError("learning rates must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be adam or sgd, got {self.optimizer!r}")
        if self.r < 1:
            raise ConfigError(f"kernel order r must be >= 1, got {self.r}")
        if (self.kernel_n is None) != (self.kernel_m is None):
            raise ConfigError("kernel dims override needs both kernel_n and kernel_m")
        if self.kernel_n is not None and (self.kernel_n % 2 == 0 or self.kernel_m % 2 == 0):
            raise ConfigError("kernel dims override must be odd")
        if self.precision not in ("f64", "f32"):
            raise ConfigError(f"precision must be f64 or f32, got {self.precision!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")


@dataclass(frozen=True)
class NetworkConfig:
    encoder: str = "rff"
    rff_features: int = 128
    rff_sigma: float = 4.0  # spectrum matched to the kernel grid span
    rff_seed: int = 7
    nerf_octaves: int = 10
    hidden_width: int = 128
    hidden_blocks: int = 1

    def __post_init__(self):
        if self.encoder not in ("rff", "nerf", "none"):
            raise ConfigError(f"encoder must be rff, nerf or none, got {self.encoder!r}")
        if self.hidden_width < 1 or self.hidden_blocks < 0:
            raise ConfigError("hidden_width must be >= 1 and hidden_blocks >= 0")


@dataclass
class GradientSet:
    """Per-layer cotangents, shape-congruent with CMlpParams.

    Entry (i, j) holds dL/d(re W_ij) + 1j * dL/d(im W_ij).
    """

    weights: list
    biases: list


def build_encoder(ncfg):
    if ncfg.encoder == "rff":
        return RffEncoder(l=ncfg.rff_features, sigma=ncfg.rff_sigma, seed=ncfg.rff_seed)
    if ncfg.encoder == "nerf":
        return NerfEncoder(octaves=ncfg.nerf_octaves)
    return RawEncoder()


def network_widths(ncfg, in_width, r):
    """Input CLinear, hidden_blocks hidden CReLU blocks, output CLinear."""
    return [in_width] + [ncfg.hidden_width] * (ncfg.hidden_blocks + 1) + [r]


def loss(predicted, truth):
    """Training loss: mean squared pixel difference (same as metrics.mse)."""
    return mse(predicted, truth)


def _socs_with_kernel_grad(kernels, spec_small, truth):
    """Loss of the kernel-sum image against truth, plus dLoss/dK.

    kernels is the raw (r, n, m) array; spec_small the centrally
    cropped mask spectrum. Walks the chain forward then pulls the MSE
    cotangent back to the kernels.
    """
    rows, cols = truth.shape
    r, n, m = kernels.shape
    r0 = rows // 2 - n // 2
    c0 = cols // 2 - m // 2
    full = np.zeros((r, rows, cols), dtype=kernels.dtype)
    full[:, r0:r0 + n, c0:c0 + m] = kernels * spec_small[None]
    fields = ifft2_centered(full)
    image = magnitude_sq(fields).sum(axis=0)
    npix = rows * cols
    diff = image - truth
    value = float(np.mean(diff ** 2))
    if not math.isfinite(value):
        raise NumericError(f"non-finite loss {value}; kernel max |K| = "
                           f"{np.abs(kernels).max():.3e}")
    g_image = (2.0 / npix) * diff
    g_fields = 2.0 * g_image[None] * fields
    g_full = fft2_centered(g_fields) / npix
    g_kernels = np.conj(spec_small)[None] * g_full[:, r0:r0 + n, c0:c0 + m]
    return value, g_kernels


def loss_and_grad(params, encoder, mask, truth, n, m, ridge=0.0):
    """Loss and analytic parameter gradients for one mask/aerial pair.

    Runs the encoder over the (n, m) coordinate grid, the network, the
    kernel-sum image, and the full reverse chain. ridge > 0 adds
    ridge * mean|K|^2 over the kernel entries. Returns
    (loss, GradientSet).
    """
    mask = np.asarray(mask, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if mask.shape != truth.shape:
        raise DataError(f"mask shape {mask.shape} != truth shape {truth.shape}")
    features = encoder.encode(make_coord_grid(n, m))
    out, cache = forward_with_cache(params, features)
    r = out.shape[1]
    kernels = np.ascontiguousarray(out.T.reshape(r, n, m))
    spec_small = center_crop(fft2_centered(mask.astype(np.complex128)), n, m)
    value, g_kernels = _socs_with_kernel_grad(kernels, spec_small, truth)
    if ridge:
        value += ridge * float(np.mean(magnitude_sq(kernels)))
        g_kernels = g_kernels + (2.0 * ridge / kernels.size) * kernels
    g_out = np.ascontiguousarray(g_kernels.reshape(r, n * m).T)
    gw, gb, _ = backward_through_layers(params, cache, g_out)
    return value, GradientSet(weights=gw, biases=gb)


def forward_predict(params, encoder, mask, n, m, r=None, threads=1):
    """Predicted aerial image for a mask through the learned kernel stack."""
    if r is not None and params.out_width != r:
        raise ConfigError(
            f"network output width {params.out_width} does not match r={r}"
        )
    stack = export_kernels(params, encoder, n, m, r=r)
    return socs_image(stack, np.asarray(mask, dtype=np.float64), threads=threads)


def export_kernels(params, encoder, n, m, r=None, *, wavelength_nm=float("nan"),
                   numerical_aperture=float("nan"), pixel_size_nm=float("nan")):
    """Materialize the learned kernel stack with one network evaluation.

    Prediction afterwards needs only the stack; the network is not
    consulted again.
    """
    if r is not None and params.out_width != r:
        raise ConfigError(
            f"network output width {params.out_width} does not match r={r}"
        )
    features = encoder.encode(make_coord_grid(n, m))
    return cmlp_forward(params, features, n, m,
                        wavelength_nm=wavelength_nm,
                        numerical_aperture=numerical_aperture,
                        pixel_size_nm=pixel_size_nm)


class Adam:
    """Adam over the stacked (re, im) views of complex parameters."""

    def __init__(self, shapes, beta1=0.9, beta2=0.999, eps=1e-8, dtype=np.float64):
        self.m = [np.zeros(s + (2,), dtype=dtype) for s in shapes]
        self.v = [np.zeros(s + (2,), dtype=dtype) for s in shapes]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0

    def step(self, arrays, grads, lr):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            gf = np.stack([g.real, g.imag], axis=-1)
            m *= b1
            m += (1.0 - b1) * gf
            v *= b2
            v += (1.0 - b2) * gf * gf
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= update[..., 0] + 1j * update[..., 1]


class Sgd:
    """Plain gradient descent on the real-pair view."""

    def __init__(self, shapes, **_):
        self.t = 0

    def step(self, arrays, grads, lr):
        self.t += 1
        for p, g in zip(arrays, grads):
            p -= lr * g


def _cosine_lr(tcfg, epoch):
    if tcfg.epochs <= 1:
        return tcfg.learning_rate
    t = epoch / (tcfg.epochs - 1)
    return tcfg.lr_final + 0.5 * (tcfg.learning_rate - tcfg.lr_final) * (
        1.0 + math.cos(math.pi * t)
    )


def fit(masks, truths, tcfg, ncfg, n, m, val=None, *, imaging_meta=None,
        on_epoch=None):
    """Optimize network parameters against oracle-rendered truths.

    masks/truths are in-memory grid lists sharing one shape. Each step
    minimizes the batch-mean pixel loss plus tcfg.ridge times the mean
    squared kernel magnitude; logged losses report the pixel term only.
    val is an optional (masks, truths) pair scored every val_every
    epochs. The run is deterministic for a fixed seed: batch order
    comes from the seeded generator and per-sample kernel cotangents
    are reduced in batch order regardless of thread count.

    Returns (params, stack, log_rows, diverged) where log_rows are
    (epoch, mean_loss, val_psnr_db, wall_seconds) tuples. On a
    non-finite loss the last epoch-end parameters are restored and
    training stops early.
    """
    if not masks:
        raise DataError("training set is empty")
    if len(masks) != len(truths):
        raise DataError(f"{len(masks)} masks vs {len(truths)} truths")
    shape = np.asarray(masks[0]).shape
    for g in list(masks) + list(truths):
        if np.asarray(g).shape != shape:
            raise DataError("all masks and truths must share one shape")

    cdtype = np.complex128 if tcfg.precision == "f64" else np.complex64
    rdtype = np.float64 if tcfg.precision == "f64" else np.float32

    encoder = build_encoder(ncfg)
    features = encoder.encode(make_coord_grid(n, m)).astype(cdtype)
    params = init_params(network_widths(ncfg, encoder.width, tcfg.r),
                         tcfg.seed, out_scale=tcfg.out_init_scale)
    if cdtype is not np.complex128:
        params = params.astype(cdtype)

    spectra = [
        center_crop(fft2_centered(np.asarray(mk, dtype=np.float64)
                                  .astype(np.complex128)), n, m).astype(cdtype)
        for mk in masks
    ]
    truth_arrays = [np.asarray(t, dtype=rdtype) for t in truths]

    arrays = params.weights + params.biases
    opt_cls = Adam if tcfg.optimizer == "adam" else Sgd
    opt = opt_cls([p.shape for p in arrays], beta1=tcfg.beta1, beta2=tcfg.beta2,
                  eps=tcfg.eps, dtype=rdtype)
    rng = np.random.default_rng(tcfg.seed + 1)
    nsamp = len(masks)
    log_rows = []
    diverged = False
    snapshot = params.copy()
    pool = (ThreadPoolExecutor(max_workers=tcfg.threads)
            if tcfg.threads > 1 else None)
    t0 = time.time()

    for epoch in range(tcfg.epochs):
        lr = _cosine_lr(tcfg, epoch)
        order = rng.permutation(nsamp)
        epoch_loss = 0.0
        try:
            for start in range(0, nsamp, tcfg.batch_size):
                idx = order[start:start + tcfg.batch_size]
                out, cache = forward_with_cache(params, features)
                kernels = np.ascontiguousarray(out.T.reshape(tcfg.r, n, m))
                if pool is None:
                    results = [
                        _socs_with_kernel_grad(kernels, spectra[s], truth_arrays[s])
                        for s in idx
                    ]
                else:
                    results = list(pool.map(
                        lambda s: _socs_with_kernel_grad(
                            kernels, spectra[s], truth_arrays[s]),
                        idx,
                    ))
                gk_total = np.zeros_like(kernels)
                for value, gk in results:  # fixed sample-index reduction order
                    gk_total += gk
                    epoch_loss += value
                gk_total /= len(idx)
                if tcfg.ridge:
                    gk_total += (2.0 * tcfg.ridge / kernels.size) * kernels
                g_out = np.ascontiguousarray(gk_total.reshape(tcfg.r, n * m).T)
                gw, gb, _ = backward_through_layers(params, cache, g_out)
                opt.step(arrays, gw + gb, lr)
        except NumericError:
            params = snapshot
            arrays = params.weights + params.biases
            diverged = True
            log_rows.append((epoch, float("nan"), float("nan"), time.time() - t0))
            break
        snapshot = params.copy()
        val_psnr = float("nan")
        if val is not None and (
            (tcfg.val_every > 0 and (epoch + 1) % tcfg.val_every == 0)
            or epoch == tcfg.epochs - 1
        ):
            val_psnr = _val_psnr(params, features, tcfg.r, n, m, val, tcfg)
        log_rows.append((epoch, epoch_loss / nsamp, val_psnr, time.time() - t0))
        if on_epoch is not None:
            on_epoch(epoch, params)

    if pool is not None:
        pool.shutdown()
    meta = imaging_meta or {}
    stack = export_kernels(
        params.astype(np.complex128), encoder, n, m,
        wavelength_nm=float(meta.get("wavelength_nm", float("nan"))),
        numerical_aperture=float(meta.get("numerical_aperture", float("nan"))),
        pixel_size_nm=float(meta.get("pixel_size_nm", float("nan"))),
    )
    return params, stack, log_rows, diverged


def _val_psnr(params, features, r, n, m, val, tcfg):
    out, _ = forward_with_cache(params, features)
    kernels = np.ascontiguousarray(out.T.reshape(r, n, m)).astype(np.complex128)
    val_masks, val_truths = val
    count = min(len(val_masks), tcfg.val_count)
    scores = []
    for mk, truth in zip(val_masks[:count], val_truths[:count]):
        rows, cols = np.asarray(mk).shape
        r0 = rows // 2 - n // 2
        c0 = cols // 2 - m // 2
        small = center_crop(fft2_centered(np.asarray(mk).astype(np.complex128)), n, m)
        full = np.zeros((r, rows, cols), dtype=np.complex128)
        full[:, r0:r0 + n, c0:c0 + m] = kernels * small[None]
        image = magnitude_sq(ifft2_centered(full)).sum(axis=0)
        scores.append(psnr(np.asarray(truth, dtype=np.float64), image))
    return float(np.mean(scores))


def train(manifest, tcfg, ncfg, *, on_epoch=None):
    """Fit a network against a dataset manifest's train split.

    The manifest supplies mask/aerial arrays and imaging metadata; the
    test split, when present, provides validation PSNR. Returns
    (params, stack, log_rows).
    """
    masks, aerials, _ = manifest.load_split("train")
    if not masks:
        raise DataError("manifest has no train records")
    meta = manifest.metadata
    if tcfg.kernel_n is not None:
        n, m = tcfg.kernel_n, tcfg.kernel_m
    else:
        rows, cols = masks[0].shape
        m, n = kernel_dims(cols, rows, meta["wavelength_nm"],
                           meta["numerical_aperture"], meta["pixel_size_nm"])
    val = None
    test_masks, test_aerials, _ = manifest.load_split("test")
    if test_masks:
        val = (test_masks, test_aerials)
    params, stack, log_rows, diverged = fit(
        masks, aerials, tcfg, ncfg, n, m, val=val, imaging_meta=meta,
        on_epoch=on_epoch,
    )
    if diverged:
        log_rows = list(log_rows)
    return params, stack, log_rows
