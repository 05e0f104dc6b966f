"""Complex 2D grid arithmetic: centered FFTs and central crop/embed.

Grids are plain numpy arrays. A ComplexGrid is a complex128 array, a
RealGrid is a float64 array; both are 2D in the basic case. Every
operation here also accepts stacked inputs and acts on the last two
axes, which is how the imaging code batches over kernels.

Conventions, used consistently by all downstream modules:
  * the DC bin of a centered spectrum sits at (rows // 2, cols // 2);
  * the forward transform is unnormalized, the inverse carries the
    1 / (rows * cols) factor.
"""

import numpy as np
import scipy.fft as sfft

from .errors import DimensionError

_AXES = (-2, -1)


def _check_grid(g, name="grid"):
    if g.ndim < 2:
        raise DimensionError(f"{name} must have at least 2 axes, got shape {g.shape}")
    if g.shape[-2] < 1 or g.shape[-1] < 1:
        raise DimensionError(f"{name} has empty image axes: shape {g.shape}")


def fft2_centered(g):
    """2D DFT with the zero-frequency bin moved to (rows//2, cols//2).

    Unnormalized forward transform; `ifft2_centered` is its exact
    inverse. A unit impulse at the grid center maps to a spectrum of
    unit magnitude everywhere.
    """
    g = np.asarray(g)
    _check_grid(g)
    return sfft.fftshift(sfft.fft2(g, axes=_AXES), axes=_AXES)


def ifft2_centered(g):
    """Inverse of fft2_centered, including the 1/(rows*cols) factor."""
    g = np.asarray(g)
    _check_grid(g)
    return sfft.ifft2(sfft.ifftshift(g, axes=_AXES), axes=_AXES)


def center_crop(g, n, m):
    """Extract the central n x m window of a centered spectrum.

    The window's center bin (n//2, m//2) coincides with the DC bin of
    `g`. Requires n, m odd and no larger than the source axes.
    """
    g = np.asarray(g)
    _check_grid(g)
    n = int(n)
    m = int(m)
    if n % 2 == 0 or m % 2 == 0:
        raise DimensionError(f"crop dims must be odd, got ({n}, {m})")
    if n < 1 or m < 1 or n > g.shape[-2] or m > g.shape[-1]:
        raise DimensionError(
            f"crop dims ({n}, {m}) out of range for grid {g.shape[-2:]}"
        )
    r0 = g.shape[-2] // 2 - n // 2
    c0 = g.shape[-1] // 2 - m // 2
    return g[..., r0:r0 + n, c0:c0 + m]


def center_embed(g, n, m):
    """Zero-pad a grid to n x m with its center on the new DC bin.

    Inverse of center_crop on the small grid: cropping an embedded grid
    back to its original odd dims returns it unchanged.
    """
    g = np.asarray(g)
    _check_grid(g)
    n = int(n)
    m = int(m)
    rows, cols = g.shape[-2], g.shape[-1]
    if n < rows or m < cols:
        raise DimensionError(
            f"embed dims ({n}, {m}) smaller than source {g.shape[-2:]}"
        )
    out = np.zeros(g.shape[:-2] + (n, m), dtype=g.dtype)
    r0 = n // 2 - rows // 2
    c0 = m // 2 - cols // 2
    out[..., r0:r0 + rows, c0:c0 + cols] = g
    return out


def magnitude_sq(g):
    """Elementwise squared magnitude re^2 + im^2 as a real grid."""
    g = np.asarray(g)
    return g.real ** 2 + g.imag ** 2
