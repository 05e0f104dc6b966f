"""Coordinate-based complex-valued MLP over the kernel support.

The network maps a positional encoding of each kernel-support
coordinate to r complex kernel values, so a single forward pass over
the (n*m)-point coordinate grid materializes a full kernel stack.
Structure: CLinear -> (CLinear -> CReLU) x N -> CLinear, with CReLU
acting independently on real and imaginary parts.

Real-valued sinusoid encodings are lifted into the complex field by
the constant factor (1 + 1j); the "none" encoder lifts the raw
normalized coordinates the same way.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError
from .optics import KernelStack

_LIFT = 1.0 + 1.0j


@dataclass(frozen=True)
class CoordGrid:
    """Row-major (n*m) x 2 grid of kernel-bin coordinates in [0, 1]^2."""

    n: int
    m: int
    coords: np.ndarray

    def __post_init__(self):
        if self.coords.shape != (self.n * self.m, 2):
            raise DimensionError(
                f"coords shape {self.coords.shape} does not match ({self.n * self.m}, 2)"
            )


def make_coord_grid(n, m):
    """Enumerate bins (i, j) row-major as (i/(n-1), j/(m-1)). Needs n, m >= 2."""
    if n < 2 or m < 2:
        raise ConfigError(f"coordinate grid needs dims >= 2, got ({n}, {m})")
    i = np.repeat(np.arange(n), m)
    j = np.tile(np.arange(m), n)
    coords = np.stack([i / (n - 1), j / (m - 1)], axis=1)
    return CoordGrid(n=n, m=m, coords=coords)


@dataclass(frozen=True)
class RffEncoder:
    """Random Fourier features: gamma(v) = [cos(2 pi B v), sin(2 pi B v)] * (1+1j).

    B is l x 2 with entries drawn from N(0, sigma^2), fixed per seed.
    """

    l: int = 256
    sigma: float = 10.0
    seed: int = 7
    B: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.l < 1:
            raise ConfigError(f"RFF feature count must be >= 1, got {self.l}")
        if self.sigma <= 0:
            raise ConfigError(f"RFF sigma must be positive, got {self.sigma}")
        rng = np.random.default_rng(self.seed)
        object.__setattr__(self, "B", rng.normal(0.0, self.sigma, (self.l, 2)))

    @property
    def width(self):
        return 2 * self.l

    def encode(self, grid):
        proj = 2.0 * np.pi * grid.coords @ self.B.T
        return np.concatenate([np.cos(proj), np.sin(proj)], axis=1) * _LIFT

    def spec(self):
        return {"type": "rff", "features": self.l, "sigma": self.sigma, "seed": self.seed}


@dataclass(frozen=True)
class NerfEncoder:
    """Octave sinusoids per coordinate component, lifted by (1+1j).

    Component c maps to [sin(2^k pi c), cos(2^k pi c)] for k < L,
    giving 4L features per coordinate pair.
    """

    octaves: int = 10

    def __post_init__(self):
        if self.octaves < 1:
            raise ConfigError(f"octave count must be >= 1, got {self.octaves}")

    @property
    def width(self):
        return 4 * self.octaves

    def encode(self, grid):
        blocks = []
        for c in grid.coords.T:
            for k in range(self.octaves):
                w = (2.0 ** k) * np.pi
                blocks.append(np.sin(w * c))
                blocks.append(np.cos(w * c))
        return np.stack(blocks, axis=1) * _LIFT

    def spec(self):
        return {"type": "nerf", "octaves": self.octaves}


@dataclass(frozen=True)
class RawEncoder:
    """No positional encoding: raw [x, y] coordinates lifted by (1+1j)."""

    @property
    def width(self):
        return 2

    def encode(self, grid):
        return grid.coords.astype(np.complex128) * _LIFT

    def spec(self):
        return {"type": "none"}


def encoder_from_spec(spec):
    """Rebuild an encoder from its self-describing dict."""
    kind = spec.get("type")
    if kind == "rff":
        return RffEncoder(l=int(spec["features"]), sigma=float(spec["sigma"]),
                          seed=int(spec["seed"]))
    if kind == "nerf":
        return NerfEncoder(octaves=int(spec["octaves"]))
    if kind == "none":
        return RawEncoder()
    raise ConfigError(f"unknown encoder type {kind!r}")


def crelu(z):
    """Complex ReLU: rectify real and imaginary parts independently."""
    z = np.asarray(z)
    return np.maximum(z.real, 0) + 1j * np.maximum(z.imag, 0)


@dataclass
class CMlpParams:
    """Ordered complex layers: weights[i] is (out, in), biases[i] is (out,)."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionError("need equally many weight and bias arrays, at least one")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.ndim != 1 or W.shape[0] != b.shape[0]:
                raise DimensionError(f"layer {i}: weight {W.shape} / bias {b.shape} mismatch")
            if i > 0 and W.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionError(
                    f"layer {i} input dim {W.shape[1]} does not chain from "
                    f"layer {i - 1} output {self.weights[i - 1].shape[0]}"
                )

    @property
    def widths(self):
        return [self.weights[0].shape[1]] + [W.shape[0] for W in self.weights]

    @property
    def out_width(self):
        return self.weights[-1].shape[0]

    def copy(self):
        return CMlpParams(
            weights=[W.copy() for W in self.weights],
            biases=[b.copy() for b in self.biases],
        )

    def astype(self, dtype):
        return CMlpParams(
            weights=[W.astype(dtype) for W in self.weights],
            biases=[b.astype(dtype) for b in self.biases],
        )


def init_params(widths, seed, out_scale=1.0):
    """Complex Glorot-style initialization, deterministic per seed.

    Weight magnitudes are Rayleigh with scale 1/sqrt(fan_in + fan_out)
    (second moment 2/(fan_in + fan_out)), phases uniform on [0, 2 pi),
    biases zero. The final layer is scaled by out_scale so training can
    start from near-zero kernels.
    """
    if len(widths) < 2:
        raise ConfigError("need at least input and output widths")
    if any(w < 1 for w in widths):
        raise ConfigError(f"widths must be positive, got {widths}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for din, dout in zip(widths[:-1], widths[1:]):
        scale = 1.0 / np.sqrt(din + dout)
        mag = rng.rayleigh(scale, (dout, din))
        phase = rng.uniform(0.0, 2.0 * np.pi, (dout, din))
        weights.append(mag * np.exp(1j * phase))
        biases.append(np.zeros(dout, dtype=np.complex128))
    weights[-1] = weights[-1] * out_scale
    return CMlpParams(weights=weights, biases=biases)


def forward_with_cache(params, features):
    """Evaluate the network, keeping per-layer inputs and preactivations.

    Layer 0 and the final layer are plain CLinear; every layer in
    between is CLinear followed by CReLU. Returns (output, cache) where
    output is (n*m) x r.
    """
    if features.shape[1] != params.weights[0].shape[1]:
        raise DimensionError(
            f"feature width {features.shape[1]} does not match input layer "
            f"width {params.weights[0].shape[1]}"
        )
    nl = len(params.weights)
    acts = [features]
    pre = []
    a = features
    for i in range(nl):
        z = a @ params.weights[i].T + params.biases[i]
        pre.append(z)
        a = crelu(z) if 1 <= i < nl - 1 else z
        acts.append(a)
    return a, (acts, pre)


def backward_through_layers(params, cache, g_out):
    """Backpropagate an output cotangent through all layers.

    Treats real and imaginary parts of every parameter as independent
    reals: for Y = X W^T + b the cotangents are G_W = G_Y^T conj(X),
    G_b = column sums of G_Y, G_X = G_Y conj(W); CReLU gates real and
    imaginary parts on the sign of the preactivation. Returns
    (weight grads, bias grads, input grad).
    """
    acts, pre = cache
    nl = len(params.weights)
    gw = [None] * nl
    gb = [None] * nl
    g = g_out
    for i in reversed(range(nl)):
        if 1 <= i < nl - 1:
            z = pre[i]
            g = (z.real > 0) * g.real + 1j * ((z.imag > 0) * g.imag)
        gw[i] = g.T @ np.conj(acts[i])
        gb[i] = g.sum(axis=0)
        g = g @ np.conj(params.weights[i])
    return gw, gb, g


def cmlp_forward(params, features, n, m, *, wavelength_nm=float("nan"),
                 numerical_aperture=float("nan"), pixel_size_nm=float("nan")):
    """Evaluate the network over encoded coordinates into a kernel stack.

    The (n*m) x r output transposes and reshapes to r kernels of n x m,
    tagged with provenance "learned".
    """
    out, _ = forward_with_cache(params, features)
    if out.shape[0] != n * m:
        raise DimensionError(
            f"feature row count {out.shape[0]} does not match kernel support {n}x{m}"
        )
    r = out.shape[1]
    return KernelStack(
        kernels=np.ascontiguousarray(out.T.reshape(r, n, m)),
        wavelength_nm=wavelength_nm,
        numerical_aperture=numerical_aperture,
        pixel_size_nm=pixel_size_nm,
        provenance="learned",
    )
