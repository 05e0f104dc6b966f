import numpy as np
import pytest

from lithokit.errors import ConfigError, DimensionError
from lithokit.grid import fft2_centered, ifft2_centered, center_embed
from lithokit.optics import (ImagingConfig, abbe_image, assemble_tcc,
                             build_pupil, build_source, coverage_rank,
                             decompose_tcc, oracle_kernels, resist_image,
                             socs_image, support_frequencies, tcc_spectrum)

CFG = ImagingConfig()  # 193 nm, NA 1.35, annular 0.5-0.8, grid 15


def small_cfg(**kw):
    base = dict(source_grid=9)
    base.update(kw)
    return ImagingConfig(**base)


# -- pupil -------------------------------------------------------------------

def test_pupil_passes_dc():
    pupil = build_pupil(CFG)
    assert pupil(np.array(0.0), np.array(0.0)) == 1.0


def test_pupil_blocks_beyond_cutoff():
    pupil = build_pupil(CFG)
    f = 1.01 * pupil.cutoff_frequency
    assert pupil(np.array(f), np.array(0.0)) == 0.0


def test_pupil_cutoff_value():
    pupil = build_pupil(CFG)
    assert pupil.cutoff_frequency == pytest.approx(1.35 / 193.0, rel=1e-12)


# -- source ------------------------------------------------------------------

def test_point_source_is_single_centered_point():
    src = build_source(ImagingConfig(source_shape="point"))
    assert src.count == 1
    assert src.f[0] == 0.0 and src.g[0] == 0.0
    assert src.weights[0] == 1.0


def test_circular_source_points_inside_disk_with_equal_weights():
    cfg = ImagingConfig(source_shape="circular", sigma_fill=1.0, source_grid=11)
    src = build_source(cfg)
    na_over_lambda = cfg.numerical_aperture / cfg.wavelength_nm
    rho = np.hypot(src.f, src.g) / na_over_lambda
    assert np.all(rho <= 1.0 + 1e-12)
    assert np.allclose(src.weights, src.weights[0])
    assert src.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_annular_source_count_matches_grid_scan():
    cfg = ImagingConfig(source_shape="annular", sigma_inner=0.5,
                        sigma_outer=0.8, source_grid=21)
    src = build_source(cfg)
    # independent brute-force count over the same sampling lattice
    ax = np.linspace(-0.8, 0.8, 21)
    count = 0
    for x in ax:
        for y in ax:
            if 0.5 <= np.hypot(x, y) <= 0.8:
                count += 1
    assert src.count == count
    assert src.weights.sum() == pytest.approx(1.0, abs=1e-12)


def test_too_coarse_source_grid_raises():
    # a single-point grid sits at the origin, inside the annular hole
    with pytest.raises(ConfigError):
        build_source(ImagingConfig(source_shape="annular", sigma_inner=0.5,
                                   sigma_outer=0.8, source_grid=1))


def test_invalid_configs_rejected():
    with pytest.raises(ConfigError):
        ImagingConfig(numerical_aperture=1.5)
    with pytest.raises(ConfigError):
        ImagingConfig(wavelength_nm=-1)
    with pytest.raises(ConfigError):
        ImagingConfig(source_shape="annular", sigma_inner=0.9, sigma_outer=0.8)
    with pytest.raises(ConfigError):
        ImagingConfig(source_shape="dipole")


# -- TCC -----------------------------------------------------------------------

def test_point_source_tcc_is_rank_one_pupil_outer_product():
    cfg = ImagingConfig(source_shape="point")
    src = build_source(cfg)
    pupil = build_pupil(cfg)
    tcc = assemble_tcc(src, pupil, 5, 5, 1.0 / 64)
    fr, fc = support_frequencies(5, 5, 1.0 / 64)
    h = pupil(fr, fc)
    assert np.allclose(tcc.matrix, np.outer(h, h.conj()), atol=1e-15)
    vals = tcc_spectrum(tcc)
    assert np.sum(vals > 1e-10 * vals[0]) == 1


def test_tcc_hermitian_exactly():
    src = build_source(small_cfg())
    tcc = assemble_tcc(src, build_pupil(CFG), 5, 5, 1.0 / 64)
    assert np.array_equal(tcc.matrix, tcc.matrix.conj().T)


def test_tcc_matches_brute_force_triple_loop():
    # straight-line reimplementation: explicit loops over (s, p, q)
    cfg = small_cfg()
    src = build_source(cfg)
    pupil = build_pupil(cfg)
    n = m = 5
    step = 1.0 / 64
    tcc = assemble_tcc(src, pupil, n, m, step)

    def H(f, g):
        return 1.0 if np.hypot(f, g) <= cfg.numerical_aperture / cfg.wavelength_nm else 0.0

    bins = [((a - n // 2) * step, (b - m // 2) * step)
            for a in range(n) for b in range(m)]
    brute = np.zeros((n * m, n * m), dtype=complex)
    for s in range(src.count):
        for p, (fp, gp) in enumerate(bins):
            for q, (fq, gq) in enumerate(bins):
                brute[p, q] += (src.weights[s]
                                * H(src.f[s] + fp, src.g[s] + gp)
                                * np.conj(H(src.f[s] + fq, src.g[s] + gq)))
    assert np.max(np.abs(tcc.matrix - brute)) < 1e-12
    vals = tcc_spectrum(tcc)
    assert np.all(vals >= 0)


def test_tcc_rejects_bad_support():
    src = build_source(small_cfg())
    pupil = build_pupil(CFG)
    with pytest.raises(DimensionError):
        assemble_tcc(src, pupil, 4, 5, 1.0 / 64)
    with pytest.raises(ConfigError):
        assemble_tcc(src, pupil, 5, 5, 0.0)


# -- decomposition -------------------------------------------------------------

def test_rank_one_tcc_reconstructs_from_single_kernel():
    cfg = ImagingConfig(source_shape="point")
    tcc = assemble_tcc(build_source(cfg), build_pupil(cfg), 5, 5, 1.0 / 64)
    stack = decompose_tcc(tcc, 1)
    k = stack.kernels[0].reshape(-1)
    assert np.max(np.abs(np.outer(k, k.conj()) - tcc.matrix)) < 1e-10


def test_eigenvalues_sorted_descending_nonnegative():
    src = build_source(small_cfg())
    tcc = assemble_tcc(src, build_pupil(CFG), 5, 5, 1.0 / 64)
    vals = tcc_spectrum(tcc)
    assert np.all(np.diff(vals) <= 1e-15)
    assert np.all(vals >= 0)


def test_reconstruction_error_nonincreasing_in_rank():
    src = build_source(small_cfg())
    tcc = assemble_tcc(src, build_pupil(CFG), 5, 5, 1.0 / 64)
    stack = decompose_tcc(tcc, tcc.dim)
    flat = stack.kernels.reshape(tcc.dim, tcc.dim)
    norm = np.linalg.norm(tcc.matrix)
    errs = []
    for r in range(1, tcc.dim + 1):
        approx = flat[:r].T @ flat[:r].conj()
        errs.append(np.linalg.norm(tcc.matrix - approx) / norm)
    assert all(b <= a + 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-10


def test_oracle_kernels_are_mutually_orthogonal():
    stack, _ = oracle_kernels(CFG, 64, 5, 5, r=10)
    flat = stack.kernels.reshape(stack.r, -1)
    gram = flat @ flat.conj().T
    norms = np.sqrt(np.diag(gram).real)
    for i in range(stack.r):
        for j in range(i + 1, stack.r):
            assert abs(gram[i, j]) <= 1e-8 * max(norms[i] * norms[j], 1e-30)


def test_decompose_deterministic_sign_convention():
    src = build_source(small_cfg())
    tcc = assemble_tcc(src, build_pupil(CFG), 5, 5, 1.0 / 64)
    a = decompose_tcc(tcc, 6)
    b = decompose_tcc(tcc, 6)
    assert np.array_equal(a.kernels, b.kernels)
    for i in range(a.r):
        flat = a.kernels[i].reshape(-1)
        top = flat[np.argmax(np.abs(flat))]
        assert abs(top.imag) < 1e-12 * max(abs(top.real), 1e-300)
        assert top.real >= 0


def test_decompose_rejects_excess_rank():
    src = build_source(small_cfg())
    tcc = assemble_tcc(src, build_pupil(CFG), 5, 5, 1.0 / 64)
    with pytest.raises(ConfigError):
        decompose_tcc(tcc, tcc.dim + 1)


def test_coverage_rank_boundaries():
    spectrum = np.array([4.0, 3.0, 2.0, 1.0])
    assert coverage_rank(spectrum, 0.4) == 1
    assert coverage_rank(spectrum, 0.7) == 2
    assert coverage_rank(spectrum, 1.0) == 4


# -- aerial images ---------------------------------------------------------------

def test_zero_mask_gives_zero_aerial():
    stack, _ = oracle_kernels(CFG, 64, 5, 5, r=8)
    aerial = socs_image(stack, np.zeros((64, 64)))
    assert np.all(aerial == 0)


def test_clear_field_normalizes_to_one():
    m = n = 5
    stack, _ = oracle_kernels(CFG, 64, n, m, r=n * m)
    aerial = socs_image(stack, np.ones((64, 64)))
    assert np.max(np.abs(aerial - 1.0)) < 1e-6


def test_point_source_socs_matches_abbe_on_square():
    cfg = ImagingConfig(source_shape="point")
    size = 256
    n = m = 9
    mask = np.zeros((size, size))
    mask[78:178, 80:180] = 1.0  # 100 x 100 nm opening
    stack, _ = oracle_kernels(cfg, size, n, m, r=n * m)
    socs = socs_image(stack, mask)
    abbe = abbe_image(build_source(cfg), build_pupil(cfg), mask,
                      pixel_size_nm=cfg.pixel_size_nm)
    assert np.max(np.abs(socs - abbe)) < 1e-8


def test_point_source_abbe_reduces_to_coherent_imaging():
    cfg = ImagingConfig(source_shape="point")
    pupil = build_pupil(cfg)
    rng = np.random.default_rng(8)
    mask = (rng.random((64, 64)) > 0.6).astype(float)
    fr = (np.arange(64) - 32) / 64.0
    FR, FC = np.meshgrid(fr, fr, indexing="ij")
    field = ifft2_centered(pupil(FR, FC) * fft2_centered(mask.astype(complex)))
    coherent = np.abs(field) ** 2
    abbe = abbe_image(build_source(cfg), pupil, mask)
    assert np.max(np.abs(abbe - coherent)) < 1e-12


def test_full_rank_socs_equals_abbe():
    cfg = small_cfg()
    size = 64
    m, n = 9, 9
    rng = np.random.default_rng(9)
    mask = (rng.random((size, size)) > 0.7).astype(float)
    stack, _ = oracle_kernels(cfg, size, n, m, r=n * m)
    socs = socs_image(stack, mask)
    abbe = abbe_image(build_source(cfg), build_pupil(cfg), mask)
    rel = np.linalg.norm(socs - abbe) / np.linalg.norm(abbe)
    assert rel < 1e-6


def test_truncated_socs_close_to_abbe_at_high_coverage():
    cfg = small_cfg()
    size = 64
    rng = np.random.default_rng(10)
    mask = (rng.random((size, size)) > 0.7).astype(float)
    stack, spectrum = oracle_kernels(cfg, size, 9, 9, coverage=0.9999)
    assert stack.r < 81
    socs = socs_image(stack, mask)
    abbe = abbe_image(build_source(cfg), build_pupil(cfg), mask)
    rel = np.linalg.norm(socs - abbe) / np.linalg.norm(abbe)
    assert rel < 1e-3


def test_socs_rejects_kernels_larger_than_mask():
    stack, _ = oracle_kernels(CFG, 64, 9, 9, r=4)
    with pytest.raises(DimensionError):
        socs_image(stack, np.ones((8, 8)))


def test_socs_thread_partials_reduce_deterministically():
    stack, _ = oracle_kernels(CFG, 64, 9, 9, r=12)
    rng = np.random.default_rng(11)
    mask = (rng.random((64, 64)) > 0.6).astype(float)
    a = socs_image(stack, mask, threads=3)
    b = socs_image(stack, mask, threads=3)
    assert np.array_equal(a, b)
    c = socs_image(stack, mask, threads=1)
    assert np.max(np.abs(a - c)) < 1e-12


def test_band_limit_spectra_outside_support_do_not_matter():
    size = 64
    n = m = 9
    stack, _ = oracle_kernels(CFG, size, n, m, r=10)
    rng = np.random.default_rng(12)
    base = rng.random((size, size))
    # add a real perturbation whose spectrum lives outside the n x m support
    bump = np.zeros((size, size), dtype=complex)
    bump[32 + 20, 32 + 15] = 3.0 + 2.0j
    bump[32 - 20, 32 - 15] = np.conj(bump[32 + 20, 32 + 15])
    perturbed = base + ifft2_centered(bump).real * size * size
    ia = socs_image(stack, base)
    ib = socs_image(stack, perturbed)
    assert np.max(np.abs(ia - ib)) < 1e-10


def test_translation_equivariance():
    stack, _ = oracle_kernels(CFG, 64, 9, 9, r=10)
    rng = np.random.default_rng(13)
    mask = (rng.random((64, 64)) > 0.7).astype(float)
    dx, dy = 7, 13
    rolled = np.roll(mask, (dx, dy), axis=(0, 1))
    ia = socs_image(stack, mask)
    ib = socs_image(stack, rolled)
    assert np.max(np.abs(np.roll(ia, (dx, dy), axis=(0, 1)) - ib)) < 1e-8


def test_eigenvalue_decay_at_desk_scale():
    for cfg in (CFG, ImagingConfig(source_shape="circular", sigma_fill=0.8)):
        _, spectrum = oracle_kernels(cfg, 256, 9, 9, r=1)
        assert spectrum[59] / spectrum[0] < 1e-3


# -- resist ----------------------------------------------------------------------

def test_resist_threshold_boundary_inclusive():
    aerial = np.full((4, 4), 0.5)
    assert np.all(resist_image(aerial, 0.5) == 1.0)


def test_resist_zero_image_all_background():
    assert np.all(resist_image(np.zeros((4, 4)), 0.225) == 0.0)


def test_resist_monotone_in_threshold():
    rng = np.random.default_rng(14)
    aerial = rng.random((32, 32))
    low = resist_image(aerial, 0.2)
    high = resist_image(aerial, 0.6)
    assert np.all(high <= low)
