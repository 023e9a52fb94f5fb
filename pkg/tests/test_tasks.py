import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpunroll.errors import ConfigError, ShapeError
from fpunroll.metrics import psnr
from fpunroll.tasks import (
    CHROMA_TABLE,
    LUMA_TABLE,
    TaskMix,
    TaskSpec,
    augment,
    awgn,
    dct_matrix,
    dihedral,
    jpeg_degrade,
    load_corpus,
    quality_tables,
    read_pnm,
    resize_bicubic,
    resize_matrix,
    sample_batch,
    sisr_degrade,
    synthetic_corpus,
    synthetic_image,
    write_pnm,
)


def keys_kernel(t):
    t = abs(t)
    if t <= 1:
        return 1.5 * t**3 - 2.5 * t**2 + 1
    if t < 2:
        return -0.5 * t**3 + 2.5 * t**2 - 4 * t + 2
    return 0.0


def reference_resize_1d(x, out_len, antialias=True):
    """Direct per-output-pixel evaluation over a wide index range with clamping."""
    n = len(x)
    s = out_len / n
    shrink = antialias and s < 1
    out = []
    for o in range(out_len):
        centre = (o + 0.5) / s - 0.5  # 0-based source coordinate
        wsum = acc = 0.0
        for j in range(-50, n + 50):
            d = centre - j
            w = s * keys_kernel(s * d) if shrink else keys_kernel(d)
            wsum += w
            acc += w * x[min(max(j, 0), n - 1)]
        out.append(acc / wsum)
    return np.array(out)


# -- awgn ---------------------------------------------------------------------


def test_awgn_zero_sigma_bitwise():
    img = np.random.default_rng(0).uniform(size=(8, 8, 3))
    out = awgn(img, 0.0, key=(1, 2))
    assert np.array_equal(out, img)


def test_awgn_moments():
    img = np.full((400, 300), 0.5)
    sigma = 25.0
    n = (awgn(img, sigma, key=(7, 3)) - img) * 255 / sigma
    assert n.size >= 10**5
    assert abs(n.mean()) < 0.01
    assert abs(n.var() - 1) < 0.01


def test_awgn_deterministic_and_unclipped():
    img = np.ones((32, 32))
    a = awgn(img, 50, key=(3, 4))
    assert np.array_equal(a, awgn(img, 50, key=(3, 4)))
    assert not np.array_equal(a, awgn(img, 50, key=(3, 5)))
    assert a.max() > 1.0


# -- resize ----------------------------------------------------------------------


def test_resize_identity():
    img = np.random.default_rng(1).uniform(size=(9, 7, 3))
    assert np.max(np.abs(resize_bicubic(img, 9, 7) - img)) <= 1e-12


@pytest.mark.parametrize("dims", [(1, 1), (3, 5), (17, 4), (40, 40)])
def test_resize_constant(dims):
    img = np.full((12, 10, 3), 0.37)
    for aa in (True, False):
        out = resize_bicubic(img, *dims, antialias=aa)
        assert out.shape == dims + (3,)
        assert np.max(np.abs(out - 0.37)) <= 1e-12


def test_resize_row_oracle():
    x = np.array([0.0, 1.0, 2.0, 3.0])
    got = resize_bicubic(x[None, :], 1, 2, antialias=True)[0]
    ref = reference_resize_1d(x, 2, antialias=True)
    assert np.max(np.abs(got - ref)) <= 1e-10


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.booleans())
def test_resize_matrix_rows_sum_to_one(n_in, n_out, aa):
    M = resize_matrix(n_in, n_out, aa)
    assert np.max(np.abs(M.sum(axis=1) - 1)) <= 1e-12
    x = np.random.default_rng(n_in * 31 + n_out).uniform(size=n_in)
    assert np.max(np.abs(M @ x - reference_resize_1d(x, n_out, aa))) <= 1e-10


# -- sisr -----------------------------------------------------------------------------


@pytest.mark.parametrize("s", [2, 3, 4, 8])
def test_sisr_dims_and_constant(s):
    img = np.full((24, 20, 3), 0.6)
    out = sisr_degrade(img, s)
    assert out.shape == img.shape
    assert np.max(np.abs(out - 0.6)) <= 1e-12
    rng_img = np.random.default_rng(s).uniform(size=(19, 23, 3))
    out = sisr_degrade(rng_img, s)
    assert out.shape == rng_img.shape
    assert out.min() >= 0 and out.max() <= 1


def test_sisr_low_frequency_survives():
    x = np.arange(64)
    for s in (2, 3, 4):
        low = 0.5 + 0.4 * np.sin(2 * np.pi * x / 32)
        high = 0.5 + 0.4 * np.sin(2 * np.pi * x / (2 * s))
        low2 = np.tile(low, (64, 1))
        high2 = np.tile(high, (64, 1))
        assert psnr(sisr_degrade(low2, s), low2) > psnr(sisr_degrade(high2, s), high2)


def test_sisr_too_small():
    with pytest.raises(ShapeError):
        sisr_degrade(np.zeros((3, 10)), 4)


# -- jpeg ----------------------------------------------------------------------------------


def test_quality_50_tables_are_base():
    luma, chroma = quality_tables(50)
    assert np.array_equal(luma, LUMA_TABLE)
    assert np.array_equal(chroma, CHROMA_TABLE)


def test_quality_tables_formula():
    luma, _ = quality_tables(10)
    assert np.array_equal(luma, np.maximum(1, np.floor(LUMA_TABLE * 5 + 0.5)))
    luma, _ = quality_tables(100)
    assert np.all(luma == 1)


def test_dct_orthonormal():
    C = dct_matrix(8)
    assert np.allclose(C @ C.T, np.eye(8), atol=1e-14)


def test_jpeg_constant_block():
    # single block, brute-force: DC only, quantised with half-step error at most
    for v in (0.0, 0.2, 0.5, 0.73, 0.99):
        img = np.full((8, 8), v)
        dc = 8 * (255 * v - 128)  # orthonormal 2-D DCT of a constant block
        q = LUMA_TABLE[0, 0]
        expected = np.clip((np.round(dc / q) * q / 8 + 128) / 255, 0, 1)
        out = jpeg_degrade(img, 50)
        assert np.allclose(out, expected, atol=1e-12)
        assert np.ptp(out) <= 1e-12
        assert abs(dc - np.round(dc / q) * q) <= q / 2
    # exact half-step tie (dc = 1016, q = 16): either neighbour is acceptable
    out = jpeg_degrade(np.ones((8, 8)), 50)
    assert np.ptp(out) <= 1e-12 and abs(out[0, 0] - 1) <= 8 / 8 / 255 + 1e-12


def test_jpeg_constant_color_stays_constant():
    img = np.empty((13, 21, 3))
    img[:] = [0.2, 0.5, 0.9]
    out = jpeg_degrade(img, 30)
    assert np.max(np.ptp(out.reshape(-1, 3), axis=0)) <= 1e-12


def test_jpeg_quality_monotone_and_range():
    img = synthetic_image(48, np.random.default_rng(3))
    img = np.clip(img + 0.05 * np.random.default_rng(4).standard_normal(img.shape), 0, 1)
    o10, o50 = jpeg_degrade(img, 10), jpeg_degrade(img, 50)
    assert psnr(o10, img) < psnr(o50, img)
    for o in (o10, o50):
        assert o.shape == img.shape and o.min() >= 0 and o.max() <= 1
    # blocking: jumps across 8-pixel block boundaries dominate jumps inside blocks
    d = np.abs(np.diff(o10, axis=1)).mean(axis=(0, 2))
    boundary = d[7::8].mean()
    inner = np.delete(d, np.arange(7, d.size, 8)).mean()
    assert boundary > inner


@pytest.mark.parametrize("q", [10, 30, 50])
def test_jpeg_near_idempotent(q):
    img = synthetic_image(40, np.random.default_rng(q))
    once = jpeg_degrade(img, q)
    twice = jpeg_degrade(once, q)
    assert np.max(np.abs(twice - once)) <= 2 / 255


# -- augmentation ------------------------------------------------------------------------------


def test_dihedral_identity_and_involution():
    p = np.random.default_rng(0).uniform(size=(6, 6, 3))
    assert np.array_equal(dihedral(p, 0), p)
    flipped = dihedral(p, 4)
    assert np.array_equal(dihedral(flipped, 4), p)
    outs = {dihedral(p, k).tobytes() for k in range(8)}
    assert len(outs) == 8


def test_augment_uniform():
    from scipy.stats import chisquare

    p = np.arange(4.0).reshape(2, 2)
    keys = {dihedral(p, k).tobytes(): k for k in range(8)}
    rng = np.random.default_rng(11)
    counts = np.zeros(8)
    for _ in range(10_000):
        counts[keys[augment(p, rng).tobytes()]] += 1
    freq = counts / 10_000
    # each transform's frequency within 0.05 of its share in relative terms
    # would be a ~2 sigma bound per bin; check absolute 1% plus a chi-square fit
    assert np.all(np.abs(freq - 1 / 8) <= 0.01)
    assert chisquare(counts).pvalue > 1e-3


def test_augment_requires_square():
    with pytest.raises(ShapeError):
        augment(np.zeros((4, 5)), np.random.default_rng(0))


# -- TaskSpec / mix ----------------------------------------------------------------------------------


def test_taskspec_validation():
    with pytest.raises(ConfigError):
        TaskSpec("deblur", 1)
    with pytest.raises(ConfigError):
        TaskSpec("jpeg", 0)
    with pytest.raises(ConfigError):
        TaskSpec("sisr", 2.5)
    with pytest.raises(ConfigError):
        TaskMix(weights={"blur": 1.0})


# -- files and corpus -----------------------------------------------------------------------------------


def test_pnm_round_trip(tmp_path):
    img = np.round(np.random.default_rng(0).uniform(size=(5, 7, 3)) * 255) / 255
    write_pnm(tmp_path / "a.ppm", img)
    assert np.array_equal(read_pnm(tmp_path / "a.ppm"), img)
    gray = img[..., 0]
    write_pnm(tmp_path / "b.pgm", gray)
    back = read_pnm(tmp_path / "b.pgm")
    assert back.shape == (5, 7, 3)
    assert np.array_equal(back[..., 2], gray)


def test_corpus_manifest_order(tmp_path):
    for name in ("c.ppm", "a.ppm", "b.pgm"):
        write_pnm(tmp_path / name, np.zeros((4, 4, 3)) if name.endswith("ppm") else np.zeros((4, 4)))
    corpus = load_corpus(tmp_path)
    assert [n for n, _ in corpus] == ["a.ppm", "b.pgm", "c.ppm"]
    assert (tmp_path / "manifest.txt").read_text().split() == ["a.ppm", "b.pgm", "c.ppm"]


def test_corpus_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_corpus(tmp_path / "missing")
    with pytest.raises(ConfigError):
        load_corpus(tmp_path)


# -- sample_batch ---------------------------------------------------------------------------------------


@pytest.fixture(scope="module")
def corpus():
    return synthetic_corpus(6, 64, seed=0)


def test_sample_batch_shapes(corpus):
    b = sample_batch(corpus, 48, 16, TaskMix(), seed=0, step=0, workers=1)
    assert b.f_task.shape == (16, 48, 48, 3)
    assert b.u_gt.shape == (16, 48, 48, 3)
    assert len(b.specs) == 16
    assert b.u_gt.min() >= 0 and b.u_gt.max() <= 1
    assert np.all(np.isfinite(b.f_task))


def test_sample_batch_zero_noise_identity(corpus):
    mix = TaskMix(weights={"gdn": 1.0}, sigma_range=(0.0, 0.0))
    b = sample_batch(corpus, 16, 8, mix, seed=1, step=3, workers=1)
    assert np.array_equal(b.f_task, b.u_gt)
    assert np.array_equal(b.u_gt[..., 0], b.u_gt[..., 2])


def test_sample_batch_control_paths_share_clean_patch(corpus):
    b = sample_batch(corpus, 16, 8, TaskMix(weights={"sisr": 1.0}, scales=(1,)), seed=2, step=0, workers=1)
    assert np.max(np.abs(b.f_task - b.u_gt)) <= 1e-12
    b = sample_batch(corpus, 16, 8, TaskMix(weights={"jpeg": 1.0}, qualities=(100,)), seed=2, step=0, workers=1)
    assert np.max(np.abs(b.f_task - b.u_gt)) <= 2 / 255


def test_sample_batch_deterministic_and_worker_independent(corpus):
    a = sample_batch(corpus, 24, 12, TaskMix(), seed=5, step=7, workers=1)
    b = sample_batch(corpus, 24, 12, TaskMix(), seed=5, step=7, workers=4)
    c = sample_batch(corpus, 24, 12, TaskMix(), seed=5, step=8, workers=1)
    assert np.array_equal(a.f_task, b.f_task) and np.array_equal(a.u_gt, b.u_gt)
    assert a.specs == b.specs
    assert not np.array_equal(a.u_gt, c.u_gt)


def test_sample_batch_env_threads(corpus, monkeypatch):
    monkeypatch.setenv("FPUNROLL_THREADS", "3")
    a = sample_batch(corpus, 16, 6, TaskMix(), seed=0, step=0)
    monkeypatch.setenv("FPUNROLL_THREADS", "1")
    b = sample_batch(corpus, 16, 6, TaskMix(), seed=0, step=0)
    assert np.array_equal(a.f_task, b.f_task)


def test_sample_batch_errors(corpus):
    with pytest.raises(ConfigError):
        sample_batch([], 16, 2, TaskMix(), 0, 0)
    with pytest.raises(ConfigError):
        sample_batch(corpus, 65, 2, TaskMix(), 0, 0)


def test_sample_batch_draws_all_kinds(corpus):
    b = sample_batch(corpus, 16, 64, TaskMix(), seed=0, step=0, workers=1)
    kinds = {s.kind for s in b.specs}
    assert kinds == {"gdn", "cdn", "sisr", "jpeg"}
    for s in b.specs:
        if s.kind in ("gdn", "cdn"):
            assert 0 <= s.param <= 75
        elif s.kind == "sisr":
            assert s.param in (2, 3, 4, 8)
        else:
            assert s.param in (10, 20, 30, 40, 50)
