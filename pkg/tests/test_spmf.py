import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posenas import data_model as dm
from posenas import spmf


def seq_of(data, fps=30.0):
    return dm.PoseSequence(np.asarray(data, dtype=float), fps)


random_seqs = st.builds(
    lambda seed, t, m: np.random.default_rng(seed).normal(size=(t, m, 3)) * 200,
    st.integers(0, 2**16), st.integers(2, 12), st.integers(2, 17))


def test_pose_map_cases():
    assert np.all(spmf.pose_map(seq_of(np.random.default_rng(0).normal(size=(1, 5, 3)))) == 0.5)
    d = np.zeros((2, 3, 3))
    d[0, 1, 2], d[1, 1, 2] = -4.0, 9.0
    pm = spmf.pose_map(seq_of(d))
    assert pm.shape == (3, 2, 3)
    assert pm[1, 0, 2] == 0.0 and pm[1, 1, 2] == 1.0


@settings(max_examples=30, deadline=None)
@given(data=random_seqs, scale=st.floats(0.1, 10.0), shift=st.floats(-1e3, 1e3))
def test_pose_map_scale_and_translation_invariance(data, scale, shift):
    base = spmf.pose_map(seq_of(data))
    np.testing.assert_allclose(spmf.pose_map(seq_of(data * scale)), base, atol=1e-12)
    np.testing.assert_allclose(spmf.pose_map(seq_of(data + shift)), base, atol=1e-9)
    np.testing.assert_allclose(spmf.motion_map(seq_of(data + shift)), spmf.motion_map(seq_of(data)), atol=1e-9)


def test_motion_map_cases():
    const = seq_of(np.ones((4, 3, 3)) * 7.0)
    assert np.all(spmf.motion_map(const) == 0.5)
    step = np.zeros((2, 1, 3))
    step[1, 0, 0] = 0.1
    mm = spmf.motion_map(seq_of(step, fps=30.0), motion_scale=0.05)
    assert mm[0, 0, 0] == pytest.approx(0.5 + 0.05 * 30.0 * 0.1, abs=1e-12)
    big = step * 100
    assert spmf.motion_map(seq_of(big))[0, 0, 0] == 1.0
    with pytest.raises(ValueError):
        spmf.motion_map(seq_of(np.zeros((1, 2, 3))))


def test_motion_map_time_reversal_antisymmetry(rng):
    d = rng.normal(size=(6, 4, 3))
    fwd = spmf.motion_map(seq_of(d), motion_scale=1e-3) - 0.5
    rev = spmf.motion_map(seq_of(d[::-1]), motion_scale=1e-3) - 0.5
    np.testing.assert_allclose(rev, -fwd[:, ::-1], atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(data=random_seqs, colormap=st.sampled_from(["linear_rgb", "jet"]), enhance=st.booleans())
def test_encode_range_shape_determinism(data, colormap, enhance):
    cfg = spmf.EncoderConfig(16, 24, colormap, enhance)
    a = spmf.encode(seq_of(data), cfg)
    b = spmf.encode(seq_of(data), cfg)
    assert a.pixels.shape == (16, 24, 3)
    assert a.pixels.min() >= 0.0 and a.pixels.max() <= 1.0
    np.testing.assert_array_equal(a.pixels, b.pixels)


def test_encode_separates_classes():
    cfg = dm.SynthConfig(num_classes=2, samples_per_class=6)
    images = spmf.encode_samples(dm.generate_synthetic_actions(cfg, 0))
    x = np.stack([im.pixels.ravel() for im in images])
    y = np.array([im.label for im in images])
    intra = np.mean([np.linalg.norm(x[i] - x[j]) for i in range(len(y)) for j in range(i + 1, len(y))
                     if y[i] == y[j]])
    inter = np.mean([np.linalg.norm(x[i] - x[j]) for i in range(len(y)) for j in range(len(y)) if y[i] != y[j]])
    assert inter > intra


def test_equalization_conventions(rng):
    const = np.full((4, 4), 0.3)
    np.testing.assert_array_equal(spmf.equalize_channel(const), const)
    uniform = (np.arange(256 * 4) // 4 + 0.5) / 256
    out = spmf.equalize_channel(uniform.reshape(32, 32))
    assert np.abs(out.ravel() - uniform).max() <= 1 / 256
    c = rng.random((8, 8))
    e = spmf.equalize_channel(c)
    # monotone: order of distinct values preserved
    order = np.argsort(c.ravel())
    assert np.all(np.diff(e.ravel()[order]) >= 0)
    # one value per bin: ranks are preserved exactly (rank correlation 1)
    distinct = (rng.permutation(64) * 4 + 0.5) / 256
    ed = spmf.equalize_channel(distinct.reshape(8, 8)).ravel()
    assert np.array_equal(np.argsort(ed), np.argsort(distinct))


def test_jet_endpoints():
    np.testing.assert_allclose(spmf.jet(0.0), [0.0, 0.0, 0.5])
    np.testing.assert_allclose(spmf.jet(1.0), [0.5, 0.0, 0.0])
    np.testing.assert_allclose(spmf.jet(0.5), [0.5, 1.0, 0.5])


def test_resize_corners_and_identity(rng):
    img = rng.random((5, 7, 3))
    np.testing.assert_allclose(spmf.resize_bilinear(img, 5, 7), img)
    out = spmf.resize_bilinear(img, 11, 13)
    np.testing.assert_allclose(out[[0, 0, -1, -1], [0, -1, 0, -1]], img[[0, 0, -1, -1], [0, -1, 0, -1]])


def test_config_validation():
    with pytest.raises(ValueError):
        spmf.EncoderConfig(4, 32)
    with pytest.raises(ValueError):
        spmf.EncoderConfig(colormap="viridis")
    assert spmf.EncoderConfig().digest() != spmf.EncoderConfig(enhance=False).digest()


def test_image_cache_round_trip(tmp_path, synth_samples):
    cfg = spmf.EncoderConfig(16, 16)
    images = spmf.encode_samples(synth_samples[:4], cfg)
    images[0].split_tag = "test"
    path = tmp_path / "c.txt"
    spmf.write_image_cache(path, images, cfg)
    back = spmf.read_image_cache(path, cfg)
    assert [im.sample_id for im in back] == [im.sample_id for im in images]
    assert back[0].split_tag == "test" and back[1].split_tag is None
    for a, b in zip(images, back):
        np.testing.assert_array_equal(a.pixels, b.pixels)
    with pytest.raises(ValueError):
        spmf.read_image_cache(path, spmf.EncoderConfig(16, 16, enhance=False))
