import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hasaseg.backends import CorruptionSpec, OracleBackend
from hasaseg.pipeline import (POLICIES, AugmentSpec, TrainingSample, assemble_sample, augment,
                              build_guess_mask, build_guess_volume, build_manifest, expand, read_manifest,
                              split_counts, split_ids, write_manifest)
from hasaseg.prompts import JitterSpec
from hasaseg.sdm import SdmSpec
from hasaseg.volumes import Ellipsoid, LabelVolume, PhantomSpec, Volume3D, generate_phantom

from oracles import resample_manual


@pytest.fixture(scope="module")
def phantom():
    spec = PhantomSpec(shape=(32, 32, 24), semi_axes=(7, 6, 5), center=(10, 15.5, 11.5),
                       distractors=[Ellipsoid((5, 5, 4), (24, 15, 11))], seed=3)
    return generate_phantom(spec)


def test_identity_oracle_reproduces_prior(phantom):
    t1, label = phantom
    guess, prompts = build_guess_mask(t1, label, OracleBackend(label), JitterSpec(3, 1))
    assert isinstance(guess, LabelVolume)
    np.testing.assert_array_equal(guess.data, label.data)
    assert len(prompts) == int(label.data.any(axis=(0, 1)).sum())
    raw = build_guess_volume(t1, label, OracleBackend(label), policy="guess_raw")
    np.testing.assert_array_equal(raw.data, label.data)


def test_dilated_oracle_is_superset(phantom):
    t1, label = phantom
    backend = OracleBackend(label, CorruptionSpec(dilation_radius=2))
    guess, _ = build_guess_mask(t1, label, backend)
    assert np.all(guess.data[label.data.astype(bool)])
    assert guess.count > label.count


def test_guess_sdm_range(phantom):
    t1, label = phantom
    sdm = build_guess_volume(t1, label, OracleBackend(label), sdm=SdmSpec(), policy="guess_sdm")
    assert sdm.data.min() > 0 and sdm.data.max() < 1
    with pytest.raises(ValueError):
        build_guess_volume(t1, label, OracleBackend(label), policy="t2")


def test_channel_zero_shared_across_policies(phantom):
    t1, label = phantom
    second = Volume3D(np.full(t1.shape, 0.5, np.float32))
    samples = [assemble_sample(t1, second, label, p) for p in POLICIES]
    for s in samples[1:]:
        np.testing.assert_array_equal(s.channels[0], samples[0].channels[0])
    by = {s.policy: s for s in samples}
    assert by["t1_only"].n_channels == 1
    assert not by["blank"].channels[1].any()
    np.testing.assert_array_equal(by["guess_raw"].channels[1], second.data)
    # T2 is intensity-normalized; a constant volume maps to zero
    assert not by["t2"].channels[1].any()


def test_assemble_errors(phantom):
    t1, label = phantom
    with pytest.raises(ValueError):
        assemble_sample(t1, None, label, "guess_sdm")
    with pytest.raises(ValueError):
        assemble_sample(t1, None, label, "flair")
    with pytest.raises(ValueError):
        assemble_sample(t1, Volume3D(np.full(t1.shape, 2.0)), label, "guess_raw")


def test_identity_augmentation(phantom):
    t1, label = phantom
    s = assemble_sample(t1, None, label, "t1_only", "p0")
    out = augment(s, AugmentSpec.identity(), 1)
    np.testing.assert_allclose(out.channels, s.channels, atol=1e-6)
    np.testing.assert_array_equal(out.label, s.label)


def small_sample(seed):
    r = np.random.default_rng(seed)
    t1 = Volume3D(r.random((9, 8, 7)))
    m = np.zeros((9, 8, 7), np.uint8)
    m[2:7, 2:6, 2:5] = 1
    guess = Volume3D(r.random((9, 8, 7)))
    return assemble_sample(t1, guess, LabelVolume(m), "guess_sdm", f"s{seed}")


@pytest.mark.parametrize("seed", [0, 1])
def test_augment_matches_manual_resampling(seed):
    s = small_sample(seed)
    spec = AugmentSpec(copies=2, gamma_range=(1, 1), noise_std_max=0, rotate_max_deg=10,
                       translate_max=1.5, seed=seed)
    out = augment(s, spec, 1)
    for c in range(2):
        np.testing.assert_allclose(out.channels[c], resample_manual(s.channels[c], out.transform, 1),
                                   atol=1e-5)
    np.testing.assert_array_equal(out.label, resample_manual(s.label, out.transform, 0))


def test_augment_shared_transform_and_guess_untouched():
    s = small_sample(4)
    spec = AugmentSpec(copies=2, seed=9)
    out = augment(s, spec, 1)
    geometric = AugmentSpec(copies=2, gamma_range=(1, 1), noise_std_max=0, seed=9)
    ref = augment(s, geometric, 1)
    np.testing.assert_array_equal(out.transform, ref.transform)
    # intensity jitter only on channel 0
    np.testing.assert_array_equal(out.channels[1], ref.channels[1])
    np.testing.assert_array_equal(out.label, ref.label)
    assert not np.array_equal(out.channels[0], ref.channels[0])
    assert out.channels[0].min() >= 0 and out.channels[0].max() <= 1


def test_augment_deterministic_and_expand():
    s = small_sample(2)
    spec = AugmentSpec(copies=3, seed=1)
    a, b = augment(s, spec, 2), augment(s, spec, 2)
    np.testing.assert_array_equal(a.channels, b.channels)
    copies = expand(s, spec)
    assert len(copies) == 3 and copies[0] is s
    assert [c.augmentation_tag for c in copies] == ["orig", "aug1", "aug2"]
    assert not np.array_equal(copies[1].channels, copies[2].channels)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_augmented_label_stays_binary(seed):
    s = small_sample(seed % 50)
    out = augment(s, AugmentSpec(copies=2, seed=seed), 1)
    assert set(np.unique(out.label)) <= {0, 1}
    assert out.channels.shape == s.channels.shape


def subjects(n):
    return [{"id": f"p{i:03d}"} for i in range(n)]


def test_manifest_splits():
    m = build_manifest(subjects(10), (0.6, 0.2, 0.2), seed=0)
    assert [len(split_ids(m, k)) for k in ("train", "val", "test")] == [6, 2, 2]
    one = build_manifest(subjects(1), (0.6, 0.2, 0.2))
    assert [len(split_ids(one, k)) for k in ("train", "val", "test")] == [1, 0, 0]
    assert build_manifest(subjects(10), seed=5) == build_manifest(subjects(10), seed=5)
    assert build_manifest(subjects(10), seed=5) != build_manifest(subjects(10), seed=6)
    with pytest.raises(ValueError):
        build_manifest([], seed=0)
    with pytest.raises(ValueError):
        build_manifest(subjects(3), (0.5, 0.2, 0.2))


@settings(max_examples=60)
@given(st.integers(1, 300), st.lists(st.integers(0, 20), min_size=3, max_size=3).filter(any))
def test_split_counts_partition(n, weights):
    fr = np.array(weights, float) / sum(weights)
    counts = split_counts(n, fr)
    assert sum(counts) == n
    assert all(abs(c - f * n) < 1 for c, f in zip(counts, fr))


def test_manifest_round_trip(tmp_path):
    m = build_manifest(subjects(7), seed=2, policy="guess_sdm", augment_spec=AugmentSpec())
    write_manifest(m, tmp_path / "m.json")
    assert read_manifest(tmp_path / "m.json") == m
    ids = sum((split_ids(m, k) for k in ("train", "val", "test")), [])
    assert sorted(ids) == [s["id"] for s in subjects(7)]


def test_coordinate_grid_follows_label():
    # channel 1 carries the x coordinate; after augmentation it must read back the
    # source coordinate the shared transform assigns to each output voxel
    n = (20, 18, 16)
    label = np.zeros(n, np.uint8)
    label[8:12, 7:11, 6:10] = 1
    coords = np.indices(n)[0].astype(np.float32)
    s = TrainingSample(np.stack([coords / 19, coords / 19]), label, "grid")
    spec = AugmentSpec(copies=2, gamma_range=(1, 1), noise_std_max=0, rotate_max_deg=8,
                       translate_max=1.0, seed=2)
    out = augment(s, spec, 1)
    src = np.einsum("ij,jxyz->ixyz", out.transform[:3, :3], np.indices(n)) \
        + out.transform[:3, 3, None, None, None]
    inside = np.all([(src[k] >= 0) & (src[k] <= n[k] - 1) for k in range(3)], axis=0)
    np.testing.assert_allclose(out.channels[1][inside] * 19, src[0][inside], atol=1e-4)
    # label voxels land where the transformed coordinates fall inside the source box
    near = np.floor(src + 0.5).astype(int)
    expected = label[tuple(np.clip(near[k], 0, n[k] - 1) for k in range(3))]
    np.testing.assert_array_equal(out.label, expected)


def test_regenerate_hook_replaces_guess_channel():
    s = small_sample(5)
    seen = []

    def rebuild(t):
        seen.append(t)
        return np.full(s.shape, 0.25, np.float32)

    spec = AugmentSpec(copies=3, seed=4, regenerate_guesses=True)
    copies = expand(s, spec, rebuild)
    assert len(seen) == 2
    np.testing.assert_array_equal(seen[0], copies[1].transform)
    assert np.all(copies[2].channels[1] == 0.25)
    np.testing.assert_array_equal(copies[0].channels, s.channels)
