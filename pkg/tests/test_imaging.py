import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import SCENARIO_DIR
from lissense.channel import ChannelSnapshot, PowerFrame, channel_at, sample_power
from lissense.imaging import (
    RAW_FLATTEN,
    RESIZED,
    Dataset,
    average_frames,
    export_pgm,
    import_pgm,
    read_manifest,
    to_features,
    to_image,
    write_manifest,
)


def frame_from(w, noise_var=1.0, position=0, sample=0):
    return PowerFrame(position_index=position, sample_index=sample,
                      w=np.asarray(w, dtype=float), noise_var=noise_var)


class TestAverageFrames:
    def test_single_frame_identity(self):
        f = frame_from([1.0, 2.0, 3.0])
        out = average_frames([f])
        np.testing.assert_array_equal(out.w, f.w)

    def test_constant_frames_unchanged(self):
        frames = [frame_from([4.0, 5.0]) for _ in range(7)]
        out = average_frames(frames)
        np.testing.assert_array_equal(out.w, [4.0, 5.0])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            average_frames([])

    def test_mixed_positions_rejected(self):
        with pytest.raises(ValueError):
            average_frames([frame_from([1.0], position=0), frame_from([1.0], position=1)])

    def test_large_s_converges_to_conditional_mean(self, small_scene):
        snap = channel_at(small_scene, [4.0, 3.0, 1.0])
        noise_var = float(snap.g.mean())
        rng = np.random.default_rng(11)
        frames = [sample_power(snap, noise_var, rng, sample_index=0)
                  for _ in range(100_000)]
        out = average_frames(frames)
        np.testing.assert_allclose(out.w, snap.g + noise_var, rtol=0.01)

    def test_variance_shrinks_by_s(self, small_scene):
        snap = channel_at(small_scene, [4.0, 3.0, 1.0])
        noise_var = float(snap.g.mean())
        rng = np.random.default_rng(3)
        s = 8
        trials = 1_000
        averaged = np.empty((trials, snap.num_elements))
        singles = np.empty((trials, snap.num_elements))
        for t in range(trials):
            group = [sample_power(snap, noise_var, rng) for _ in range(s)]
            averaged[t] = average_frames(group).w
            singles[t] = sample_power(snap, noise_var, rng).w
        ratio = singles.var(axis=0).mean() / averaged.var(axis=0).mean()
        assert ratio == pytest.approx(s, rel=0.10)


class TestToImage:
    def test_flat_frame_maps_to_zeros(self):
        img = to_image(frame_from([1.0, 1.0, 1.0, 1.0]), 2, 2)
        assert img.pixels.tolist() == [[0, 0], [0, 0]]

    def test_three_level_mapping(self):
        # ceil((2 - 0) * 255 / 4) = ceil(127.5) = 128
        img = to_image(frame_from([0.0, 2.0, 4.0]), 1, 3)
        assert img.pixels.tolist() == [[0, 128, 255]]

    def test_extremes_hit_0_and_255(self, small_scene):
        snap = channel_at(small_scene, [4.0, 3.0, 1.0])
        frame = sample_power(snap, float(snap.g.mean()), seed=9)
        img = to_image(frame, 8, 8)
        assert img.pixels.min() == 0
        assert img.pixels.max() == 255

    @given(st.integers(min_value=0, max_value=2**32 - 1),
           st.floats(min_value=0.1, max_value=100.0),
           st.floats(min_value=-5.0, max_value=5.0))
    @settings(max_examples=50, deadline=None)
    def test_affine_invariance(self, seed, scale, shift):
        w = np.random.default_rng(seed).uniform(0.0, 10.0, 16)
        base = to_image(frame_from(w), 4, 4)
        offset = shift if w.min() * scale + shift >= 0 else -w.min() * scale
        moved = to_image(frame_from(w * scale + offset), 4, 4)
        assert np.array_equal(base.pixels, moved.pixels)

    def test_wrong_size_rejected(self):
        with pytest.raises(ValueError):
            to_image(frame_from([1.0, 2.0]), 2, 2)


class TestToFeatures:
    def test_raw_flatten(self):
        from lissense.imaging import RadioImage

        img = RadioImage(pixels=np.array([[0, 255], [255, 0]]), position_index=0)
        vec = to_features(img, mode=RAW_FLATTEN)
        np.testing.assert_array_equal(vec.values, [0.0, 1.0, 1.0, 0.0])

    def test_identity_resize_matches_raw(self):
        from lissense.imaging import RadioImage

        rng = np.random.default_rng(2)
        img = RadioImage(pixels=rng.integers(0, 256, (6, 5)), position_index=0)
        raw = to_features(img, mode=RAW_FLATTEN)
        same = to_features(img, mode=RESIZED, size=(6, 5))
        np.testing.assert_array_equal(raw.values, same.values)

    def test_constant_image_resizes_to_constant(self):
        from lissense.imaging import RadioImage

        img = RadioImage(pixels=np.full((4, 4), 100), position_index=0)
        up = to_features(img, mode=RESIZED, size=(9, 7))
        np.testing.assert_allclose(up.values, 100.0 / 255.0)
        assert up.dim == 63

    def test_upsampling_preserves_range(self):
        from lissense.imaging import RadioImage

        rng = np.random.default_rng(5)
        img = RadioImage(pixels=rng.integers(0, 256, (8, 8)), position_index=0)
        up = to_features(img, mode=RESIZED, size=(32, 32))
        assert up.values.min() >= 0.0 and up.values.max() <= 1.0


class TestPgm:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_round_trip(self, tmp_path, seed):
        from lissense.imaging import RadioImage

        rng = np.random.default_rng(seed)
        img = RadioImage(pixels=rng.integers(0, 256, (5, 9)), position_index=seed)
        path = tmp_path / f"img{seed}.pgm"
        export_pgm(img, str(path))
        again = import_pgm(str(path), position_index=seed)
        assert np.array_equal(again.pixels, img.pixels)

    def test_rejects_non_pgm(self, tmp_path):
        path = tmp_path / "nope.pgm"
        path.write_bytes(b"P6\n1 1\n255\nxxx")
        with pytest.raises(ValueError):
            import_pgm(str(path))


class TestManifest:
    def test_inline_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        ds = Dataset(
            features=rng.uniform(0, 1, (6, 4)),
            position_index=np.array([0, 0, 1, 1, 2, 2]),
            labels=np.array(["correct"] * 4 + ["anomalous"] * 2),
            sample_index=np.arange(6),
        )
        path = tmp_path / "manifest.csv"
        write_manifest(ds, str(path))
        again = read_manifest(str(path))
        np.testing.assert_allclose(again.features, ds.features)
        assert list(again.labels) == list(ds.labels)

    def test_image_path_round_trip(self, tmp_path):
        from lissense.imaging import RadioImage

        rng = np.random.default_rng(4)
        pixels = rng.integers(0, 256, (2, 4, 4))
        paths = []
        for i in range(2):
            p = tmp_path / f"img{i}.pgm"
            export_pgm(RadioImage(pixels=pixels[i], position_index=i), str(p))
            paths.append(str(p))
        ds = Dataset(
            features=pixels.reshape(2, -1) / 255.0,
            position_index=np.array([0, 1]),
            labels=np.array(["correct", "correct"]),
            sample_index=np.array([0, 0]),
        )
        manifest = tmp_path / "m.csv"
        write_manifest(ds, str(manifest), image_paths=paths)
        again = read_manifest(str(manifest))
        np.testing.assert_allclose(again.features, ds.features)


class TestDenoisingMonotonicity:
    def test_average_image_approaches_noiseless(self):
        # distance to the noiseless image should not increase with S; needs
        # the fringe-rich shipped scene so the pattern dominates the floor
        from lissense.channel import load_scene

        scene = load_scene(str(SCENARIO_DIR / "industrial_scene.yaml"))
        snap = channel_at(scene, [11.0, 3.0, 1.0])
        noise_var = float(snap.g.mean())
        clean = to_image(frame_from(snap.g, noise_var), 32, 32).pixels.astype(float)
        rng = np.random.default_rng(21)
        trials = 100
        violations = 0
        for _ in range(trials):
            dists = []
            for s in (1, 10, 100):
                frames = [sample_power(snap, noise_var, rng) for _ in range(s)]
                img = to_image(average_frames(frames), 32, 32).pixels.astype(float)
                dists.append(np.linalg.norm(img - clean))
            violations += dists[0] < dists[1] or dists[1] < dists[2]
        assert violations <= 0.05 * trials
