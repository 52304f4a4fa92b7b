import numpy as np
import pytest

from anomsynth import vibe
from anomsynth.errors import ContractError
from anomsynth.frameio import Frame, SceneSpec, default_scene_doc, gen_scene
from anomsynth.segmenter import iou
from anomsynth.vibe import VibeParams, classify, init_model, step

from conftest import small_scene_doc


def test_params_validated():
    with pytest.raises(ContractError):
        VibeParams(samples_per_pixel=1, min_matches=2)
    with pytest.raises(ContractError):
        VibeParams(match_radius=0)
    with pytest.raises(ContractError):
        VibeParams(subsample_factor=0)


class TestInit:
    def test_constant_frame(self):
        m = init_model(np.full((6, 5), 42, np.uint8))
        assert m.samples.shape == (20, 6, 5)
        assert np.all(m.samples == 42)

    def test_single_pixel(self):
        m = init_model(np.array([[9]], np.uint8), VibeParams(samples_per_pixel=7, seed=3))
        assert m.samples.shape == (7, 1, 1) and np.all(m.samples == 9)

    def test_samples_come_from_neighbourhood(self, rng):
        img = rng.integers(0, 256, size=(7, 9), dtype=np.uint8)
        m = init_model(img, VibeParams(seed=5))
        H, W = img.shape
        for y in range(H):
            for x in range(W):
                hood = {int(img[min(max(y + dy, 0), H - 1), min(max(x + dx, 0), W - 1)])
                        for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)}
                assert set(m.samples[:, y, x].tolist()) <= hood

    def test_deterministic(self, rng):
        img = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
        a = init_model(img, VibeParams(seed=1))
        b = init_model(img, VibeParams(seed=1))
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_rejects_rgb_frame(self):
        with pytest.raises(ContractError):
            init_model(Frame(np.zeros((2, 2, 3), np.uint8)))


class TestStep:
    def test_identical_frame_is_background(self):
        img = np.full((10, 10), 100, np.uint8)
        m = init_model(img)
        assert not step(m, img).any()

    def test_far_pixel_is_foreground(self):
        img = np.full((10, 10), 100, np.uint8)
        m = init_model(img)
        probe = img.copy()
        probe[4, 6] = 100 + 21
        probe[2, 2] = 100 + 20
        fg = step(m, probe)
        assert fg[4, 6] and not fg[2, 2]
        assert fg.sum() == 1

    def test_classification_matches_count(self, rng):
        m = init_model(rng.integers(0, 256, size=(6, 6), dtype=np.uint8), VibeParams(seed=2))
        img = rng.integers(0, 256, size=(6, 6), dtype=np.uint8)
        fg = classify(m, img)
        for y in range(6):
            for x in range(6):
                d = np.abs(m.samples[:, y, x].astype(int) - int(img[y, x]))
                assert fg[y, x] == (np.count_nonzero(d <= 20) < 2)

    def test_dimension_mismatch(self):
        m = init_model(np.zeros((4, 4), np.uint8))
        with pytest.raises(ContractError):
            step(m, np.zeros((4, 5), np.uint8))

    def test_sample_count_invariant(self, rng):
        img = rng.integers(90, 110, size=(12, 12), dtype=np.uint8)
        m = init_model(img, VibeParams(seed=4, subsample_factor=1))
        for _ in range(20):
            step(m, rng.integers(90, 110, size=(12, 12), dtype=np.uint8))
            assert m.samples.shape == (20, 12, 12)

    def test_conservative_update_only_writes_background_values(self, rng):
        img = np.full((16, 16), 100, np.uint8)
        m = init_model(img, VibeParams(seed=8, subsample_factor=1))
        probe = img.copy()
        probe[6:10, 6:10] = 240
        step(m, probe)
        # interior foreground pixels have no background neighbour to receive writes from
        assert np.all(m.samples[:, 7:9, 7:9] == 100)

    def test_deterministic_masks(self):
        scene = gen_scene(SceneSpec.from_dict(small_scene_doc(length=20, seed=1)))
        grays = [f.gray() for f in scene.frames]
        a = vibe.run(grays, VibeParams(seed=9))
        b = vibe.run(grays, VibeParams(seed=9))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_static_video_foreground_rate():
    doc = {**default_scene_doc(length=60, anomaly_fraction=0.0), "sprites": []}
    frames = [f.gray() for f in gen_scene(SceneSpec.from_dict(doc)).frames]
    masks = vibe.run(frames, VibeParams(seed=1))
    assert np.mean([m.mean() for m in masks[25:]]) < 0.01


def test_moving_square_iou():
    scene = gen_scene(SceneSpec.from_dict({**small_scene_doc(length=60), "noise_std": 2.0}))
    masks = vibe.run([f.gray() for f in scene.frames], VibeParams(seed=2))
    scores = [iou(m, t) for m, t in zip(masks[25:], scene.sprite_truth[25:])]
    assert min(scores) >= 0.7


def test_stopped_sprite_persists():
    """A sprite that freezes stays foreground for a long time under conservative updates."""
    durations = []
    for seed in range(4):
        rng = np.random.default_rng(seed)
        bg = np.full((32, 32), 80, np.uint8)
        frames = [np.clip(bg + rng.normal(0, 2, bg.shape), 0, 255).astype(np.uint8) for _ in range(5)]
        stopped = bg.copy()
        stopped[12:20, 12:20] = 200
        m = init_model(frames[0], VibeParams(seed=seed))
        for f in frames:
            step(m, f)
        t = 0
        while t < 400:
            noisy = np.clip(stopped + rng.normal(0, 2, bg.shape), 0, 255).astype(np.uint8)
            if step(m, noisy)[12:20, 12:20].mean() < 0.5:
                break
            t += 1
        durations.append(t)
    # phi * N / 2 = 160 frames, with a 50% tolerance
    assert np.mean(durations) >= 80
