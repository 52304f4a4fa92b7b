import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from anomsynth import synthesis
from anomsynth.errors import ContractError
from anomsynth.frameio import Frame, SceneSpec, gen_scene, write_video
from anomsynth.maskops import Blob
from anomsynth.synthesis import (FrameCache, MaskConfig, SegmenterConfig, SynthesisConfig, choose_placement,
                                 inpaint_region, pick_blob, synthesize)

from conftest import small_scene_doc


def square_blob(x, y, w=4, h=4):
    return Blob(x, y, w, h, np.ones((h, w), bool))


def cache_with_counts(counts, shape=(10, 10), bbox=(2, 2, 4, 4)):
    cache = FrameCache(len(counts))
    x, y, w, h = bbox
    for i, c in enumerate(counts):
        m = np.zeros(shape, bool)
        m[y:y + h, x:x + w].flat[:c] = True
        cache.push(f"f{i}", Frame(np.full(shape, i * 10, np.uint8)), m)
    return cache


class TestPickBlob:
    def test_single_and_empty(self, rng):
        b = square_blob(0, 0)
        assert pick_blob([b], rng) is b
        assert pick_blob([], rng) is None

    def test_same_seed_same_choice(self):
        blobs = [square_blob(i, 0) for i in range(5)]
        picks = [pick_blob(blobs, np.random.default_rng(42)) for _ in range(3)]
        assert picks[0] is picks[1] is picks[2]

    def test_uniform_frequencies(self):
        blobs = [square_blob(i, 0) for i in range(4)]
        counts = np.zeros(4)
        for s in range(10_000):
            counts[blobs.index(pick_blob(blobs, np.random.default_rng(s)))] += 1
        assert np.all(np.abs(counts / 10_000 - 0.25) <= 0.03)


class TestPlacement:
    def test_single_eligible_pixel(self, rng):
        blob = square_blob(0, 0)
        eligible = np.zeros((20, 20), bool)
        eligible[12, 14] = True
        ox, oy = blob.centroid_offset()
        assert choose_placement(blob, eligible, blob.bbox, rng) == (14 - ox, 12 - oy)

    def test_only_under_source_fails(self, rng):
        blob = square_blob(5, 5)
        eligible = np.zeros((20, 20), bool)
        eligible[5:9, 5:9] = True
        assert choose_placement(blob, eligible, blob.bbox, rng) is None

    def test_nothing_eligible(self, rng):
        blob = square_blob(5, 5)
        assert choose_placement(blob, np.zeros((20, 20), bool), blob.bbox, rng) is None

    def test_random_scenes_respect_constraints(self):
        for s in range(1000):
            rng = np.random.default_rng(s)
            H, W = int(rng.integers(10, 30)), int(rng.integers(10, 30))
            w, h = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            mask = rng.random((h, w)) < 0.7
            mask[0, 0] = True
            blob = Blob(int(rng.integers(0, W - w + 1)), int(rng.integers(0, H - h + 1)), w, h, mask)
            eligible = rng.random((H, W)) < rng.uniform(0.01, 0.5)
            dst = choose_placement(blob, eligible, blob.bbox, rng)
            if dst is None:
                continue
            ox, oy = blob.centroid_offset()
            x0, y0 = dst
            assert eligible[y0 + oy, x0 + ox]
            assert 0 <= x0 and 0 <= y0 and x0 + w <= W and y0 + h <= H
            shift = np.hypot(x0 - blob.x, y0 - blob.y)
            assert shift >= max(w, h)


class TestInpaint:
    def test_minimum_chosen(self):
        patch, fid, count = inpaint_region(cache_with_counts([5, 0, 3]), (2, 2, 4, 4))
        assert fid == "f1" and count == 0
        assert np.all(patch == 10) and patch.shape == (4, 4)

    def test_tie_goes_to_recent(self):
        _, fid, count = inpaint_region(cache_with_counts([2, 2]), (2, 2, 4, 4))
        assert fid == "f1" and count == 2

    def test_empty_cache(self):
        with pytest.raises(ContractError):
            inpaint_region(FrameCache(3), (0, 0, 1, 1))

    @given(st.lists(st.integers(0, 16), min_size=1, max_size=12))
    def test_matches_brute_force(self, counts):
        _, fid, count = inpaint_region(cache_with_counts(counts), (2, 2, 4, 4))
        best = min(counts)
        assert count == best
        assert fid == f"f{len(counts) - 1 - counts[::-1].index(best)}"

    def test_ring_capacity(self):
        cache = FrameCache(3)
        for i in range(5):
            cache.push(str(i), Frame(np.zeros((2, 2), np.uint8)), np.zeros((2, 2), bool))
        assert cache.ids() == ["2", "3", "4"]


class TestSynthesize:
    def setup_method(self):
        rng = np.random.default_rng(3)
        self.frame = Frame(rng.integers(0, 256, size=(16, 20), dtype=np.uint8))
        self.blob = Blob(2, 3, 5, 4, rng.random((4, 5)) < 0.6)

    def test_empty_paste_only_inpaints(self):
        patch = np.zeros((4, 5), np.uint8)
        s = synthesize(self.frame, self.blob, np.zeros((4, 5), bool), (10, 8), patch)
        expected = self.frame.data.copy()
        expected[3:7, 2:7] = 0
        np.testing.assert_array_equal(s.image.data, expected)
        assert s.pasted_pixels == 0

    def test_identity_composition(self):
        patch = self.frame.data[3:7, 2:7].copy()
        s = synthesize(self.frame, self.blob, self.blob.mask, (2, 3), patch)
        np.testing.assert_array_equal(s.image.data, self.frame.data)

    def test_paste_is_exact(self):
        patch = np.zeros((4, 5), np.uint8)
        s = synthesize(self.frame, self.blob, self.blob.mask, (12, 9), patch)
        region = s.image.data[9:13, 12:17]
        np.testing.assert_array_equal(region[self.blob.mask], self.frame.data[3:7, 2:7][self.blob.mask])
        np.testing.assert_array_equal(region[~self.blob.mask], self.frame.data[9:13, 12:17][~self.blob.mask])

    @given(st.integers(0, 10**6))
    def test_diff_inside_boxes(self, seed):
        rng = np.random.default_rng(seed)
        H, W = int(rng.integers(6, 20)), int(rng.integers(6, 20))
        shape = (H, W, 3) if rng.random() < 0.3 else (H, W)
        frame = Frame(rng.integers(0, 256, size=shape, dtype=np.uint8))
        w, h = int(rng.integers(1, W // 2)), int(rng.integers(1, H // 2))
        blob = Blob(int(rng.integers(0, W - w + 1)), int(rng.integers(0, H - h + 1)), w, h, rng.random((h, w)) < .5)
        dst = (int(rng.integers(0, W - w + 1)), int(rng.integers(0, H - h + 1)))
        patch = rng.integers(0, 256, size=(h, w) + shape[2:], dtype=np.uint8)
        out = synthesize(frame, blob, rng.random((h, w)) < .5, dst, patch).image.data
        diff = out != frame.data
        if diff.ndim == 3:
            diff = diff.any(axis=2)
        allowed = np.zeros((H, W), bool)
        allowed[blob.y:blob.y + h, blob.x:blob.x + w] = True
        allowed[dst[1]:dst[1] + h, dst[0]:dst[0] + w] = True
        assert not np.any(diff & ~allowed)

    def test_contract_errors(self):
        good = np.zeros((4, 5), np.uint8)
        with pytest.raises(ContractError):
            synthesize(self.frame, self.blob, np.zeros((3, 5), bool), (0, 0), good)
        with pytest.raises(ContractError):
            synthesize(self.frame, self.blob, self.blob.mask, (0, 0), np.zeros((4, 4), np.uint8))
        with pytest.raises(ContractError):
            synthesize(self.frame, self.blob, self.blob.mask, (17, 0), good)


def synth_settings(vicinity=2):
    return {"synthesis": {}, "maskops": {"open_radius": 1, "close_radius": 1, "min_area": None},
            "vicinity": vicinity}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    scene = gen_scene(SceneSpec.from_dict(small_scene_doc(length=50)))
    root = tmp_path_factory.mktemp("synth")
    ids = write_video(scene.frames, root / "in")
    seg = SegmenterConfig(epochs=2, max_frames=6)
    res = synthesis.run_synthesis(ids, scene.frames, seed=1, seg_cfg=seg, vicinity=2)
    synthesis.write_dataset(res, ids, root / "out", root / "in", synth_settings())
    return res, root, scene, ids


class TestPipeline:

    def test_produces_samples(self, dataset):
        res, _, _, ids = dataset
        assert res.samples
        assert all(s.source_frame_id not in {d["frame_id"] for d in res.skipped if "sample_index" not in d}
                   for s in res.samples)

    def test_verify_replays_everything(self, dataset):
        _, root, _, _ = dataset
        rep = synthesis.verify_dataset(root / "out")
        assert rep.ok and rep.replayed == rep.records > 0

    def test_tampered_image_detected(self, dataset, tmp_path):
        import shutil
        _, root, _, _ = dataset
        shutil.copytree(root / "out", tmp_path / "out")
        first = json.loads((tmp_path / "out" / "manifest.json").read_text())["records"][0]["image"]
        raw = bytearray((tmp_path / "out" / first).read_bytes())
        raw[-1] ^= 0xFF
        (tmp_path / "out" / first).write_bytes(bytes(raw))
        rep = synthesis.verify_dataset(tmp_path / "out", root / "in")
        assert not rep.ok and rep.mismatches == [first]

    def test_inpaint_is_minimal_every_event(self, dataset):
        res, _, _, ids = dataset
        index = {fid: i for i, fid in enumerate(ids)}
        for s in res.samples:
            x, y, w, h = s.src_bbox
            counts = [int(res.masks[index[c]][y:y + h, x:x + w].sum()) for c in s.cache_ids]
            assert s.inpaint_count == min(counts)

    def test_deterministic(self, dataset):
        res, _, scene, ids = dataset
        again = synthesis.run_synthesis(ids, scene.frames, seed=1,
                                        seg_cfg=SegmenterConfig(epochs=2, max_frames=6), vicinity=2)
        assert [s.record("") for s in again.samples] == [s.record("") for s in res.samples]
        assert all(np.array_equal(a.image.data, b.image.data) for a, b in zip(again.samples, res.samples))

    def test_static_video_has_no_blobs(self):
        doc = small_scene_doc(length=20)
        doc["sprites"] = []
        scene = gen_scene(SceneSpec.from_dict(doc))
        ids = [str(i) for i in range(20)]
        res = synthesis.run_synthesis(ids, scene.frames, synth_cfg=SynthesisConfig(burn_in=0))
        assert not res.samples
        assert {d["reason"] for d in res.skipped} == {"no-blob"}

    def test_empty_input(self):
        with pytest.raises(ContractError):
            synthesis.run_synthesis([], [])

    def test_bad_config(self):
        with pytest.raises(ContractError):
            SynthesisConfig(cache_size=0)
        with pytest.raises(ContractError):
            SynthesisConfig(burn_in=-1)
