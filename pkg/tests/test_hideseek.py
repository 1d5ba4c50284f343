import numpy as np
import pytest

from weakseg.densecrf import CrfModel, CrfParams, exact_map
from weakseg.hideseek import (HidePolicy, hide_patches, minmax_normalize, merge_cams,
                              merge_cam_stack, foreground_map, assemble_map_set,
                              ActivationMapSet, PseudoMask, build_pseudo_mask)


def demo_image(rng, size=16):
    return rng.uniform(0.4, 1.0, (3, size, size))


class TestHidePatches:
    def test_prob_zero_is_identity(self):
        rng = np.random.default_rng(0)
        img = demo_image(rng)
        policy = HidePolicy(hide_prob=0.0, mean_pixel=(0.1, 0.1, 0.1))
        np.testing.assert_array_equal(hide_patches(img, policy, rng), img)

    def test_prob_one_hides_everything(self):
        rng = np.random.default_rng(1)
        img = demo_image(rng)
        policy = HidePolicy(hide_prob=1.0, mean_pixel=(0.25, 0.5, 0.75))
        out = hide_patches(img, policy, rng)
        for c, v in enumerate((0.25, 0.5, 0.75)):
            np.testing.assert_array_equal(out[c], np.full((16, 16), v))

    def test_hidden_fraction_monte_carlo(self):
        rng = np.random.default_rng(2)
        img = demo_image(rng)
        policy = HidePolicy(hide_prob=0.5, mean_pixel=(0.0, 0.0, 0.0))
        hidden = 0
        total = 0
        for _ in range(10_000):
            out = hide_patches(img, policy, rng)
            for gy in range(4):
                for gx in range(4):
                    region = out[:, gy * 4:(gy + 1) * 4, gx * 4:(gx + 1) * 4]
                    hidden += bool(np.all(region == 0.0))
                    total += 1
        assert abs(hidden / total - 0.5) < 0.02

    def test_untouched_regions_bit_identical(self):
        rng = np.random.default_rng(3)
        img = demo_image(rng)
        policy = HidePolicy(hide_prob=0.5, mean_pixel=(0.0, 0.0, 0.0))
        out = hide_patches(img, policy, rng)
        for gy in range(4):
            for gx in range(4):
                region = np.s_[:, gy * 4:(gy + 1) * 4, gx * 4:(gx + 1) * 4]
                if not np.all(out[region] == 0.0):
                    np.testing.assert_array_equal(out[region], img[region])

    def test_fixed_count_mode(self):
        rng = np.random.default_rng(4)
        img = demo_image(rng)
        policy = HidePolicy(patch_count_mode="fixed", fixed_count=5, mean_pixel=(0.0, 0.0, 0.0))
        for _ in range(50):
            out = hide_patches(img, policy, rng)
            n_hidden = sum(bool(np.all(out[:, gy * 4:(gy + 1) * 4, gx * 4:(gx + 1) * 4] == 0.0))
                           for gy in range(4) for gx in range(4))
            assert n_hidden == 5

    def test_indivisible_grid_rejected(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError, match="divisible"):
            hide_patches(rng.random((3, 15, 15)), HidePolicy(), rng)

    def test_bad_policy_rejected(self):
        with pytest.raises(ValueError, match="hide_prob"):
            HidePolicy(hide_prob=1.5)
        with pytest.raises(ValueError, match="patch_count_mode"):
            HidePolicy(patch_count_mode="sometimes")


class TestMergeCams:
    def test_identical_branches_reduce_to_single_normalization(self):
        rng = np.random.default_rng(6)
        m = rng.standard_normal((4, 8, 8))
        merged = merge_cams(m, m)
        np.testing.assert_array_equal(merged, minmax_normalize(m))
        np.testing.assert_array_equal(np.argmax(merged, axis=0),
                                      np.argmax(minmax_normalize(m), axis=0))

    def test_constant_map_goes_to_zero(self):
        m = np.full((2, 4, 4), 3.7)
        np.testing.assert_array_equal(merge_cams(m, m), np.zeros((2, 4, 4)))

    def test_range_per_class(self):
        rng = np.random.default_rng(7)
        merged = merge_cams(rng.standard_normal((5, 8, 8)), rng.standard_normal((5, 8, 8)))
        for c in range(5):
            assert merged[c].min() == 0.0
            assert merged[c].max() == 1.0

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(8)
        m1 = rng.standard_normal((3, 6, 6))
        m2 = rng.standard_normal((3, 6, 6))
        merged = merge_cams(m1, m2)
        s = m1 + m2
        for c in range(3):
            expected = (s[c] - s[c].min()) / (s[c].max() - s[c].min())
            np.testing.assert_allclose(merged[c], expected, rtol=0, atol=1e-15)

    def test_three_branch_stack(self):
        rng = np.random.default_rng(9)
        ms = [rng.standard_normal((2, 4, 4)) for _ in range(3)]
        np.testing.assert_allclose(merge_cam_stack(ms), minmax_normalize(ms[0] + ms[1] + ms[2]))


class TestForegroundMap:
    def test_both_zero(self):
        z = np.zeros((4, 8, 8))
        np.testing.assert_array_equal(foreground_map(z, z), np.zeros((8, 8)))

    def test_one_zero_is_additive_identity(self):
        rng = np.random.default_rng(10)
        mid = rng.uniform(0, 1, (4, 8, 8))
        expected = minmax_normalize(mid.mean(axis=0)[None])[0]
        np.testing.assert_array_equal(foreground_map(mid, np.zeros_like(mid)), expected)
        np.testing.assert_array_equal(foreground_map(np.zeros_like(mid), mid), expected)

    def test_range(self):
        rng = np.random.default_rng(11)
        pf = foreground_map(rng.uniform(0, 2, (6, 8, 8)), rng.uniform(0, 2, (6, 8, 8)))
        assert pf.min() == 0.0 and pf.max() == 1.0


class TestAssembleMapSet:
    def test_full_foreground_gives_zero_background(self):
        ms = assemble_map_set(np.zeros((2, 4, 4)), np.ones((4, 4)))
        np.testing.assert_array_equal(ms.background, np.zeros((4, 4)))

    def test_zero_foreground_gives_unit_background(self):
        ms = assemble_map_set(np.zeros((2, 4, 4)), np.zeros((4, 4)))
        np.testing.assert_array_equal(ms.background, np.ones((4, 4)))

    def test_background_complements_foreground_exactly(self):
        rng = np.random.default_rng(12)
        pf = rng.uniform(0, 1, (8, 8))
        ms = assemble_map_set(rng.uniform(0, 1, (3, 8, 8)), pf)
        np.testing.assert_array_equal(ms.background + pf, np.ones((8, 8)))

    def test_values_validated(self):
        with pytest.raises(ValueError, match=r"\[0,1\]"):
            ActivationMapSet(np.full((2, 2, 2), 1.5))


class TestBuildPseudoMask:
    def test_dominant_channel_wins_everywhere(self):
        maps = np.full((5, 4, 4), 0.2)
        maps[3] = 0.9
        mask = build_pseudo_mask(ActivationMapSet(maps), np.zeros((3, 4, 4)), None, (4, 4))
        np.testing.assert_array_equal(mask.labels, np.full((4, 4), 3))
        assert mask.foreground_count == 16

    def test_uniform_set_ties_to_background(self):
        maps = np.full((4, 4, 4), 0.5)
        mask = build_pseudo_mask(ActivationMapSet(maps), np.zeros((3, 4, 4)), None, (4, 4))
        np.testing.assert_array_equal(mask.labels, np.zeros((4, 4), dtype=int))
        assert mask.foreground_count == 0

    def test_resize_to_coarser_target(self):
        maps = np.zeros((2, 8, 8))
        maps[1, :, :4] = 1.0  # left half foreground
        mask = build_pseudo_mask(ActivationMapSet(maps), np.zeros((3, 8, 8)), None, (4, 4))
        np.testing.assert_array_equal(mask.labels[:, :2], np.ones((4, 2), dtype=int))
        np.testing.assert_array_equal(mask.labels[:, 2:], np.zeros((4, 2), dtype=int))

    def test_smoothness_only_crf_removes_isolated_flip(self):
        # 3x3, one class vs background; the center pixel alone prefers
        # background, every neighbor prefers the class
        maps = np.zeros((2, 3, 3))
        maps[1] = 0.9
        maps[0] = 0.1
        maps[0, 1, 1], maps[1, 1, 1] = 0.55, 0.45
        image = np.full((3, 3, 3), 0.5)
        params = CrfParams(appearance_weight=0.0, smoothness_weight=2.0,
                           sigma_gamma=1.0, iterations=10)
        no_crf = build_pseudo_mask(ActivationMapSet(maps), image, None, (3, 3))
        assert no_crf.labels[1, 1] == 0
        smoothed = build_pseudo_mask(ActivationMapSet(maps), image, params, (3, 3))
        np.testing.assert_array_equal(smoothed.labels, np.ones((3, 3), dtype=int))
        # exact inference on the same model agrees
        probs = np.maximum(maps, 1e-6)
        probs /= probs.sum(axis=0, keepdims=True)
        model = CrfModel(-np.log(probs), image * 255.0)
        np.testing.assert_array_equal(exact_map(model, params), smoothed.labels)

    def test_pseudo_mask_counts_foreground(self):
        mask = PseudoMask.from_labels(np.array([[0, 2], [1, 0]]))
        assert mask.foreground_count == 2
