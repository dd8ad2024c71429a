import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from epitome_svc.errors import IntegrityError
from epitome_svc.fixtures import noise_plane, periodic_plane
from epitome_svc.image_core import BlockGrid, PixelRegion, mse
from epitome_svc.self_similarity import (
    ASSIGNATION_RATIO, MatchLists, PatchSearcher, build_reverse_lists, check_match_lists,
    cluster_blocks, find_matches, match_lists_from_reverse, match_patches_for_cluster,
)


def brute_force_matches(image, block, b, eps):
    out = []
    h, w = image.shape
    for r in range(h - b + 1):
        for c in range(w - b + 1):
            if mse(block, image[r:r + b, c:c + b]) <= eps:
                out.append((r, c))
    return out


class TestClustering:
    def test_identical_blocks_single_cluster(self):
        img = np.full((16, 24), 7.0)
        cl = cluster_blocks(BlockGrid(img.shape, 8), img, 0.0)
        assert cl.n_clusters == 1
        assert cl.labels.tolist() == [0] * 6

    def test_distinct_blocks_with_zero_threshold(self):
        img = np.repeat(np.arange(6.0), 4)[None, :].repeat(4, 0)
        cl = cluster_blocks(BlockGrid(img.shape, 4), img, 0.0)
        assert cl.n_clusters == 6

    @pytest.mark.parametrize("eps_a, expected", [(150.0, 1), (50.0, 2)])
    def test_two_constant_blocks(self, eps_a, expected):
        # Centroid of one 0-block and one 10-block is 5 everywhere: member mse 25.
        # The blocks' mutual mse is 100.
        img = np.zeros((4, 8))
        img[:, 4:] = 10.0
        cl = cluster_blocks(BlockGrid(img.shape, 4), img, eps_a)
        assert cl.n_clusters == expected

    def test_member_to_centroid_bound(self):
        img = noise_plane((32, 32), seed=4) / 8.0
        grid = BlockGrid(img.shape, 4)
        cl = cluster_blocks(grid, img, 30.0)
        vecs = grid.block_vectors(img)
        for i, lab in enumerate(cl.labels):
            assert np.mean((vecs[i] - cl.centroids[lab]) ** 2) <= 30.0 + 1e-9

    def test_representative_is_a_member(self):
        img = noise_plane((32, 32), seed=5) / 4.0
        cl = cluster_blocks(BlockGrid(img.shape, 8), img, 200.0)
        for c in range(cl.n_clusters):
            assert cl.representatives[c] in cl.members(c)

    def test_assignation_ratio(self):
        assert ASSIGNATION_RATIO == 0.5
        img = periodic_plane((32, 32))
        _, cl = find_matches(img, 8, 20.0)
        assert cl.assignation_threshold == 10.0


class TestPatchSearch:
    def test_self_match_always_present(self):
        img = noise_plane((32, 32), seed=1)
        rep = img[8:16, 16:24]
        found = match_patches_for_cluster(rep, img, 0.0)
        assert PixelRegion(8, 16, 8, 8) in found

    def test_periodic_offsets(self):
        p = 6
        row = np.round(100 + 50 * np.sin(2 * np.pi * np.arange(48) / p))
        img = np.tile(row, (8, 1))
        found = match_patches_for_cluster(img[:, :8], img, 0.0)
        assert sorted(r.col for r in found) == list(range(0, 48 - 8 + 1, p))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        img = rng.integers(0, 4, (20, 20)).astype(float)
        block = img[4:8, 8:12]
        found = match_patches_for_cluster(block, img, 1.0)
        assert sorted((r.row, r.col) for r in found) == brute_force_matches(img, block, 4, 1.0)

    def test_exact_ssd(self):
        rng = np.random.default_rng(3)
        img = rng.uniform(0, 255, (16, 16))
        t = img[2:6, 3:7]
        s = PatchSearcher(img, 4)
        got = s.exact_ssd(t, np.array([2, 0]), np.array([3, 5]))
        assert got[0] == 0.0
        assert got[1] == pytest.approx(np.sum((img[0:4, 5:9] - t) ** 2), rel=1e-12)


class TestMatchLists:
    def test_noise_zero_threshold_only_self(self):
        img = noise_plane((32, 32), seed=0)
        ml, _ = find_matches(img, 8, 0.0)
        for i in range(ml.n_blocks):
            assert ml.origins(i).tolist() == [list(BlockGrid(img.shape, 8).blocks[i].origin)]

    def test_soundness_and_self_membership(self):
        img = np.round(periodic_plane((48, 48), period=12) + noise_plane((48, 48), 7) / 32)
        ml, _ = find_matches(img, 8, 9.0)
        check_match_lists(ml, img)
        grid = BlockGrid(img.shape, 8)
        for i, blk in enumerate(grid.blocks):
            assert list(blk.origin) in ml.origins(i).tolist()

    def test_subset_of_brute_force(self):
        rng = np.random.default_rng(11)
        img = rng.integers(0, 3, (24, 24)).astype(float)
        ml, _ = find_matches(img, 4, 0.6)
        grid = BlockGrid(img.shape, 4)
        for i, blk in enumerate(grid.blocks):
            expected = set(brute_force_matches(img, img[blk.slices()], 4, 0.6))
            assert set(map(tuple, ml.origins(i).tolist())) <= expected

    def test_complete_when_clusters_are_exact(self):
        # Tiled image: every cluster holds identical blocks, so nothing is missed.
        rng = np.random.default_rng(12)
        img = np.tile(rng.integers(0, 3, (4, 4)).astype(float), (5, 5))
        ml, cl = find_matches(img, 4, 0.0)
        assert cl.n_clusters == 1
        grid = BlockGrid(img.shape, 4)
        for i, blk in enumerate(grid.blocks):
            expected = brute_force_matches(img, img[blk.slices()], 4, 0.0)
            assert sorted(map(tuple, ml.origins(i).tolist())) == expected

    def test_check_rejects_violation(self):
        img = noise_plane((16, 16), seed=2)
        ml = MatchLists.from_entries(img.shape, 8, 1.0, [0, 0], [0, 8], [0.0, 0.0], 4)
        with pytest.raises(IntegrityError):
            check_match_lists(ml, img)

    def test_monotone_in_threshold(self):
        img = np.round(noise_plane((32, 32), 3) / 16)
        grid = BlockGrid(img.shape, 8)
        cl = cluster_blocks(grid, img, 2.0)
        small, _ = find_matches(img, 8, 4.0, clustering=cl)
        large, _ = find_matches(img, 8, 12.0, clustering=cl)
        for i in range(small.n_blocks):
            assert set(map(tuple, small.origins(i).tolist())) <= set(map(tuple, large.origins(i).tolist()))

    def test_json_round_trip(self, tmp_path):
        img = periodic_plane((32, 32))
        ml, _ = find_matches(img, 8, 4.0)
        ml.save(tmp_path / "ml.json")
        back = MatchLists.load(tmp_path / "ml.json")
        assert back.as_dict() == ml.as_dict()
        assert np.array_equal(back.mse, ml.mse)


class TestReverseLists:
    def test_single_self_match(self):
        ml = MatchLists.from_entries((8, 8), 8, 0.0, [0], [0], [0.0], 1)
        rl = build_reverse_lists(ml)
        assert rl.as_dict() == {(0, 0): [0]}

    def test_shared_patch(self):
        ml = MatchLists.from_entries((8, 16), 8, 5.0, [0, 1], [3, 3], [1.0, 2.0], 2)
        rl = build_reverse_lists(ml)
        assert rl.blocks_for((0, 3)).tolist() == [0, 1]

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 80)), min_size=1, max_size=60))
    @settings(max_examples=50)
    def test_round_trip(self, entries):
        blocks = [b for b, _ in entries]
        pos = [p for _, p in entries]
        msev = [float((3 * b + p) % 7) for b, p in entries]
        ml = MatchLists.from_entries((9, 9), 1, 10.0, blocks, pos, msev, 6)
        back = match_lists_from_reverse(build_reverse_lists(ml), 6, 10.0)
        assert back.as_dict() == ml.as_dict()
        assert np.array_equal(back.mse, ml.mse)
