"""Similarity core: query building, inter/intra maps, fusion, extension."""

import math

import numpy as np
import pytest

from iconmat.backend.base import AttentionScale, FeatureBundle, FeatureScale
from iconmat.backend.toy import ToyBackend, ToyConfig
from iconmat.core import ImagePlane
from iconmat.errors import DimensionError, EmptyQueryError, ValidationError
from iconmat.similarity import (
    InContextQuery,
    build_query,
    compute_guidance,
    downsample_roi,
    extend_prompt,
    fuse_guidance,
    inter_similarity,
    intra_similarity,
    merge_references,
    query_from_grid,
)


def _feature(rng, h=4, w=4, d=8, scale_id=4):
    tensor = rng.normal(size=(h, w, d)) + 2.0  # keep rows away from zero
    return FeatureScale(scale_id=scale_id, tensor=tensor)


def _stochastic_attention(rng, gh, gw, scale_id=4):
    n = gh * gw
    m = rng.uniform(0.05, 1.0, size=(n, n))
    m /= m.sum(axis=1, keepdims=True)
    return AttentionScale(scale_id=scale_id, grid_hw=(gh, gw), matrix=m)


def _per_query_maps(query, feature):
    """One inter map per query row (the mean of these is the full map)."""
    maps = []
    for k in range(query.count):
        single = InContextQuery(vectors=query.vectors[k : k + 1])
        maps.append(inter_similarity(single, feature))
    return maps


class TestInContextQuery:
    def test_validation(self):
        with pytest.raises(ValidationError):
            InContextQuery(vectors=np.zeros((0, 4)))
        with pytest.raises(ValidationError):
            InContextQuery(vectors=np.ones(4))  # not 2-D
        with pytest.raises(ValidationError):
            InContextQuery(vectors=np.array([[1.0, np.nan]]))
        with pytest.raises(ValidationError):
            InContextQuery(vectors=np.array([[1.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(ValidationError):
            InContextQuery(vectors=np.ones((2, 3)), source_cells=((0, 0),))

    def test_properties(self):
        q = InContextQuery(vectors=np.ones((3, 5)))
        assert q.count == 3 and q.dim == 5


class TestDownsampleRoi:
    def test_half_coverage_rule(self):
        mask = np.zeros((8, 8))
        mask[0:4, 0:2] = 1.0  # left half of the top-left 4x4 cell
        grid = downsample_roi(mask, (2, 2))
        assert grid[0, 0] == 1.0  # exactly 50% covered counts
        assert grid.sum() == 1.0

    def test_below_half_falls_back_to_any_coverage(self):
        mask = np.zeros((64, 64))
        mask[9, 30] = 1.0  # single pixel: no cell reaches 50%
        grid = downsample_roi(mask, (16, 16))
        assert grid.sum() == 1.0
        assert grid[9 // 4, 30 // 4] == 1.0  # the containing cell

    def test_threshold_preferred_over_fallback(self):
        mask = np.zeros((8, 8))
        mask[0:4, 0:4] = 1.0  # fills cell (0,0)
        mask[5, 5] = 1.0  # grazes cell (1,1)
        grid = downsample_roi(mask, (2, 2))
        assert grid[0, 0] == 1.0 and grid[1, 1] == 0.0

    def test_requires_2d(self):
        with pytest.raises(DimensionError):
            downsample_roi(np.zeros((4, 4, 3)), (2, 2))

    def test_empty_mask_gives_empty_grid(self):
        grid = downsample_roi(np.zeros((8, 8)), (2, 2))
        assert not grid.any()


class TestQueryFromGrid:
    def test_row_major_collection(self):
        rng = np.random.default_rng(0)
        feature = _feature(rng, h=3, w=3)
        grid = np.zeros((3, 3))
        grid[2, 0] = 1.0
        grid[0, 1] = 1.0
        q = query_from_grid(feature, grid)
        assert q.count == 2
        assert q.source_cells == ((0, 1), (2, 0))  # row-major order
        assert np.array_equal(q.vectors[0], feature.tensor[0, 1])
        assert np.array_equal(q.vectors[1], feature.tensor[2, 0])
        assert q.scale_id == feature.scale_id

    def test_zero_feature_cells_dropped(self):
        tensor = np.ones((2, 2, 3))
        tensor[0, 0] = 0.0
        feature = FeatureScale(scale_id=1, tensor=tensor)
        grid = np.ones((2, 2))
        q = query_from_grid(feature, grid)
        assert q.count == 3
        assert (0, 0) not in q.source_cells

    def test_empty_grid_raises(self):
        rng = np.random.default_rng(1)
        feature = _feature(rng)
        with pytest.raises(EmptyQueryError):
            query_from_grid(feature, np.zeros((4, 4)))

    def test_grid_shape_checked(self):
        rng = np.random.default_rng(2)
        feature = _feature(rng)
        with pytest.raises(DimensionError):
            query_from_grid(feature, np.ones((3, 3)))


class TestBuildQuery:
    def test_roi_cell_count(self, toy_backend):
        rng = np.random.default_rng(3)
        image = ImagePlane(rng.uniform(size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        roi = np.zeros((64, 64))
        roi[0:4, 0:12] = 1.0  # fills 3 cells of the 16x16 inter grid
        q = build_query(bundle, roi)
        assert q.count == 3

    def test_full_roi_selects_all_cells(self, toy_backend):
        rng = np.random.default_rng(4)
        image = ImagePlane(rng.uniform(0.1, 1.0, size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        q = build_query(bundle, np.ones((64, 64)))
        assert q.count == 16 * 16

    def test_single_pixel_roi_survives(self, toy_backend):
        rng = np.random.default_rng(5)
        image = ImagePlane(rng.uniform(0.1, 1.0, size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        roi = np.zeros((64, 64))
        roi[17, 42] = 1.0
        q = build_query(bundle, roi)
        assert q.count == 1
        assert q.source_cells == ((17 // 4, 42 // 4),)

    def test_empty_roi_raises(self, toy_backend):
        rng = np.random.default_rng(6)
        image = ImagePlane(rng.uniform(size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        with pytest.raises(EmptyQueryError):
            build_query(bundle, np.zeros((64, 64)))


class TestInterSimilarity:
    def test_two_cell_softmax_value(self):
        # d=2, one query [1,0], cells [1,0] and [0,1]:
        # logits are [1/sqrt(2), 0], so S = softmax of those two numbers
        feature = FeatureScale(
            scale_id=1, tensor=np.array([[[1.0, 0.0], [0.0, 1.0]]])
        )
        q = InContextQuery(vectors=np.array([[1.0, 0.0]]))
        s = inter_similarity(q, feature)
        z = math.exp(1.0 / math.sqrt(2.0))
        assert s.shape == (1, 2)
        assert s[0, 0] == pytest.approx(z / (z + 1.0), abs=1e-12)
        assert s[0, 1] == pytest.approx(1.0 / (z + 1.0), abs=1e-12)
        assert s[0, 0] == pytest.approx(0.6698, abs=1e-4)

    def test_identical_cells_give_uniform_map(self):
        tensor = np.tile(np.array([0.3, 0.7, 0.1]), (4, 5, 1))
        feature = FeatureScale(scale_id=1, tensor=tensor)
        q = InContextQuery(vectors=np.array([[2.0, -1.0, 0.5]]))
        s = inter_similarity(q, feature)
        assert np.allclose(s, 1.0 / 20.0, atol=1e-12)

    def test_sums_to_one_and_nonnegative(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            feature = _feature(rng, h=int(rng.integers(2, 6)), w=int(rng.integers(2, 6)))
            k = int(rng.integers(1, 5))
            q = InContextQuery(vectors=rng.normal(size=(k, 8)) + 1.0)
            s = inter_similarity(q, feature)
            assert abs(s.sum() - 1.0) < 1e-12
            assert s.min() >= 0.0

    def test_permutation_equivariance_is_bitwise(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            h, w, d = 4, 5, 6
            tensor = rng.normal(size=(h, w, d)) + 1.5
            feature = FeatureScale(scale_id=1, tensor=tensor)
            q = InContextQuery(vectors=rng.normal(size=(3, d)) + 1.0)
            s = inter_similarity(q, feature).reshape(-1)

            perm = rng.permutation(h * w)
            permuted = FeatureScale(
                scale_id=1, tensor=tensor.reshape(-1, d)[perm].reshape(h, w, d)
            )
            s_perm = inter_similarity(q, permuted).reshape(-1)
            assert np.array_equal(s_perm, s[perm])

    def test_dim_mismatch(self):
        rng = np.random.default_rng(9)
        feature = _feature(rng, d=8)
        q = InContextQuery(vectors=np.ones((1, 4)))
        with pytest.raises(DimensionError):
            inter_similarity(q, feature)

    def test_accepts_bundle(self, toy_backend):
        rng = np.random.default_rng(10)
        image = ImagePlane(rng.uniform(size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        q = build_query(bundle, np.ones((64, 64)))
        s = inter_similarity(q, bundle)
        assert s.shape == bundle.inter_feature.grid_hw

    def test_query_scaling_keeps_per_query_argmax(self):
        rng = np.random.default_rng(11)
        feature = _feature(rng, h=5, w=5, d=6)
        vectors = rng.normal(size=(4, 6)) + 1.0
        base = InContextQuery(vectors=vectors)
        scaled = InContextQuery(vectors=vectors * 3.7)
        for m1, m2 in zip(
            _per_query_maps(base, feature), _per_query_maps(scaled, feature)
        ):
            assert np.argmax(m1) == np.argmax(m2)


class TestIntraSimilarity:
    def test_identity_attention_returns_resized_input(self):
        rng = np.random.default_rng(12)
        sim = rng.uniform(size=(3, 3))
        sim /= sim.sum()
        attn = AttentionScale(scale_id=1, grid_hw=(3, 3), matrix=np.eye(9))
        out = intra_similarity(sim, attn)
        assert np.allclose(out, sim, atol=1e-12)  # same grid: resize is identity

    def test_matches_direct_matrix_vector_product(self):
        rng = np.random.default_rng(13)
        sim = rng.uniform(size=(4, 4))
        sim /= sim.sum()
        attn = _stochastic_attention(rng, 4, 4)
        out = intra_similarity(sim, attn)
        expect = (attn.matrix.T @ sim.reshape(-1)).reshape(4, 4)
        assert np.allclose(out, expect, atol=1e-12)

    def test_mass_conserved_across_grids(self):
        rng = np.random.default_rng(14)
        for _ in range(50):
            gh, gw = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            sim = rng.uniform(size=(5, 5))
            sim /= sim.sum()
            attn = _stochastic_attention(rng, gh, gw)
            out = intra_similarity(sim, attn)
            assert abs(out.sum() - 1.0) <= 1e-5
            assert out.min() >= 0.0

    def test_bundle_returns_one_map_per_scale(self, toy_backend):
        rng = np.random.default_rng(15)
        image = ImagePlane(rng.uniform(size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        q = build_query(bundle, np.ones((64, 64)))
        sim = inter_similarity(q, bundle)
        maps = intra_similarity(sim, bundle)
        assert len(maps) == len(bundle.attention)
        for m, attn in zip(maps, bundle.attention):
            assert m.shape == attn.grid_hw

    def test_zero_map_renormalizes_to_uniform(self):
        attn = AttentionScale(scale_id=1, grid_hw=(2, 2), matrix=np.eye(4))
        out = intra_similarity(np.zeros((2, 2)), attn)
        assert np.allclose(out, 0.25, atol=1e-12)

    def test_requires_2d_map(self):
        attn = AttentionScale(scale_id=1, grid_hw=(2, 2), matrix=np.eye(4))
        with pytest.raises(DimensionError):
            intra_similarity(np.zeros(4), attn)


class TestFuseGuidance:
    def test_constant_maps_fuse_to_zeros(self):
        maps = [np.full((4, 4), 0.25), np.full((2, 2), 0.25)]
        fused = fuse_guidance(maps, (4, 4))
        assert np.array_equal(fused, np.zeros((4, 4)))

    def test_single_map_minmax_normalized(self):
        rng = np.random.default_rng(16)
        m = rng.uniform(size=(5, 5))
        fused = fuse_guidance([m], (5, 5))
        assert fused.min() == 0.0 and fused.max() == 1.0
        expect = (m - m.min()) / (m.max() - m.min())
        assert np.allclose(fused, expect, atol=1e-12)

    def test_identical_maps_average_to_same(self):
        rng = np.random.default_rng(17)
        m = rng.uniform(size=(6, 6))
        one = fuse_guidance([m], (6, 6))
        two = fuse_guidance([m, m], (6, 6))
        assert np.allclose(one, two, atol=1e-12)

    def test_needs_at_least_one_map(self):
        with pytest.raises(ValidationError):
            fuse_guidance([], (4, 4))


class TestComputeGuidance:
    def test_structure(self, toy_backend):
        rng = np.random.default_rng(18)
        image = ImagePlane(rng.uniform(size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        q = build_query(bundle, np.ones((64, 64)))
        g = compute_guidance(q, bundle)
        assert g.inter.shape == bundle.inter_feature.grid_hw
        assert len(g.per_scale) == len(bundle.attention)
        assert g.scale_ids == (16, 8, 4)
        assert g.fused.shape == bundle.attention[-1].grid_hw
        assert 0.0 <= g.fused.min() and g.fused.max() <= 1.0
        assert np.array_equal(g.scale_map(8), g.per_scale[1])
        with pytest.raises(KeyError):
            g.scale_map(3)

    def test_intra_toggle_changes_maps(self, toy_backend, checker_image):
        bundle = toy_backend.extract(checker_image)
        roi = np.zeros((64, 64))
        roi[20:28, 20:28] = 1.0
        q = build_query(bundle, roi)
        with_intra = compute_guidance(q, bundle, use_intra=True)
        without = compute_guidance(q, bundle, use_intra=False)
        assert np.array_equal(with_intra.inter, without.inter)
        assert not np.array_equal(with_intra.per_scale[0], without.per_scale[0])

    def test_per_scale_mass_with_intra_off(self, toy_backend, checker_image):
        bundle = toy_backend.extract(checker_image)
        roi = np.zeros((64, 64))
        roi[20:28, 20:28] = 1.0
        q = build_query(bundle, roi)
        g = compute_guidance(q, bundle, use_intra=False)
        for m in g.per_scale:
            assert abs(m.sum() - 1.0) < 1e-9  # renormalized resized inter map


class TestExtendPrompt:
    def _attention(self, rows):
        rows = np.asarray(rows, dtype=np.float64)
        n = rows.shape[0]
        side = int(math.isqrt(n))
        return AttentionScale(scale_id=1, grid_hw=(side, n // side), matrix=rows)

    def test_m_zero_is_identity(self):
        attn = self._attention(np.full((4, 4), 0.25))
        roi = np.array([[1.0, 0.0], [0.0, 0.0]])
        out = extend_prompt(roi, attn, 0)
        assert np.array_equal(out, roi)
        assert out is not roi

    def test_exact_top_m_addition(self):
        attn = self._attention(
            [
                [0.10, 0.50, 0.30, 0.10],
                [0.25, 0.25, 0.25, 0.25],
                [0.25, 0.25, 0.25, 0.25],
                [0.25, 0.25, 0.25, 0.25],
            ]
        )
        roi = np.array([[1.0, 0.0], [0.0, 0.0]])
        out = extend_prompt(roi, attn, 2)
        # top-2 of row 0 outside the RoI: cells 1 (0.50) and 2 (0.30)
        assert np.array_equal(out, [[1.0, 1.0], [1.0, 0.0]])

    def test_ties_resolve_to_lowest_index(self):
        attn = self._attention(
            [
                [0.40, 0.20, 0.20, 0.20],
                [0.25, 0.25, 0.25, 0.25],
                [0.25, 0.25, 0.25, 0.25],
                [0.25, 0.25, 0.25, 0.25],
            ]
        )
        roi = np.array([[1.0, 0.0], [0.0, 0.0]])
        out = extend_prompt(roi, attn, 1)
        assert np.array_equal(out, [[1.0, 1.0], [0.0, 0.0]])

    def test_superset_and_popcount_bound(self):
        rng = np.random.default_rng(19)
        for _ in range(20):
            attn = _stochastic_attention(rng, 3, 3, scale_id=1)
            roi = (rng.uniform(size=(3, 3)) > 0.6).astype(np.float64)
            if not roi.any():
                roi[0, 0] = 1.0
            m = int(rng.integers(0, 4))
            out = extend_prompt(roi, attn, m)
            assert np.all(out[roi > 0] == 1.0)  # superset
            assert out.sum() <= roi.sum() * (1 + m)

    def test_full_grid_cannot_grow(self):
        rng = np.random.default_rng(20)
        attn = _stochastic_attention(rng, 2, 2, scale_id=1)
        roi = np.ones((2, 2))
        out = extend_prompt(roi, attn, 3)
        assert np.array_equal(out, roi)

    def test_m_larger_than_grid_takes_everything(self):
        rng = np.random.default_rng(21)
        attn = _stochastic_attention(rng, 2, 2, scale_id=1)
        roi = np.array([[1.0, 0.0], [0.0, 0.0]])
        out = extend_prompt(roi, attn, 99)
        assert np.array_equal(out, np.ones((2, 2)))

    def test_negative_m_rejected(self):
        rng = np.random.default_rng(22)
        attn = _stochastic_attention(rng, 2, 2, scale_id=1)
        with pytest.raises(ValidationError):
            extend_prompt(np.ones((2, 2)), attn, -1)

    def test_grid_shape_checked(self):
        rng = np.random.default_rng(23)
        attn = _stochastic_attention(rng, 2, 2, scale_id=1)
        with pytest.raises(DimensionError):
            extend_prompt(np.ones((3, 3)), attn, 1)

    def test_accepts_bundle_at_inter_scale(self, toy_backend):
        rng = np.random.default_rng(24)
        image = ImagePlane(rng.uniform(size=(64, 64, 3)))
        bundle = toy_backend.extract(image)
        roi = np.zeros((16, 16))
        roi[4, 4] = 1.0
        out = extend_prompt(roi, bundle, 3)
        assert out.shape == (16, 16)
        assert out.sum() == 4.0


class TestMergeReferences:
    def test_concatenation_order(self):
        a = InContextQuery(vectors=np.ones((2, 3)), scale_id=1)
        b = InContextQuery(vectors=np.full((3, 3), 2.0), scale_id=1)
        merged = merge_references([a, b])
        assert merged.count == 5
        assert np.array_equal(merged.vectors[:2], a.vectors)
        assert np.array_equal(merged.vectors[2:], b.vectors)

    def test_single_query_unchanged(self):
        a = InContextQuery(vectors=np.ones((2, 3)), scale_id=1)
        merged = merge_references([a])
        assert np.array_equal(merged.vectors, a.vectors)

    def test_duplicated_single_query_keeps_inter_map(self):
        rng = np.random.default_rng(25)
        feature = _feature(rng, h=3, w=4, d=5)
        q = InContextQuery(vectors=rng.normal(size=(1, 5)) + 1.0)
        merged = merge_references([q, q])
        s_once = inter_similarity(q, feature)
        s_twice = inter_similarity(merged, feature)
        assert np.array_equal(s_once, s_twice)

    def test_duplicated_multi_query_close(self):
        rng = np.random.default_rng(26)
        feature = _feature(rng, h=3, w=4, d=5)
        q = InContextQuery(vectors=rng.normal(size=(3, 5)) + 1.0)
        merged = merge_references([q, q])
        assert np.allclose(
            inter_similarity(q, feature),
            inter_similarity(merged, feature),
            atol=1e-12,
        )

    def test_mismatches_rejected(self):
        a = InContextQuery(vectors=np.ones((2, 3)), scale_id=1)
        b = InContextQuery(vectors=np.ones((2, 4)), scale_id=1)
        c = InContextQuery(vectors=np.ones((2, 3)), scale_id=2)
        with pytest.raises(DimensionError):
            merge_references([a, b])
        with pytest.raises(DimensionError):
            merge_references([a, c])
        with pytest.raises(EmptyQueryError):
            merge_references([])

    def test_source_cells_concatenated(self):
        a = InContextQuery(
            vectors=np.ones((1, 3)), scale_id=1, source_cells=((0, 0),)
        )
        b = InContextQuery(
            vectors=np.full((1, 3), 2.0), scale_id=1, source_cells=((1, 1),)
        )
        merged = merge_references([a, b])
        assert merged.source_cells == ((0, 0), (1, 1))


class TestToySelfMatchSpot:
    """Small-scale version of the self-match property: reference equals
    target, RoI color distinct, positions off. The full 100-scene sweep
    lives in the acceptance suite."""

    def test_roi_queries_peak_at_their_source(self):
        backend = ToyBackend(ToyConfig(w_pos=0.0))
        img = np.full((64, 64, 3), 0.2)
        img[8:24, 8:24] = (0.9, 0.1, 0.1)  # distinct red block
        bundle = backend.extract(ImagePlane(img))
        roi = np.zeros((64, 64))
        roi[8:24, 8:24] = 1.0
        q = build_query(bundle, roi)
        gw = bundle.inter_feature.grid_hw[1]
        hits = 0
        for k, cell in enumerate(q.source_cells):
            single = InContextQuery(vectors=q.vectors[k : k + 1])
            s = inter_similarity(single, bundle.inter_feature)
            peak = np.unravel_index(np.argmax(s), s.shape)
            hits += peak == cell or s.reshape(-1)[cell[0] * gw + cell[1]] == s.max()
        assert hits == q.count

    def test_two_part_object_shares_mass_through_attention(self):
        # Two far-apart squares of one color on a very different hue.
        # A similarity map concentrated on part A, pushed through the
        # attention rows, must hand at least 30% of its mass to part B:
        # both parts sit in the same high-cosine attention group.
        backend = ToyBackend(ToyConfig(w_pos=0.0))
        img = np.empty((64, 64, 3))
        img[:] = (0.8, 0.1, 0.1)
        img[0:16, 0:16] = (0.05, 0.85, 0.1)
        img[40:56, 40:56] = (0.05, 0.85, 0.1)
        bundle = backend.extract(ImagePlane(img))
        sim = np.zeros((16, 16))
        sim[0:4, 0:4] = 1.0 / 16.0  # concentrated on part A, sums to 1
        out = intra_similarity(sim, bundle.attn(4))
        part_b = np.zeros((16, 16), dtype=bool)
        part_b[10:14, 10:14] = True
        assert out[part_b].sum() >= 0.30  # propagation reveals the other part
