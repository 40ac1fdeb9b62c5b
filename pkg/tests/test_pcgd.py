import numpy as np
import pytest

from c2pd import (CapoParams, GridSizeError, WindowSpec, capo_backward, differentiate,
                  grad_check, guidance_gradient, integrate, pcgd_apply, pcgd_backward,
                  transpose)
from c2pd.selftest import _sign_safe_mask

from oracles import layers_of, pcgd_oracle

SPEC_H = WindowSpec((1, 4))
SPEC_V = WindowSpec((4, 1))


class TestDifferentiate:
    def test_simple_row(self):
        field = differentiate(np.array([[1.0, 3.0, 6.0]]), "horizontal")
        np.testing.assert_array_equal(field.positive + field.negative, [[2.0, 3.0, 0.0]])
        np.testing.assert_array_equal(field.positive, [[2.0, 3.0, 0.0]])
        np.testing.assert_array_equal(field.negative, [[0.0, 0.0, 0.0]])
        np.testing.assert_array_equal(field.anchor, [1.0])

    def test_constant_grid(self):
        field = differentiate(np.full((3, 4), 2.5), "vertical")
        assert np.all(field.positive == 0) and np.all(field.negative == 0)

    def test_sign_split(self):
        field = differentiate(np.array([[5.0, 2.0, 2.0, 4.0]]), "horizontal")
        np.testing.assert_array_equal(field.positive, [[0.0, 0.0, 2.0, 0.0]])
        np.testing.assert_array_equal(field.negative, [[-3.0, 0.0, 0.0, 0.0]])

    def test_sign_split_completeness(self, rng):
        grid = rng.normal(size=(9, 9)) * 40
        for axis in ("horizontal", "vertical"):
            field = differentiate(grid, axis)
            d = np.zeros_like(grid)
            if axis == "horizontal":
                d[:, :-1] = grid[:, 1:] - grid[:, :-1]
            else:
                d[:-1, :] = grid[1:, :] - grid[:-1, :]
            np.testing.assert_array_equal(field.positive + field.negative, d)
            assert np.all(field.positive >= 0) and np.all(field.negative <= 0)

    def test_short_extent_rejected(self):
        with pytest.raises(GridSizeError):
            differentiate(np.zeros((1, 5)), "vertical")
        with pytest.raises(GridSizeError):
            differentiate(np.zeros((5, 1)), "horizontal")


class TestIntegrate:
    def test_round_trip_row(self):
        row = np.array([[1.0, 3.0, 6.0]])
        np.testing.assert_array_equal(integrate(differentiate(row, "horizontal")), row)

    def test_zero_field_continues_anchor(self):
        field = differentiate(np.full((2, 5), 7.0), "horizontal")
        np.testing.assert_array_equal(integrate(field), np.full((2, 5), 7.0))

    def test_round_trip_random(self, rng):
        for _ in range(100):
            grid = rng.uniform(size=(64, 64))
            for axis in ("horizontal", "vertical"):
                back = integrate(differentiate(grid, axis))
                assert np.max(np.abs(back - grid)) <= 1e-12


class TestGuidanceGradient:
    def test_non_negative(self, rng):
        guide = rng.normal(size=(8, 8))
        for axis in ("horizontal", "vertical"):
            assert np.all(guidance_gradient(guide, axis) >= 0)

    def test_matches_abs_forward_diff(self):
        g = np.array([[0.0, 1.0, 0.5]])
        np.testing.assert_array_equal(guidance_gradient(g, "horizontal"), [[1.0, 0.5, 0.0]])


class TestPcgdApply:
    def test_zero_network_is_identity(self, rng):
        depth = rng.uniform(0, 1, (16, 16))
        guide = rng.uniform(0, 1, (16, 16))
        out = pcgd_apply(depth, guide, CapoParams.zero(4), SPEC_H, SPEC_V)
        assert np.max(np.abs(out - depth)) <= 1e-12

    def test_transpose_equivariance(self, rng):
        for _ in range(20):
            depth = rng.uniform(0, 100, (16, 16))
            guide = rng.uniform(0, 1, (16, 16))
            params = CapoParams.init(4, rng=rng)
            a = pcgd_apply(transpose(depth), transpose(guide), params, SPEC_H, SPEC_V)
            b = transpose(pcgd_apply(depth, guide, params, SPEC_H, SPEC_V))
            assert np.max(np.abs(a - b)) <= 1e-9

    def test_step_row_matches_oracle(self, rng):
        depth = np.array([[0.0, 0, 0, 0, 10, 10, 10, 10]])
        guide = np.array([[0.0, 0, 0, 0, 0, 1, 1, 1]])  # edge displaced by one pixel
        params = CapoParams.init(4, rng=rng)
        expected = pcgd_oracle(depth, guide, layers_of(params), SPEC_H.shape, SPEC_H.padding)
        out = pcgd_apply(depth, guide, params, SPEC_H, SPEC_V)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_random_grid_matches_oracle(self, rng):
        depth = rng.uniform(0, 1, (8, 8))
        guide = rng.uniform(0, 1, (8, 8))
        params = CapoParams.init(4, rng=rng)
        expected = pcgd_oracle(depth, guide, layers_of(params), SPEC_H.shape, SPEC_H.padding)
        out = pcgd_apply(depth, guide, params, SPEC_H, SPEC_V)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_locality_along_row(self, rng):
        params = CapoParams.init(4, rng=rng)
        depth = rng.uniform(0, 10, (6, 24))
        guide = rng.uniform(0, 1, (6, 24))
        base = pcgd_apply(depth, guide, params, SPEC_H, SPEC_V)
        row, p = 3, 14
        bumped = depth.copy()
        bumped[row, p] += 0.5
        out = pcgd_apply(bumped, guide, params, SPEC_H, SPEC_V)
        cols = np.arange(24)
        assert np.all(out[row, cols < p - 4] == base[row, cols < p - 4])

    def test_locality_along_column(self, rng):
        params = CapoParams.init(4, rng=rng)
        depth = rng.uniform(0, 10, (24, 6))
        guide = rng.uniform(0, 1, (24, 6))
        base = pcgd_apply(depth, guide, params, SPEC_H, SPEC_V)
        p, col = 14, 3
        bumped = depth.copy()
        bumped[p, col] += 0.5
        out = pcgd_apply(bumped, guide, params, SPEC_H, SPEC_V)
        rows = np.arange(24)
        assert np.all(out[rows < p - 4, col] == base[rows < p - 4, col])

    def test_single_row_grid_supported(self, rng):
        # no vertical gradient exists; that direction contributes the input unchanged
        depth = rng.uniform(0, 1, (1, 8))
        guide = rng.uniform(0, 1, (1, 8))
        params = CapoParams.init(4, rng=rng)
        out = pcgd_apply(depth, guide, params, SPEC_H, SPEC_V)
        expected = pcgd_oracle(depth, guide, layers_of(params), SPEC_H.shape, SPEC_H.padding)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_3x3_window_pair(self, rng):
        spec = WindowSpec((3, 3))
        params = CapoParams.init(9, rng=rng)
        depth = rng.uniform(0, 1, (7, 7))
        guide = rng.uniform(0, 1, (7, 7))
        expected = pcgd_oracle(depth, guide, layers_of(params), spec.shape, spec.padding)
        out = pcgd_apply(depth, guide, params, spec, spec)
        np.testing.assert_allclose(out, expected, atol=1e-10)


class TestPcgdBackward:
    def test_identity_network_passes_upstream_through(self, rng):
        depth = rng.uniform(0, 10, (6, 6))
        guide = rng.uniform(0, 1, (6, 6))
        upstream = rng.normal(size=(6, 6))
        d_depth, d_guide, _ = pcgd_backward(depth, guide, CapoParams.zero(4),
                                            SPEC_H, SPEC_V, upstream)
        np.testing.assert_allclose(d_depth, upstream, atol=1e-12)
        np.testing.assert_array_equal(d_guide, np.zeros_like(guide))

    def test_matches_finite_differences(self, rng):
        params = CapoParams.init(4, rng=rng)
        depth = rng.uniform(0, 1, (8, 8))
        guide = rng.uniform(0, 1, (8, 8))

        def forward(xs):
            return pcgd_apply(xs[0], xs[1], CapoParams.from_arrays(4, xs[2:]), SPEC_H, SPEC_V)

        def vjp(xs, upstream):
            dd, dg, dp = pcgd_backward(xs[0], xs[1], CapoParams.from_arrays(4, xs[2:]),
                                       SPEC_H, SPEC_V, upstream)
            return [dd, dg, *dp]

        masks = [_sign_safe_mask(depth), _sign_safe_mask(guide)] + [None] * len(params.arrays())
        err = grad_check(forward, vjp, [depth, guide, *params.arrays()], masks=masks)
        assert err <= 1e-4

    def test_param_grads_accumulate_four_streams(self, rng):
        # vertical-only contribution == transpose of horizontal-only: with a
        # symmetric input the shared-parameter gradient doubles
        params = CapoParams.init(4, rng=rng)
        depth = rng.uniform(0, 1, (7, 7))
        depth = 0.5 * (depth + depth.T)   # symmetric grid
        guide = rng.uniform(0, 1, (7, 7))
        guide = 0.5 * (guide + guide.T)
        upstream = rng.normal(size=(7, 7))
        upstream = 0.5 * (upstream + upstream.T)
        _, _, dp = pcgd_backward(depth, guide, params, SPEC_H, SPEC_V, upstream)

        # reconstruct the horizontal-axis-only gradient via capo_backward
        from c2pd.pcgd import _axis_backward
        _, _, dp_h = _axis_backward(depth, guide, params, SPEC_H, 0.5 * upstream)
        for full, half in zip(dp, dp_h):
            np.testing.assert_allclose(full, 2.0 * half, atol=1e-12)

    def test_zero_upstream(self, rng):
        params = CapoParams.init(4, rng=rng)
        depth = rng.uniform(size=(5, 5))
        guide = rng.uniform(size=(5, 5))
        d_depth, d_guide, dp = pcgd_backward(depth, guide, params, SPEC_H, SPEC_V,
                                             np.zeros((5, 5)))
        assert np.all(d_depth == 0) and np.all(d_guide == 0)
        assert all(np.all(g == 0) for g in dp)
