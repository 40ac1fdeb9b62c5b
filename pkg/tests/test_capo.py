import numpy as np
import pytest

from c2pd import (CapoParams, ShapeMismatchError, ValidationError, WindowSpec,
                  capo_apply, capo_backward, conserve, fit_variations, grad_check,
                  interaction, stable_sum)

from oracles import capo_oracle, layers_of


def single_layer_params(n=4, scale=1.0):
    """One affine layer: every raw variation is scale * sum(window values)."""
    return CapoParams(n=n, layers=((np.full((n, 2 * n), scale), np.zeros(n)),))


class TestInteraction:
    def test_zero_params_zero_output(self):
        params = CapoParams.zero(4)
        raw = interaction(np.arange(8.0), params)
        np.testing.assert_array_equal(raw, np.zeros(4))

    def test_deterministic(self, rng):
        params = CapoParams.init(4, rng=rng)
        window = rng.uniform(size=8)
        np.testing.assert_array_equal(interaction(window, params),
                                      interaction(window.copy(), params))

    def test_single_layer_hand_value(self):
        # rows of ones dotted with (1,0,0,0, 0,0,0,0) give 1 per output slot
        params = single_layer_params()
        window = np.array([1.0, 0, 0, 0, 0, 0, 0, 0])
        np.testing.assert_array_equal(interaction(window, params), np.ones(4))

    def test_matches_naive_evaluator(self, rng):
        params = CapoParams.init(4, rng=rng)
        window = rng.uniform(size=8)
        from oracles import mlp_eval
        expected = mlp_eval(window.tolist(), layers_of(params))
        np.testing.assert_allclose(interaction(window, params), expected, atol=1e-12)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ShapeMismatchError):
            interaction(np.zeros(6), CapoParams.zero(4))


class TestConserve:
    def test_constant_vector_maps_to_zero(self):
        np.testing.assert_array_equal(conserve([1.0, 1.0, 1.0, 1.0]), np.zeros(4))

    def test_mean_subtraction(self):
        np.testing.assert_array_equal(conserve([4.0, 0.0, 0.0, 0.0]), [3.0, -1.0, -1.0, -1.0])

    def test_random_vector_sums_to_zero(self, rng):
        raw = rng.normal(size=9) * 50
        normalized = conserve(raw)
        assert abs(stable_sum(normalized)) <= 1e-12 * max(1.0, stable_sum(np.abs(raw)))

    def test_fit_variations_invariant(self, rng):
        params = CapoParams.init(4, rng=rng)
        vv = fit_variations(rng.uniform(size=8), params)
        assert abs(stable_sum(vv.normalized)) <= 1e-12 * max(1.0, stable_sum(np.abs(vv.raw)))


class TestCapoParams:
    def test_layer_chain_validated(self):
        with pytest.raises(ValidationError):
            CapoParams(n=4, layers=((np.zeros((3, 8)), np.zeros(3)),))  # last out != n
        with pytest.raises(ValidationError):
            CapoParams(n=4, layers=((np.zeros((4, 6)), np.zeros(4)),))  # first in != 2n

    def test_non_finite_rejected(self):
        w = np.zeros((4, 8))
        w[0, 0] = np.inf
        with pytest.raises(ValidationError):
            CapoParams(n=4, layers=((w, np.zeros(4)),))

    def test_init_is_seeded(self):
        a = CapoParams.init(4, rng=123)
        b = CapoParams.init(4, rng=123)
        for x, y in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, y)

    def test_init_bounds(self):
        params = CapoParams.init(9, rng=0)
        for (w, b), fan_in in zip(params.layers, (18, 32, 32)):
            assert np.max(np.abs(w)) <= 1.0 / np.sqrt(fan_in)
            assert np.all(b == 0)

    def test_construction_does_not_freeze_caller_arrays(self):
        w = np.zeros((4, 8))
        CapoParams(n=4, layers=((w, np.zeros(4)),))
        w[0, 0] = 1.0  # still writable


class TestCapoApply:
    def test_zero_params_is_identity(self, rng):
        stream = rng.uniform(0, 100, (5, 9))
        guide = rng.uniform(0, 1, (5, 9))
        out = capo_apply(stream, guide, CapoParams.zero(4), WindowSpec((1, 4)))
        np.testing.assert_array_equal(out, stream)

    def test_step_row_matches_oracle(self):
        stream = np.array([[0.0, 0, 0, 1, 1, 1, 1, 1]])
        guide = stream.copy()
        params = single_layer_params(scale=0.25)
        spec = WindowSpec((1, 4))
        expected = capo_oracle(stream, guide, layers_of(params), spec.shape, spec.padding)
        out = capo_apply(stream, guide, params, spec)
        np.testing.assert_allclose(out, expected, atol=1e-12)

    @pytest.mark.parametrize("shape", [(1, 4), (4, 1), (3, 3)])
    @pytest.mark.parametrize("padding", ["replicate", "circular"])
    def test_random_matches_oracle(self, rng, shape, padding):
        spec = WindowSpec(shape, padding)
        params = CapoParams.init(spec.n, rng=rng)
        stream = rng.uniform(0, 1, (6, 7))
        guide = rng.uniform(0, 1, (6, 7))
        expected = capo_oracle(stream, guide, layers_of(params), shape, padding)
        out = capo_apply(stream, guide, params, spec)
        np.testing.assert_allclose(out, expected, atol=1e-10)

    def test_conservation_under_circular_padding(self, rng):
        for trial in range(100):
            shape = [(1, 4), (4, 1), (3, 3)][trial % 3]
            spec = WindowSpec(shape, "circular")
            h, w = rng.integers(4, 13, size=2)
            stream = rng.uniform(0, 100, (h, w))
            guide = rng.uniform(0, 1, (h, w))
            params = CapoParams.init(spec.n, rng=rng)
            out = capo_apply(stream, guide, params, spec)
            drift = abs(stable_sum(out) - stable_sum(stream))
            assert drift <= 1e-9 * max(1.0, stable_sum(np.abs(stream)))

    @pytest.mark.parametrize("shape,radius", [((1, 4), 3), ((4, 1), 3)])
    def test_locality_along_window_axis(self, rng, shape, radius):
        spec = WindowSpec(shape)
        params = CapoParams.init(4, rng=rng)
        size = 20
        stream = rng.uniform(0, 10, (size, size))
        guide = rng.uniform(0, 1, (size, size))
        base = capo_apply(stream, guide, params, spec)
        p = (9, 11)
        for target, grid in (("stream", stream), ("guide", guide)):
            bumped_s, bumped_g = stream.copy(), guide.copy()
            (bumped_s if target == "stream" else bumped_g)[p] += 0.5
            out = capo_apply(bumped_s, bumped_g, params, spec)
            axis = 1 if shape == (1, 4) else 0
            dist = np.abs(np.arange(size) - p[axis])
            changed = out != base
            if axis == 1:
                assert not changed[:, dist > radius].any()
                assert not changed[np.arange(size) != p[0], :].any()
            else:
                assert not changed[dist > radius, :].any()
                assert not changed[:, np.arange(size) != p[1]].any()

    def test_locality_3x3_chebyshev(self, rng):
        spec = WindowSpec((3, 3))
        params = CapoParams.init(9, rng=rng)
        stream = rng.uniform(0, 10, (12, 12))
        guide = rng.uniform(0, 1, (12, 12))
        base = capo_apply(stream, guide, params, spec)
        bumped = stream.copy()
        bumped[6, 5] += 1.0
        out = capo_apply(bumped, guide, params, spec)
        rr, cc = np.meshgrid(np.arange(12), np.arange(12), indexing="ij")
        cheb = np.maximum(np.abs(rr - 6), np.abs(cc - 5))
        assert not (out != base)[cheb > 2].any()

    def test_equal_contribution_count_circular(self):
        from c2pd.grid import window_indices
        for spec in (WindowSpec((1, 4), "circular"), WindowSpec((3, 3), "circular")):
            idx = window_indices(6, 9, spec)
            counts = np.bincount(idx.ravel(), minlength=54)
            assert np.all(counts == spec.n)

    def test_params_spec_mismatch_rejected(self, rng):
        with pytest.raises(ShapeMismatchError):
            capo_apply(np.zeros((4, 4)), np.zeros((4, 4)),
                       CapoParams.zero(4), WindowSpec((3, 3)))


class TestCapoBackward:
    def test_identity_path_with_zero_params(self, rng):
        stream = rng.uniform(0, 10, (3, 8))
        guide = rng.uniform(0, 1, (3, 8))
        upstream = rng.normal(size=(3, 8))
        d_stream, d_guide, d_params = capo_backward(
            stream, guide, CapoParams.zero(4), WindowSpec((1, 4)), upstream)
        np.testing.assert_array_equal(d_stream, upstream)
        np.testing.assert_array_equal(d_guide, np.zeros_like(guide))

    def test_zero_upstream_gives_zero_gradients(self, rng):
        params = CapoParams.init(4, rng=rng)
        stream = rng.uniform(size=(2, 6))
        guide = rng.uniform(size=(2, 6))
        d_stream, d_guide, d_params = capo_backward(
            stream, guide, params, WindowSpec((1, 4)), np.zeros((2, 6)))
        assert np.all(d_stream == 0) and np.all(d_guide == 0)
        assert all(np.all(g == 0) for g in d_params)

    @pytest.mark.parametrize("shape", [(1, 4), (3, 3)])
    def test_matches_finite_differences(self, rng, shape):
        spec = WindowSpec(shape)
        params = CapoParams.init(spec.n, rng=rng)
        stream = rng.uniform(0, 1, (1, 8) if shape == (1, 4) else (5, 5))
        guide = rng.uniform(0, 1, stream.shape)

        def forward(xs):
            return capo_apply(xs[0], xs[1], CapoParams.from_arrays(spec.n, xs[2:]), spec)

        def vjp(xs, upstream):
            ds, dg, dp = capo_backward(xs[0], xs[1],
                                       CapoParams.from_arrays(spec.n, xs[2:]), spec, upstream)
            return [ds, dg, *dp]

        err = grad_check(forward, vjp, [stream, guide, *params.arrays()])
        assert err <= 1e-4
