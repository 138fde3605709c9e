import numpy as np
import pytest

from dmapalign import align, dmap, nn, sampling, transform
from dmapalign.errors import AlignmentError, InsufficientProbeError, ShapeError


def small_net(arch, seed):
    return nn.Mlp.initialize(nn.ArchitectureSpec.from_string(arch), seed)


def build_self_transform(n=200, seed=0, **kwargs):
    net = small_net("1-3-1", seed)
    taps = nn.TapSelection.last_hidden(net.spec)
    base = sampling.sample_uniform((-1.0, 1.0), n, seed=seed + 1)
    nbhds = sampling.delta_ball_neighborhoods(base, 0.05, 32, seed=seed + 2)
    nt = transform.build_transform(
        net, taps, net, taps, nbhds, nbhds, ell=1, max_rank=1, **kwargs
    )
    return net, taps, nt


class TestSelfTransform:
    def test_apply_is_exact_on_references(self):
        _, _, nt = build_self_transform()
        refs = nt.phi.reference_points
        out = transform.apply_transform(nt, refs)
        errors = np.linalg.norm(out - nt.psi.reference_points, axis=1)
        assert np.median(errors) < 1e-8
        assert errors.max() < 1e-8

    def test_round_trip_exact_on_every_reference(self):
        _, _, nt = build_self_transform()
        refs = nt.phi.reference_points
        back = transform.invert_transform(nt, transform.apply_transform(nt, refs))
        np.testing.assert_array_equal(back, refs)

    def test_orthogonal_map_is_identity(self):
        _, _, nt = build_self_transform()
        np.testing.assert_allclose(nt.omap.matrix, np.eye(1), atol=1e-12)


class TestGeneralTransform:
    def _two_net_transform(self, shuffle=False, seed=3):
        net1 = small_net("1-3-1", seed)
        net2 = small_net("1-3-1", seed + 50)
        t1 = nn.TapSelection.last_hidden(net1.spec)
        t2 = nn.TapSelection.last_hidden(net2.spec)
        base = sampling.sample_uniform((0.0, 1.0), 250, seed=seed)
        nbhds1 = sampling.delta_ball_neighborhoods(base, 0.03, 24, seed=seed + 1)
        if shuffle:
            rng = np.random.default_rng(seed + 2)
            perm = rng.permutation(base.n)
            nbhds2 = sampling.NeighborhoodSet(
                clouds=nbhds1.clouds[perm],
                base_points=nbhds1.base_points[perm],
                seed=nbhds1.seed,
            )
        else:
            nbhds2 = nbhds1
        return transform.build_transform(
            net1, t1, net2, t2, nbhds1, nbhds2, ell=1, max_rank=1
        )

    def test_embedding_space_round_trip_exact(self):
        nt = self._two_net_transform()
        rng = np.random.default_rng(0)
        for _ in range(10):
            z = rng.normal(size=1)
            back = nt.omap.apply_inverse(nt.omap.apply(z))
            assert np.abs(back - z).max() < 1e-12

    def test_round_trip_lands_in_nearest_reference_cell(self):
        nt = self._two_net_transform()
        rng = np.random.default_rng(1)
        refs = nt.phi.reference_points
        for _ in range(15):
            y = refs[rng.integers(len(refs))] + 0.001 * rng.normal(size=refs.shape[1])
            out = transform.invert_transform(nt, transform.apply_transform(nt, y))
            # result is an actual stored reference vector (snap semantics)
            d2 = np.sum((refs - out) ** 2, axis=1)
            assert d2.min() == 0.0

    def test_shuffled_neighborhoods_raise_residual(self):
        matched = self._two_net_transform(shuffle=False)
        shuffled = self._two_net_transform(shuffle=True)
        assert shuffled.omap.residual > 5.0 * matched.omap.residual

    def test_correspondence_count_enforced(self):
        net = small_net("1-3-1", 7)
        taps = nn.TapSelection.last_hidden(net.spec)
        base = sampling.sample_uniform((0.0, 1.0), 60, seed=0)
        nbhds = sampling.delta_ball_neighborhoods(base, 0.05, 16, seed=1)
        with pytest.raises(AlignmentError):
            transform.build_transform(
                net, taps, net, taps, nbhds, nbhds, ell=1, correspondences=np.array([], dtype=int)
            )

    def test_mismatched_sets_need_explicit_correspondences(self):
        net = small_net("1-3-1", 8)
        taps = nn.TapSelection.last_hidden(net.spec)
        b1 = sampling.sample_uniform((0.0, 1.0), 40, seed=0)
        b2 = sampling.sample_uniform((0.0, 1.0), 30, seed=1)
        n1 = sampling.delta_ball_neighborhoods(b1, 0.05, 8, seed=2)
        n2 = sampling.delta_ball_neighborhoods(b2, 0.05, 8, seed=3)
        with pytest.raises(AlignmentError):
            transform.build_transform(net, taps, net, taps, n1, n2, ell=1)

    def test_whitney_warning_on_small_ell(self):
        net = small_net("1-3-1", 9)
        taps = nn.TapSelection.last_hidden(net.spec)
        base = sampling.sample_uniform((0.0, 1.0), 50, seed=0)
        nbhds = sampling.delta_ball_neighborhoods(base, 0.05, 16, seed=1)
        with pytest.warns(UserWarning, match="2d\\+1"):
            transform.build_transform(net, taps, net, taps, nbhds, nbhds, ell=1, max_rank=1)


class TestLinearInterpolation:
    def test_linear1d_inverse_is_continuous(self):
        net, taps, nt_nearest = build_self_transform(n=150, seed=5)
        nt_linear = transform.NetworkTransform(
            phi=nt_nearest.phi,
            psi=nt_nearest.psi,
            omap=nt_nearest.omap,
            taps1=nt_nearest.taps1,
            taps2=nt_nearest.taps2,
            interpolation="linear1d",
        )
        refs = nt_linear.phi.reference_points
        out = transform.apply_transform(nt_linear, refs)
        errors = np.linalg.norm(out - refs, axis=1)
        assert np.median(errors) < 1e-8
        # interpolation requires a 1-D embedding
        with pytest.raises(ShapeError):
            transform.NetworkTransform(
                phi=nt_nearest.phi,
                psi=nt_nearest.psi,
                omap=align.OrthogonalMap(np.eye(2), 0.0, 2),
                taps1=nt_nearest.taps1,
                taps2=nt_nearest.taps2,
                interpolation="linear1d",
            )


class TestDetectFold:
    def test_monotone_pair_clean(self):
        x = np.linspace(-1, 1, 101)
        report = transform.detect_fold(x, x, x)
        assert report.monotonicity_pairs_violated == 0
        assert report.first_failure is None
        assert report.injectivity_flags.all()

    def test_parabola_fold_at_zero(self):
        x = np.linspace(-1, 1, 101)
        report = transform.detect_fold(x, x**2, x)
        assert report.monotonicity_pairs_violated >= 1
        assert abs(report.first_failure) < 0.05

    def test_decreasing_pair_is_still_invertible(self):
        x = np.linspace(-1, 1, 101)
        report = transform.detect_fold(x, -3 * x, x)
        assert report.monotonicity_pairs_violated == 0

    def test_vertical_jump_detected(self):
        x = np.linspace(0, 1, 101)
        g1 = np.where(x < 0.5, 0.0, 1.0)  # stalls then jumps
        g2 = x.copy()
        report = transform.detect_fold(g1, g2, x)
        assert report.monotonicity_pairs_violated >= 1

    def test_requires_three_points(self):
        with pytest.raises(InsufficientProbeError):
            transform.detect_fold([0.0, 1.0], [0.0, 1.0])

    def test_requires_sorted_inputs(self):
        with pytest.raises(ShapeError):
            transform.detect_fold([0, 1, 2], [0, 1, 2], inputs=[0.0, 2.0, 1.0])

    def test_flags_and_locations(self):
        x = np.linspace(-1, 1, 201)
        report = transform.detect_fold(x, np.abs(x), x)
        assert not report.injectivity_flags.all()
        assert all(abs(v) < 0.05 for v in report.violation_inputs)


class TestBundleSerialization:
    def test_round_trip(self, tmp_path):
        _, _, nt = build_self_transform(n=120, seed=11)
        transform.save_transform(tmp_path / "bundle", nt)
        loaded = transform.load_transform(tmp_path / "bundle")
        assert loaded.ell == nt.ell
        assert loaded.provenance == nt.provenance
        assert loaded.interpolation == nt.interpolation
        assert loaded.taps1.neuron_ids == nt.taps1.neuron_ids
        np.testing.assert_array_equal(loaded.omap.matrix, nt.omap.matrix)
        np.testing.assert_array_equal(loaded.phi.embedding, nt.phi.embedding)
        y = nt.phi.reference_points[3]
        np.testing.assert_array_equal(
            transform.apply_transform(loaded, y), transform.apply_transform(nt, y)
        )

    def test_dimension_consistency_enforced(self):
        _, _, nt = build_self_transform(n=100, seed=12)
        with pytest.raises(ShapeError):
            transform.NetworkTransform(
                phi=nt.phi,
                psi=nt.psi,
                omap=align.OrthogonalMap(np.eye(2), 0.0, 2),
                taps1=nt.taps1,
                taps2=nt.taps2,
            )


class TestFoldProperty:
    @pytest.mark.parametrize("seed", range(5))
    def test_random_strictly_monotone_pairs_are_clean(self, seed):
        rng = np.random.default_rng(seed)
        x = np.sort(rng.uniform(-2, 2, 80))
        g1 = np.cumsum(rng.uniform(0.1, 1.0, 80))  # strictly increasing
        g2 = -np.cumsum(rng.uniform(0.1, 1.0, 80))  # strictly decreasing
        report = transform.detect_fold(g1, g2, x)
        assert report.monotonicity_pairs_violated == 0
