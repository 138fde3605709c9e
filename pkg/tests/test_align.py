import numpy as np
import pytest

from dmapalign import align
from dmapalign.errors import ShapeError


def random_orthogonal(rng, n):
    q, r = np.linalg.qr(rng.normal(size=(n, n)))
    return q * np.sign(np.diag(r))


class TestKabsch:
    def test_identical_sets_give_identity(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(8, 3))
        omap = align.kabsch_align(a, a)
        np.testing.assert_allclose(omap.matrix, np.eye(3), atol=1e-12)
        assert omap.residual == pytest.approx(0.0, abs=1e-12)

    def test_1d_sign_flip(self):
        a = np.linspace(-1, 1, 7)[:, None]
        omap = align.kabsch_align(a, -a)
        assert omap.matrix[0, 0] == pytest.approx(-1.0, abs=1e-14)
        assert omap.residual == pytest.approx(0.0, abs=1e-14)

    def test_2d_rotation_vs_grid_search_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(10, 2))
        angle = 0.6180339887
        rot = np.array(
            [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
        )
        b = a @ rot.T
        omap = align.kabsch_align(a, b)
        # brute-force search over rotation angles at 1e-4 rad resolution
        grid = np.arange(0.0, 2 * np.pi, 1e-4)
        costs = []
        for t in grid:
            r = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
            costs.append(np.sum((a @ r.T - b) ** 2))
        best = grid[int(np.argmin(costs))]
        r_best = np.array(
            [[np.cos(best), -np.sin(best)], [np.sin(best), np.cos(best)]]
        )
        assert np.abs(omap.matrix - rot).max() < 1e-12
        assert np.abs(r_best - rot).max() < 1e-4 + 1e-8

    @pytest.mark.parametrize("ell", [1, 2, 3, 6])
    def test_recovers_planted_orthogonal_map(self, ell):
        rng = np.random.default_rng(ell)
        planted = random_orthogonal(rng, ell)
        a = rng.normal(size=(ell + 3, ell))
        b = a @ planted.T  # rows b_i = planted a_i
        omap = align.kabsch_align(a, b)
        assert np.linalg.norm(omap.matrix - planted) < 1e-10

    def test_allows_reflections(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(6, 2))
        reflect = np.array([[1.0, 0.0], [0.0, -1.0]])
        omap = align.kabsch_align(a, a @ reflect.T)
        assert np.linalg.det(omap.matrix) == pytest.approx(-1.0, abs=1e-12)
        np.testing.assert_allclose(omap.matrix, reflect, atol=1e-12)

    def test_residual_invariant_under_joint_rotation(self):
        rng = np.random.default_rng(6)
        a = rng.normal(size=(12, 3))
        b = a @ random_orthogonal(rng, 3).T + 0.01 * rng.normal(size=(12, 3))
        r1 = align.kabsch_align(a, b).residual
        joint = random_orthogonal(rng, 3)
        r2 = align.kabsch_align(a @ joint.T, b @ joint.T).residual
        assert r2 == pytest.approx(r1, rel=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_orthogonality_and_determinant_invariants(self, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(9, 4))
        b = rng.normal(size=(9, 4))  # arbitrary, noisy correspondence
        omap = align.kabsch_align(a, b)
        ell = omap.ell
        assert np.abs(omap.matrix.T @ omap.matrix - np.eye(ell)).max() < 1e-10
        assert abs(abs(np.linalg.det(omap.matrix)) - 1.0) < 1e-10

    def test_warns_on_too_few_points(self):
        rng = np.random.default_rng(7)
        with pytest.warns(UserWarning, match="correspondences"):
            align.kabsch_align(rng.normal(size=(2, 4)), rng.normal(size=(2, 4)))

    def test_warns_on_rank_deficiency(self):
        a = np.zeros((5, 3))
        a[:, 0] = np.arange(5)
        with pytest.warns(UserWarning, match="rank"):
            align.kabsch_align(a, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            align.kabsch_align(np.zeros((3, 2)), np.zeros((4, 2)))


class TestApply:
    def test_identity(self):
        omap = align.OrthogonalMap(matrix=np.eye(3), residual=0.0, correspondences_used=3)
        z = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(omap.apply(z), z)

    @pytest.mark.parametrize("seed", range(4))
    def test_norm_preservation(self, seed):
        rng = np.random.default_rng(seed)
        omap = align.OrthogonalMap(
            matrix=random_orthogonal(rng, 4), residual=0.0, correspondences_used=4
        )
        z = rng.normal(size=4)
        assert np.linalg.norm(omap.apply(z)) == pytest.approx(np.linalg.norm(z), abs=1e-12)

    def test_inverse_round_trip(self):
        rng = np.random.default_rng(9)
        omap = align.OrthogonalMap(
            matrix=random_orthogonal(rng, 5), residual=0.0, correspondences_used=5
        )
        z = rng.normal(size=5)
        np.testing.assert_allclose(omap.apply(omap.apply_inverse(z)), z, atol=1e-12)
        np.testing.assert_allclose(omap.apply_inverse(omap.apply(z)), z, atol=1e-12)

    def test_matrix_application_row_wise(self):
        rng = np.random.default_rng(10)
        mat = random_orthogonal(rng, 3)
        omap = align.OrthogonalMap(matrix=mat, residual=0.0, correspondences_used=3)
        zs = rng.normal(size=(6, 3))
        np.testing.assert_allclose(omap.apply(zs), zs @ mat.T, atol=1e-15)

    def test_non_orthogonal_matrix_rejected(self):
        with pytest.raises(ShapeError):
            align.OrthogonalMap(matrix=np.ones((2, 2)), residual=0.0, correspondences_used=2)


class TestSerialization:
    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(11)
        omap = align.kabsch_align(rng.normal(size=(8, 3)), rng.normal(size=(8, 3)))
        path = tmp_path / "omap.json"
        align.save_orthogonal_map(path, omap)
        loaded = align.load_orthogonal_map(path)
        assert np.array_equal(loaded.matrix, omap.matrix)
        assert loaded.residual == omap.residual
        assert loaded.correspondences_used == omap.correspondences_used
