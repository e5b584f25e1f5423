"""Lattice quantizer tests: hand-derived transforms, the Babai/brute-force
oracle pairing, and the density-scaling monotonicity property."""

import numpy as np
import pytest

from unilvc import lattice_quant as lq
from unilvc.errors import InvalidArgument, LoadError

RNG = np.random.default_rng(4181)


def random_basis(rng, n=4, log_sigma_range=0.5):
    a = rng.standard_normal((n, n))
    q1, r1 = np.linalg.qr(a)
    q1 *= np.sign(np.diag(r1))
    b = rng.standard_normal((n, n))
    q2, r2 = np.linalg.qr(b)
    q2 *= np.sign(np.diag(r2))
    sig = np.exp(rng.uniform(-log_sigma_range, log_sigma_range, n))
    return lq.LatticeBasis(q1.astype(np.float32), q2.astype(np.float32), sig.astype(np.float32))


class TestBasisValidation:
    def test_identity_roundtrip(self):
        basis = lq.LatticeBasis.identity(4)
        np.testing.assert_allclose(basis.b_mat @ basis.b_inv, np.eye(4), atol=1e-6)

    def test_rejects_nonorthogonal(self):
        bad = np.eye(4, dtype=np.float32)
        bad[0, 1] = 0.01
        with pytest.raises(LoadError):
            lq.LatticeBasis(bad, np.eye(4, dtype=np.float32), np.ones(4, np.float32))

    def test_rejects_nonpositive_sigma(self):
        eye = np.eye(4, dtype=np.float32)
        with pytest.raises(LoadError):
            lq.LatticeBasis(eye, eye, np.array([1, 1, 1, 0], np.float32))

    def test_rejects_bad_condition(self):
        eye = np.eye(4, dtype=np.float32)
        with pytest.raises(LoadError):
            lq.LatticeBasis(eye, eye, np.array([500.0, 1, 1, 1], np.float32))


class TestTransform:
    def test_y_equals_mu(self):
        basis = random_basis(RNG)
        mu = RNG.standard_normal(4).astype(np.float32)
        out = lq.lattice_transform(mu, mu, basis)
        np.testing.assert_allclose(out, 0, atol=1e-6)

    def test_identity_basis_passthrough(self):
        basis = lq.LatticeBasis.identity(3)
        y = RNG.standard_normal(3).astype(np.float32)
        np.testing.assert_allclose(lq.lattice_transform(y, np.zeros(3), basis), y, atol=1e-6)

    def test_diag_hand_solve(self):
        basis = lq.LatticeBasis.from_matrix(np.diag([2.0, 0.5]))
        out = lq.lattice_transform([4.0, 1.0], [0.0, 0.0], basis)
        np.testing.assert_allclose(out, [2.0, 2.0], atol=1e-5)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidArgument):
            lq.lattice_transform([1.0, 2.0, 3.0], [0.0, 0.0], lq.LatticeBasis.identity(2))


class TestBabaiRound:
    def test_plain(self):
        np.testing.assert_array_equal(lq.babai_round([0.4, -0.6]), [0, -1])

    def test_tie_away_from_zero(self):
        np.testing.assert_array_equal(lq.babai_round([0.5, -0.5]), [1, -1])

    def test_integers_pass(self):
        v = np.array([3.0, -7.0, 0.0], np.float32)
        np.testing.assert_array_equal(lq.babai_round(v), v)

    def test_rejects_nonfinite(self):
        with pytest.raises(InvalidArgument):
            lq.babai_round([np.nan, 0.0])


class TestReconstruct:
    def test_zero_coords_give_mu(self):
        basis = random_basis(RNG)
        mu = RNG.standard_normal(4).astype(np.float32)
        np.testing.assert_allclose(lq.lattice_reconstruct(np.zeros(4), mu, basis), mu, atol=1e-6)

    def test_scalar_quantizer_reduction(self):
        basis = lq.LatticeBasis.identity(4)
        y = RNG.standard_normal(4).astype(np.float32) * 3
        mu = RNG.standard_normal(4).astype(np.float32)
        got = lq.lattice_reconstruct(lq.babai_round(lq.lattice_transform(y, mu, basis)), mu, basis)
        expect = lq.babai_round(y - mu) + mu
        np.testing.assert_allclose(got, expect, atol=1e-5)

    def test_hand_matrix_multiply(self):
        basis = lq.LatticeBasis.from_matrix(np.array([[1.0, 0.0], [0.9, 1.0]]))
        out = lq.lattice_reconstruct([1.0, -1.0], [0.0, 0.0], basis)
        np.testing.assert_allclose(out, [1.0, -0.1], atol=1e-5)


class TestDensityScale:
    def test_a_one_identity(self):
        y = RNG.standard_normal(4).astype(np.float32)
        np.testing.assert_array_equal(lq.density_unscale(lq.density_scale(y, 1.0), 1.0), y)

    def test_scale_unscale_inverse(self):
        y = RNG.standard_normal(64).astype(np.float32)
        np.testing.assert_allclose(lq.density_unscale(lq.density_scale(y, 4.0), 4.0), y, atol=1e-6)

    def test_rejects_nonpositive(self):
        with pytest.raises(InvalidArgument):
            lq.density_scale([1.0], 0.0)
        with pytest.raises(InvalidArgument):
            lq.density_unscale([1.0], -2.0)

    def test_monte_carlo_error_drops_with_density(self):
        basis = random_basis(np.random.default_rng(7))
        ys = np.random.default_rng(8).standard_normal((1000, 4)).astype(np.float32)
        mu = np.zeros(4, np.float32)

        def mean_err(a):
            _, y_hat = lq.quantize(ys, mu, basis, a)
            return float(np.linalg.norm(ys - y_hat, axis=1).mean())

        assert mean_err(4.0) <= mean_err(1.0)


class TestBruteForceOracle:
    def test_orthogonal_matches_babai(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((4, 4))
        q, r = np.linalg.qr(a)
        q *= np.sign(np.diag(r))
        basis = lq.LatticeBasis(q.astype(np.float32), np.eye(4, dtype=np.float32),
                                np.ones(4, np.float32))
        for _ in range(50):
            y = rng.standard_normal(4).astype(np.float32) * 2
            babai = lq.babai_round(lq.lattice_transform(y, np.zeros(4), basis))
            oracle = lq.brute_force_nearest(y, basis, radius=2)
            np.testing.assert_array_equal(oracle, babai)

    def test_identity_is_rounding(self):
        basis = lq.LatticeBasis.identity(3)
        y = np.array([0.7, -1.2, 2.49], np.float32)
        np.testing.assert_array_equal(lq.brute_force_nearest(y, basis, 2), lq.babai_round(y))

    def test_skewed_oracle_never_worse(self):
        basis = lq.LatticeBasis.from_matrix(np.array([[1.0, 0.0], [0.9, 1.0]]))
        rng = np.random.default_rng(12)
        mismatches = 0
        for _ in range(200):
            y = rng.standard_normal(2).astype(np.float32) * 2
            babai = lq.babai_round(lq.lattice_transform(y, np.zeros(2), basis))
            oracle = lq.brute_force_nearest(y, basis, radius=3)
            d_b = np.linalg.norm(babai @ basis.b_mat.T.astype(np.float64) - y)
            d_o = np.linalg.norm(oracle @ basis.b_mat.T.astype(np.float64) - y)
            assert d_o <= d_b + 1e-6
            mismatches += int(not np.array_equal(babai, oracle))
        # informational: Babai is approximate on skewed bases
        assert 0 <= mismatches <= 200

    def test_bounds(self):
        with pytest.raises(InvalidArgument):
            lq.brute_force_nearest(np.zeros(5, np.float32), lq.LatticeBasis.identity(5), 2)
        with pytest.raises(InvalidArgument):
            lq.brute_force_nearest(np.zeros(2, np.float32), lq.LatticeBasis.identity(2), 7)


class TestInvariants:
    def test_transform_reconstruct_identity(self):
        for seed in range(5):
            basis = random_basis(np.random.default_rng(seed), log_sigma_range=1.5)
            y = np.random.default_rng(seed + 100).standard_normal((32, 4)).astype(np.float32)
            mu = np.zeros(4, np.float32)
            back = lq.lattice_reconstruct(lq.lattice_transform(y, mu, basis), mu, basis)
            np.testing.assert_allclose(back, y, atol=1e-4)

    def test_cell_bound(self):
        basis = random_basis(np.random.default_rng(3))
        y = np.random.default_rng(4).standard_normal((500, 4)).astype(np.float32) * 5
        tr = lq.lattice_transform(y, np.zeros(4, np.float32), basis)
        delta = np.abs(tr - lq.babai_round(tr))
        assert delta.max() <= 0.5 + 1e-6
