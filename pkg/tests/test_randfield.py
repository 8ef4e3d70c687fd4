import numpy as np
import pytest

from hcpflow import randfield


def small_spec(nx=6, ny=6, eta=408.0, sigma2=1.0):
    return randfield.CovarianceSpec(sigma2=sigma2, eta=eta,
                                    domain=nx * 20.0, nx=nx, ny=ny)


class TestCovariance:
    def test_zero_separation_gives_variance(self):
        cov = randfield.build_covariance(small_spec(sigma2=2.5))
        np.testing.assert_allclose(np.diag(cov), 2.5)

    def test_neighbor_entry(self):
        spec = small_spec()
        cov = randfield.build_covariance(spec)
        # adjacent cells along x: separation 20, eta 408
        assert cov[0, 1] == pytest.approx(np.exp(-20.0 / 408.0), abs=1e-12)
        assert cov[0, 1] == pytest.approx(0.9522, abs=1e-4)

    def test_huge_correlation_length_collapses(self):
        cov = randfield.build_covariance(small_spec(eta=1e12))
        np.testing.assert_allclose(cov, 1.0, atol=1e-9)

    def test_symmetry(self):
        cov = randfield.build_covariance(small_spec())
        np.testing.assert_array_equal(cov, cov.T)

    def test_invalid_eta_rejected(self):
        with pytest.raises(ValueError):
            randfield.CovarianceSpec(eta=0.0)


class TestDecompose:
    def test_full_reconstruction(self):
        spec = small_spec()
        cov = randfield.build_covariance(spec)
        basis = randfield.decompose(cov, spec.nx * spec.ny, spec)
        recon = (basis.modes.T * basis.eigenvalues) @ basis.modes
        np.testing.assert_allclose(recon, cov, atol=1e-8)

    def test_zero_variance_zero_spectrum(self):
        spec = small_spec(sigma2=0.0)
        basis = randfield.build_basis(spec, 5)
        np.testing.assert_allclose(basis.eigenvalues, 0.0, atol=1e-12)

    def test_too_many_terms_rejected(self):
        spec = small_spec()
        cov = randfield.build_covariance(spec)
        with pytest.raises(ValueError):
            randfield.decompose(cov, spec.nx * spec.ny + 1, spec)

    def test_eigenvalues_descending_and_bounded(self):
        spec = small_spec()
        basis = randfield.build_basis(spec, 10)
        assert np.all(np.diff(basis.eigenvalues) <= 1e-12)
        assert basis.eigenvalues.sum() <= spec.nx * spec.ny * spec.sigma2 + 1e-6
        # orthonormal modes under the grid inner product
        gram = basis.modes @ basis.modes.T
        np.testing.assert_allclose(gram, np.eye(10), atol=1e-8)

    def test_reconstruction_error_decreases_with_terms(self):
        spec = small_spec()
        cov = randfield.build_covariance(spec)
        errors = []
        for m in (2, 6, 12, 36):
            basis = randfield.decompose(cov, m, spec)
            recon = (basis.modes.T * basis.eigenvalues) @ basis.modes
            errors.append(np.linalg.norm(cov - recon))
        assert all(a >= b - 1e-12 for a, b in zip(errors, errors[1:]))

    def test_retained_energy_consistent_across_resolution(self):
        # energy fraction of 20 modes at 51x51 vs the 26x26 refinement oracle
        from hcpflow import labcli
        fine = randfield.CovarianceSpec(nx=51, ny=51, domain=1020.0)
        coarse = randfield.CovarianceSpec(nx=26, ny=26, domain=1020.0)
        e_fine = randfield.retained_energy(labcli.kle_basis(fine, 20))
        e_coarse = randfield.retained_energy(randfield.build_basis(coarse, 20))
        assert abs(e_fine - e_coarse) / e_coarse < 0.05


class TestSampling:
    def test_zero_xi_gives_unit_conductivity(self):
        basis = randfield.build_basis(small_spec(), 8)
        fld = randfield.sample_field(basis, xi=np.zeros(8))
        np.testing.assert_allclose(fld.log_k, 0.0)
        np.testing.assert_allclose(fld.k, 1.0)

    def test_single_mode_linearity(self):
        spec = small_spec()
        basis = randfield.build_basis(spec, 1)
        fld = randfield.sample_field(basis, xi=np.array([1.0]))
        expected = np.sqrt(basis.eigenvalues[0]) * basis.modes[0]
        np.testing.assert_allclose(fld.log_k.ravel(), expected, atol=1e-14)
        # exact linearity in xi
        fld3 = randfield.sample_field(basis, xi=np.array([3.0]))
        np.testing.assert_allclose(fld3.log_k, 3.0 * fld.log_k, atol=1e-13)

    def test_monte_carlo_variance(self):
        spec = small_spec(nx=8, ny=8)
        basis = randfield.build_basis(spec, 12)
        rng = np.random.default_rng(123)
        xi = rng.standard_normal((1000, 12))
        samples = (xi * np.sqrt(basis.eigenvalues)) @ basis.modes
        emp_var = samples.var(axis=0)
        theo_var = randfield.pointwise_variance(basis).ravel()
        assert np.all(np.abs(emp_var - theo_var) / theo_var < 0.10)

    def test_sample_mean_near_zero(self):
        spec = small_spec(nx=8, ny=8)
        basis = randfield.build_basis(spec, 12)
        rng = np.random.default_rng(9)
        xi = rng.standard_normal((2000, 12))
        samples = (xi * np.sqrt(basis.eigenvalues)) @ basis.modes
        assert np.abs(samples.mean(axis=0)).max() < 0.1

    def test_wrong_xi_length(self):
        basis = randfield.build_basis(small_spec(), 4)
        with pytest.raises(ValueError):
            randfield.sample_field(basis, xi=np.zeros(3))

    def test_positive_and_finite(self):
        basis = randfield.build_basis(small_spec(), 8)
        fld = randfield.sample_field(basis, seed=77)
        assert np.all(fld.k > 0)
        assert np.all(np.isfinite(fld.k))


class TestPersistence:
    def test_roundtrip(self, tmp_path):
        basis = randfield.build_basis(small_spec(), 8)
        fld = randfield.sample_field(basis, seed=5)
        path = tmp_path / "field.json"
        randfield.save_field(path, fld)
        back = randfield.load_field(path)
        np.testing.assert_allclose(back.k, fld.k, rtol=1e-15)
        assert back.seed == 5
