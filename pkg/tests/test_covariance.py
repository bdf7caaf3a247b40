import numpy as np
import pytest

from ddvar.covariance import CovarianceFactor
from ddvar.errors import ConfigurationError, DimensionError


@pytest.mark.parametrize("kind", ["diagonal", "gaussian"])
def test_factor_identities(grid8, rng, kind):
    cov = CovarianceFactor.for_grid(grid8, kind, (1.0, 2.0, 10.0), 1.0)
    x, y = rng.standard_normal((2,) + cov.shape)
    np.testing.assert_allclose(cov.solve(cov.apply(x)), x, atol=1e-10)
    np.testing.assert_allclose(cov.solve_t(cov.apply_t(x)), x, atol=1e-10)
    assert np.isclose(np.vdot(y, cov.apply(x)), np.vdot(cov.apply_t(y), x))
    v = cov.dense()
    b_inv = np.linalg.inv(v @ v.T)
    assert np.isclose(cov.norm2(x), x.ravel() @ b_inv @ x.ravel(), rtol=1e-8)


def test_diagonal_factor_scales_by_sigma(grid8):
    cov = CovarianceFactor.for_grid(grid8, "diagonal", (1.0, 2.0, 10.0))
    out = cov.apply(np.ones(cov.shape))
    assert out[0].max() == 1.0 and out[1].max() == 2.0 and out[2].max() == 10.0


def test_restriction_keeps_global_indices(grid8):
    cov = CovarianceFactor.for_grid(grid8, "gaussian", 1.0, 1.0)
    sub = cov.restrict(np.array([7, 0, 1]), np.arange(2, 5))
    assert sub.shape == (3, 3, 3)
    assert sub.nlon == 8


def test_rejects_bad_inputs(grid8):
    with pytest.raises(ConfigurationError):
        CovarianceFactor.for_grid(grid8, "spherical")
    with pytest.raises(ConfigurationError):
        CovarianceFactor.for_grid(grid8, "diagonal", (1.0, 0.0, 1.0))
    with pytest.raises(DimensionError):
        CovarianceFactor.for_grid(grid8).apply(np.zeros((3, 4, 4)))
