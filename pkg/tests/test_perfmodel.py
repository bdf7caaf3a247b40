import numpy as np
import pytest

from ddvar import perfmodel as pm
from ddvar.errors import ConfigurationError, DimensionError
from ddvar.spacetime import SpaceTimeGrid, build_decomposition


def test_surface_to_volume_formula():
    assert pm.surface_to_volume(4, 8) == 0.75
    with pytest.raises(DimensionError):
        pm.surface_to_volume(0, 8)


@pytest.mark.parametrize("shape", [(2, 2, 1), (1, 2, 2), (4, 4, 2)])
def test_discrete_count_matches_formula_up_to_corners(shape):
    g = SpaceTimeGrid.band(16, 8, 600.0)
    dec = build_decomposition(g, *shape)
    D_t, D_s = pm.block_sizes(dec)
    gap = pm.discrete_surface_to_volume(dec) - pm.surface_to_volume(D_t, D_s)
    assert np.isclose(gap, pm.corner_correction(D_t, D_s))


def test_alpha_is_one_for_monomials():
    for d in (1, 2, 3):
        assert pm.alpha(1000, 16, pm.ComplexityPoly.monomial(d)) == 1.0


def test_alpha_tends_to_one():
    poly = pm.ComplexityPoly((5.0, 3.0, 1.0))
    vals = [pm.alpha(n, 8, poly) for n in (10, 100, 1000, 10000)]
    assert all(abs(b - 1) < abs(a - 1) for a, b in zip(vals, vals[1:]))
    assert abs(vals[-1] - 1) < 1e-3


def test_theoretical_scaleup_monomial_case():
    sc = pm.theoretical_scaleup(100, 50, 1000, 8, pm.ComplexityPoly.monomial(2))
    assert sc == 2.0 * 8


def test_measured_scaleup():
    assert pm.measured_scaleup(1.0, 0.0, 4, T_global=16.0) == 4.0
    assert pm.measured_scaleup(1.0, 1.0, 4, literal=True) == 1.0 / 8
    with pytest.raises(DimensionError):
        pm.measured_scaleup(1.0, 0.0, 4)


def test_alpha_measured_flags_out_of_model():
    assert pm.alpha_measured(10.0, 0.01).in_model
    assert not pm.alpha_measured(0.5, 0.01).in_model
    assert not pm.alpha_measured(10.0, 0.95).in_model
    assert pm.scaleup_bracket(1.0, 10.0, 0.95, 16) is None


def test_memory_model_fit():
    model = pm.MemoryModel.calibrate()
    for row in pm.memory_table(model):
        assert row["relative_error"] < 0.15
    diag = pm.memory_ratio_diagnostic()
    assert np.isclose(diag["observed"], 1313.0 / 177.0)


def test_tables_shapes_and_sources():
    poly = pm.ComplexityPoly.monomial(2)
    weak = pm.weak_scaling_table(3072, (2, 4), poly, reference=True,
                                 timings={4: (10.0, 1.0, 0.5)})
    assert [r["source"] for r in weak] == ["modeled", "measured"]
    assert weak[0]["reference_Sc_meas"] == 3.3
    assert all(np.isclose(r["surface_to_volume"], pm.surface_to_volume(4, 1024)) for r in weak)
    strong = pm.strong_scaling_table(3072 * 8, (1, 2, 4, 8), poly)
    assert [r["QP"] for r in strong] == [1, 2, 4, 8]
    speed = pm.speedup_table(0.01)
    assert len(speed) == 8 and all(r["in_model"] for r in speed)


def test_modeled_scaleup_is_monotone_for_quadratic_cost():
    weak = pm.weak_scaling_table(3072, (2, 4, 8, 16, 32, 64), pm.ComplexityPoly.monomial(2))
    sc = [r["Sc_meas"] for r in weak]
    assert all(b > a for a, b in zip(sc, sc[1:]))


def test_record_validation():
    with pytest.raises(ConfigurationError):
        pm.ScalabilityRecord(QP=0, N_loc=1, rho_G=1, rho_DD=1, T_flop=1, T_oh=0)
    with pytest.raises(ConfigurationError):
        pm.ComplexityPoly((1.0, 0.0))
    assert pm.ScalabilityRecord(4, 10, 1, 1, 1, 0).N == 40
