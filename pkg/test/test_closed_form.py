import math

import mpmath
import numpy as np
import pytest
from setup_tests import reference_params

from povtrap.capital_model import ModelParams
from povtrap.closed_form import (
    clamp_probability,
    ep_constants_constant_rate,
    ep_constants_exponential,
    ep_probability_constant,
    ep_probability_exponential,
    exponents,
    generator_residual,
    laplace_trapping,
    laplace_trapping_no_transfer,
    trapping_constants,
    trapping_probability,
    trapping_probability_no_transfer,
)
from povtrap.exceptions import ProbabilityRangeError, ValidationError

X_GRID = [round(1.0 + 0.1 * k, 10) for k in range(51)]
EP_GRID = [round(0.1 * k, 10) for k in range(1, 61)]


def random_params(rng):
    """Valid parameter draw with x* = 1 and c_t kept away from r"""
    r = rng.uniform(0.5, 2.0)
    lam = rng.uniform(0.3, 1.5)
    alpha = lam / r + rng.uniform(0.1, 1.5)
    barrier = rng.uniform(1.1, 4.0)
    if rng.uniform() < 0.75:
        c_t = r * rng.uniform(0.05, 0.8)
    else:
        c_t = r * rng.uniform(1.2, 2.0)
    changes = {"r": r, "a": None, "b": None, "c_s": None, "lambda": lam}
    return reference_params(alpha=alpha, barrier=barrier, c_t=c_t, **changes)


def derivative_jump(func, at):
    h = 2e-5 * at
    left = (3.0 * func(at) - 4.0 * func(at - h) + func(at - 2.0 * h)) / (2.0 * h)
    right = (-3.0 * func(at) + 4.0 * func(at + h) - func(at + 2.0 * h)) / (2.0 * h)
    return abs(left - right) / max(abs(left), abs(right))


def test_exponents():
    a, b = exponents(1.44, 1.0, 0.8, 0.0)
    assert a == 0.0
    assert b == pytest.approx(0.8 - 1.0 / 1.44)
    for delta in (0.05, 0.2):
        for e in exponents(1.19, 1.0, 0.8, delta):
            assert 1.19 * e * e + (delta + 1.0 - 0.8 * 1.19) * e - 0.8 * delta == (
                pytest.approx(0.0, abs=1e-12)
            )


def test_reference_trapping():
    p = reference_params()
    psi = [trapping_probability(p, x) for x in X_GRID]
    assert all(0.0 < v <= 1.0 for v in psi)
    assert all(b <= a for a, b in zip(psi, psi[1:]))
    # Transfers lower the trapping probability
    baseline = [trapping_probability_no_transfer(p, x) for x in X_GRID]
    assert all(v < w for v, w in zip(psi, baseline))


def test_continuity_random_draws():
    rng = np.random.default_rng(4)
    for i in range(50):
        p = random_params(rng)
        delta = (0.0, 0.05, 0.2)[i % 3]
        solutions = [trapping_constants(p, delta)]
        solutions.append(ep_constants_constant_rate(p, rng.uniform(0.01, 1.0), delta))
        if delta == 0.0:
            solutions.append(ep_constants_exponential(p, rng.uniform(0.01, 1.0)))
        for solution in solutions:
            residuals = solution.residuals()
            assert abs(residuals["value_at_barrier"]) < 1e-9, (p, delta)
            assert abs(residuals["derivative_at_barrier"]) < 1e-8, (p, delta)
            if "value_at_critical" in residuals:
                assert abs(residuals["value_at_critical"]) < 1e-9, (p, delta)
                assert abs(residuals["derivative_at_critical"]) < 1e-8, (p, delta)
            else:
                assert abs(residuals["boundary_at_critical"]) < 1e-9, (p, delta)
            assert derivative_jump(solution.value, p.barrier) < 1e-6, (p, delta)


def explicit_trapping_constants(p, delta):
    """Trapping constants written out as explicit closed forms,
    converted to barrier-normalised basis functions"""
    lam, alpha, x_s, barrier, c_t = p.lam, p.alpha, p.x_star, p.barrier, p.c_t

    def roots(rate):
        k = delta + lam - alpha * rate
        return sorted(np.roots([rate, k, -alpha * delta]).real)

    def rhyp(a, b, c, z):
        return mpmath.hyp2f1(a, b, c, z) * mpmath.rgamma(c)

    a_u, b_u = roots(p.r)
    a, b = roots(p.r - c_t)
    x_dd = (c_t * barrier - p.r * x_s) / (p.r - c_t)
    y_b = -barrier / x_dd
    y_s = -x_s / x_dd

    def f_u(k):
        return rhyp(b_u + k, b_u - alpha + 1, b_u - a_u + 1, x_s / barrier)

    def f_l(e, other, k, y):
        return rhyp(e + k, e - alpha + 1, e - other + 1, 1 / y)

    g_a = (delta + lam) * x_s * f_l(a, b, 0, y_s) + c_t * a * (barrier - x_s) * f_l(
        a, b, 1, y_s
    )
    g_b = (delta + lam) * x_s * f_l(b, a, 0, y_s) + c_t * b * (barrier - x_s) * f_l(
        b, a, 1, y_s
    )
    h_a = b_u * f_u(1) * f_l(a, b, 0, y_b) - a * f_u(0) * f_l(a, b, 1, y_b)
    h_b = b_u * f_u(1) * f_l(b, a, 0, y_b) - b * f_u(0) * f_l(b, a, 1, y_b)
    det = y_b ** (-b) * g_a * h_b - y_b ** (-a) * y_s ** (a - b) * h_a * g_b

    a2_u = (
        lam
        * (barrier / x_s) ** b_u
        * x_s
        * y_b ** (-(a + b))
        * y_s**a
        * (
            a * f_l(a, b, 1, y_b) * f_l(b, a, 0, y_b)
            - b * f_l(a, b, 0, y_b) * f_l(b, a, 1, y_b)
        )
        / (mpmath.gamma(1 - a_u + b_u) * det)
    )
    ratio = y_b ** (a - b) * y_s ** (b - a) * g_a * h_b / (h_a * g_b)
    # Scaled by the 1/Γ(1 + a - b) its siblings carry
    a1_l = lam * x_s * y_s**a * (1 + 1 / (-1 + ratio)) / g_a / mpmath.gamma(1 + a - b)
    a2_l = (
        lam
        * x_s
        * y_b ** (-a)
        * y_s**a
        * mpmath.gamma(1 + a - b)
        * h_a
        * mpmath.sin((a - b) * mpmath.pi)
        / ((a - b) * mpmath.pi * (-det))
    )
    scale = abs(x_dd) / barrier
    return (
        float(a2_u * (barrier / x_s) ** (-b_u)),
        float(a1_l * scale**a),
        float(a2_l * scale**b),
    )


def explicit_mid_value(p, delta, a1_l, a2_l, x):
    """Barrier-normalised middle regime solution ``-x**/x`` form"""
    rate = p.r - p.c_t
    a, b = sorted(
        np.roots([rate, delta + p.lam - p.alpha * rate, -p.alpha * delta]).real
    )
    z = -p.x_double_star / x

    def basis(e, other):
        return (x / p.barrier) ** (-e) * mpmath.hyp2f1(
            e, e - p.alpha + 1, e - other + 1, z
        )

    return float(a1_l * basis(a, b) + a2_l * basis(b, a))


def test_constants_against_explicit_forms():
    rng = np.random.default_rng(17)
    checked = 0
    while checked < 20:
        p = random_params(rng)
        if not (p.c_t < p.r and p.x_double_star < 0.0):
            continue
        delta = (0.0, 0.05, 0.2)[checked % 3]
        constants = trapping_constants(p, delta)
        a2_u, a1_l, a2_l = explicit_trapping_constants(p, delta)
        assert constants.a2_u == pytest.approx(a2_u, rel=1e-8, abs=1e-14)
        # The middle pair may be centred at -x**, so compare the function
        for x in (p.x_star, 0.5 * (p.x_star + p.barrier), 0.999 * p.barrier):
            expected = explicit_mid_value(p, delta, a1_l, a2_l, x)
            assert constants.value(x) == pytest.approx(expected, rel=1e-8, abs=1e-14)
        checked += 1


def test_ep_ordering_and_limit():
    p = reference_params()
    previous = [0.0] * len(EP_GRID)
    for omega in (0.02, 0.05, 0.09, 1e2, 1e4):
        values = [ep_probability_constant(p, omega, 0.0, x) for x in EP_GRID]
        assert all(v >= w - 1e-10 for v, w in zip(values, previous)), omega
        for x, v in zip(EP_GRID, values):
            if x >= p.x_star:
                assert v <= trapping_probability(p, x) + 1e-10, (omega, x)
        previous = values
    for x, v in zip(EP_GRID, previous):
        if x >= p.x_star:
            assert abs(v - trapping_probability(p, x)) < 0.05


def test_ep_monotone_in_x():
    p = reference_params()
    for omega in (0.02, 0.09):
        values = [ep_probability_constant(p, omega, 0.0, x) for x in EP_GRID]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))
        values = [ep_probability_exponential(p, omega, x) for x in EP_GRID]
        assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))


def test_exponential_rate_dominates_constant():
    # β/x >= β below x* = 1
    p = reference_params()
    for x in EP_GRID:
        assert ep_probability_exponential(p, 0.02, x) >= ep_probability_constant(
            p, 0.02, 0.0, x
        ) - 1e-12


def test_monotone_in_policy():
    x = 1.5
    psi = [trapping_probability(reference_params(c_t=c), x) for c in (0.1, 0.25, 0.5)]
    assert psi[0] > psi[1] > psi[2]
    psi = [
        trapping_probability(reference_params(barrier=b), x) for b in (1.6, 2.0, 3.0)
    ]
    assert psi[0] > psi[1] > psi[2]
    ep = [
        ep_probability_constant(reference_params(c_t=c), 0.02, 0.0, x)
        for c in (0.1, 0.25, 0.5)
    ]
    assert ep[0] > ep[1] > ep[2]


def test_net_profit_condition():
    p = reference_params(alpha=0.6)
    assert not p.net_profit
    assert trapping_constants(p) is None
    for x in (1.0, 2.0, 10.0):
        assert trapping_probability(p, x) == 1.0
        assert trapping_probability_no_transfer(p, x) == 1.0
    with pytest.raises(ValidationError) as err:
        ep_probability_constant(p, 0.02, 0.0, 2.0)
    assert err.value.key == "alpha"
    # Discounting keeps the transform below one
    assert laplace_trapping(p, 0.1, 2.0) < 1.0


def test_laplace_decreasing_in_delta():
    p = reference_params()
    for x in (1.5, 3.0):
        values = [laplace_trapping(p, 0.01 * k, x) for k in range(51)]
        assert all(b < a for a, b in zip(values, values[1:]))
        assert values[0] == trapping_probability(p, x)
        assert laplace_trapping(p, 1e-9, x) == pytest.approx(values[0], abs=1e-7)


def test_generator_residual():
    p = reference_params()
    for solution, points in [
        (trapping_constants(p), (1.2, 1.7, 2.5, 4.0)),
        (trapping_constants(p, 0.05), (1.2, 1.7, 2.5, 4.0)),
        (ep_constants_constant_rate(p, 0.02), (0.3, 0.8, 1.2, 1.7, 2.5)),
        (ep_constants_constant_rate(p, 0.09, 0.05), (0.3, 0.8, 1.5, 3.0)),
        (ep_constants_exponential(p, 0.02), (0.3, 0.8, 1.2, 1.7, 2.5)),
    ]:
        for x in points:
            assert abs(generator_residual(solution, x)) < 1e-7, (solution, x)
    with pytest.raises(ValidationError):
        generator_residual(trapping_constants(p), 0.5)


def test_transfers_faster_than_growth():
    p = reference_params(c_t=3.0)
    constants = trapping_constants(p)
    assert all(abs(v) < 1e-9 for v in constants.residuals().values())
    psi = [trapping_probability(p, x) for x in X_GRID]
    assert all(b <= a for a, b in zip(psi, psi[1:]))
    assert abs(generator_residual(constants, 1.5)) < 1e-7
    assert psi[5] < trapping_probability(reference_params(), X_GRID[5])


def test_transfers_faster_than_growth_gamma_pole():
    # c - a of the middle regime derivative rounds to -1.4e-14 instead of 0
    p = ModelParams(
        r=3.3001752359008174,
        lam=1.0348541411005299,
        alpha=1.1781634568966821,
        x_star=1.0,
        barrier=5.830514786575096,
        c_t=3.3110270135368194,
    )
    psi = [trapping_probability(p, x) for x in (1.0, 2.0, 4.0, 5.830514786575096)]
    assert all(0.0 <= v <= 1.0 for v in psi)
    assert all(b <= a + 1e-12 for a, b in zip(psi, psi[1:]))
    assert all(abs(v) < 1e-8 for v in trapping_constants(p).residuals().values())
    for x in (0.5, 2.0):
        ep = ep_probability_constant(p, 0.02, 0.0, x)
        assert 0.0 <= ep <= 1.0
        assert 0.0 <= ep_probability_exponential(p, 0.02, x) <= 1.0
    assert ep_probability_constant(p, 0.02, 0.0, 2.0) <= psi[1] + 1e-10


def narrow_barrier_params(**changes):
    values = dict(r=0.107, alpha=16.9, barrier=1.0437, c_t=0.0338)
    values.update(changes)
    return reference_params(a=None, b=None, c_s=None, **{"lambda": 1.05}, **values)


def test_narrow_barrier():
    p = narrow_barrier_params()
    assert trapping_constants(p).mid.centred
    xs = (1.0, 1.01, 1.02, 1.04, 1.0437, 1.2, 2.0)
    psi = [trapping_probability(p, x) for x in xs]
    assert all(0.0 < v <= 1.0 for v in psi)
    assert all(b <= a + 1e-12 for a, b in zip(psi, psi[1:]))
    for delta in (0.0, 0.05):
        residuals = trapping_constants(p, delta).residuals()
        assert all(abs(v) < 1e-8 for v in residuals.values()), (delta, residuals)
        assert laplace_trapping(p, delta, 1.02) <= psi[2] + 1e-12
    for x, trap in zip(xs, psi):
        ep = ep_probability_constant(p, 0.02, 0.0, x)
        assert 0.0 <= ep <= trap + 1e-10
    for x in (1.01, 1.04):
        assert abs(generator_residual(trapping_constants(p), x)) < 1e-7
    # Wider barriers keep the barrier normalised pair
    assert not trapping_constants(narrow_barrier_params(barrier=1.5)).mid.centred


def test_smooth_at_critical_variant():
    p = reference_params()
    smooth = ep_constants_constant_rate(p, 0.02, 0.0, True)
    assert smooth.jump_scale == 0.0
    assert all(abs(v) < 1e-8 for v in smooth.residuals().values())
    jump = ep_constants_constant_rate(p, 0.02)
    assert jump.jump_scale == pytest.approx(0.02 / 0.25)
    assert smooth.value(1.5) != jump.value(1.5)


def test_without_transfers():
    p = reference_params(c_t=0.0)
    for x in (1.0, 1.5, 3.0):
        assert trapping_probability(p, x) == laplace_trapping_no_transfer(p, 0.0, x)
        # Once trapped capital never recovers: extreme poverty follows trapping
        assert ep_probability_constant(p, 0.02, 0.0, x) == pytest.approx(
            trapping_probability(p, x), rel=1e-14
        )
    assert ep_probability_constant(p, 0.02, 0.0, 0.5) == 1.0
    assert trapping_probability_no_transfer(reference_params(), 1.0) == pytest.approx(
        1.0, rel=1e-10
    )
    with pytest.raises(ValidationError):
        trapping_constants(p)


def test_input_validation():
    p = reference_params()
    with pytest.raises(ValidationError) as err:
        trapping_probability(p, 0.5)
    assert err.value.key == "x"
    with pytest.raises(ValidationError) as err:
        laplace_trapping(p, -0.1, 1.5)
    assert err.value.key == "delta"
    with pytest.raises(ValidationError) as err:
        ep_probability_constant(p, 0.0, 0.0, 1.5)
    assert err.value.key == "omega_const"


def test_clamp_probability():
    assert clamp_probability(1.0 + 5e-11) == 1.0
    assert clamp_probability(-5e-11) == 0.0
    assert clamp_probability(0.3) == 0.3
    with pytest.raises(ProbabilityRangeError):
        clamp_probability(1.01)
    with pytest.raises(ProbabilityRangeError):
        clamp_probability(math.nan)
