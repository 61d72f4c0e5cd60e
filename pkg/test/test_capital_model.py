import math

import numpy as np
import pytest
from setup_tests import reference_params, test_dir

from povtrap.capital_model import (
    BetaLoss,
    ConstantRate,
    CustomLoss,
    ExponentialRate,
    ModelParams,
    TableLoss,
    drift,
    flow_above,
    flow_below,
    flow_mid,
    growth_rate,
    load_params_file,
    sample_loss,
    time_to_barrier,
    time_to_critical,
    x_double_star,
)
from povtrap.exceptions import ValidationError


def test_growth_rate():
    assert growth_rate(0.1, 4.0, 0.4) == pytest.approx(1.44, rel=1e-14)
    with pytest.raises(ValidationError) as err:
        growth_rate(1.2, 4.0, 0.4)
    assert err.value.key == "a"
    with pytest.raises(ValidationError) as err:
        growth_rate(0.1, 4.0, 0.0)
    assert err.value.key == "c_s"


def test_reference_params():
    p = reference_params()
    assert p.r == pytest.approx(1.44, rel=1e-14)
    assert p.lam == 1.0
    assert p.net_profit
    assert not p.absorbing_below
    assert p.x_double_star == pytest.approx((0.25 * 2 - 1.44) / (1.44 - 0.25))


@pytest.mark.parametrize(
    "changes, key",
    [
        ({"lambda": 0.0}, "lambda"),
        ({"alpha": -1.0}, "alpha"),
        ({"x_star": 0.0}, "x_star"),
        ({"barrier": 0.5}, "barrier"),
        ({"c_t": -0.1}, "c_t"),
        ({"c_t": 1.44}, "c_t"),
        ({"r": 2.0}, "r"),
        ({"lambda": "1"}, "lambda"),
        ({"lambda": math.inf}, "lambda"),
        ({"gamma": 1.0}, "gamma"),
    ],
)
def test_validation_names_key(changes, key):
    with pytest.raises(ValidationError) as err:
        reference_params(**changes)
    assert err.value.key == key
    assert err.value.code == 2


def test_missing_keys():
    with pytest.raises(ValidationError) as err:
        ModelParams.from_mapping({"r": 1.0, "alpha": 1.0})
    assert err.value.key == "lambda"
    values = reference_params().to_mapping()
    del values["c_s"]
    del values["r"]
    with pytest.raises(ValidationError) as err:
        ModelParams.from_mapping(values)
    assert err.value.key == "c_s"


def test_updated():
    p = reference_params()
    q = p.updated("b", 5.0)
    assert q.r == pytest.approx(0.9 * 5.0 * 0.4)
    q = p.updated("r", 2.0)
    assert q.r == 2.0
    assert q.a is None
    q = p.updated("lambda", 2.0)
    assert q.lam == 2.0
    assert q.r == p.r
    # Frozen and hashable, used as cache key
    assert hash(p) == hash(reference_params())


def test_load_params_file():
    p = load_params_file(test_dir / "reference_params.json")
    assert p.r == 1.44
    assert p.c_t == 0.25
    with pytest.raises(ValidationError) as err:
        load_params_file(test_dir / "nothere.json")
    assert err.value.key == "params"
    with pytest.raises(ValidationError):
        load_params_file(test_dir / "broken_config.json")


def test_drift():
    p = reference_params()
    np.testing.assert_allclose(
        drift(p, [0.5, 1.0, 1.5, 2.0, 3.0]),
        [0.25 * 1.5, 0.25, 1.44 * 0.5 + 0.25 * 0.5, 1.44, 1.44 * 2.0],
    )


def test_flows_solve_the_ode():
    p = reference_params()
    h = 1e-6
    for flow, x in [(flow_above, 3.0), (flow_mid, 1.5), (flow_below, 0.5)]:
        t = 0.3
        x_t = flow(p, t, x)
        slope = (flow(p, t + h, x) - flow(p, t - h, x)) / (2.0 * h)
        assert slope == pytest.approx(float(drift(p, x_t)), rel=1e-7)
        assert flow(p, 0.0, x) == pytest.approx(x, rel=1e-15)


def test_hitting_times():
    p = reference_params()
    t = time_to_barrier(p, 1.5)
    assert flow_mid(p, t, 1.5) == pytest.approx(p.barrier, rel=1e-12)
    t = time_to_critical(p, 0.5)
    assert flow_below(p, t, 0.5) == pytest.approx(p.x_star, rel=1e-12)
    frozen = reference_params(c_t=0.0)
    assert flow_below(frozen, 10.0, 0.5) == 0.5
    assert math.isinf(time_to_critical(frozen, 0.5))


def test_transfers_faster_than_growth():
    # c_t > r: x** < -B and the middle flow still reaches B
    p = reference_params(c_t=3.0)
    assert x_double_star(p) < -p.barrier
    t = time_to_barrier(p, 1.2)
    assert t > 0.0
    assert flow_mid(p, t, 1.2) == pytest.approx(p.barrier, rel=1e-12)


def test_beta_loss():
    d = BetaLoss(0.8)
    u = np.linspace(0.01, 1.0, 50)
    np.testing.assert_allclose(d.cdf(sample_loss(d, u)), u, rtol=1e-12)
    with pytest.raises(ValidationError):
        BetaLoss(0.0)


def test_table_loss():
    d = TableLoss((0.0, 0.5, 1.0), (0.1, 0.4, 1.0))
    np.testing.assert_allclose(
        sample_loss(d, [0.0, 0.25, 0.75, 1.0]), [0.1, 0.25, 0.7, 1.0]
    )
    with pytest.raises(ValidationError):
        TableLoss((0.0, 0.6, 0.5, 1.0), (0.1, 0.2, 0.3, 1.0))
    with pytest.raises(ValidationError):
        TableLoss((0.0, 1.0), (0.0, 1.0))


def test_custom_loss():
    d = CustomLoss(np.sqrt)
    assert sample_loss(d, 0.25) == 0.5


def test_rates():
    np.testing.assert_allclose(ConstantRate(0.02)([0.1, 0.5]), [0.02, 0.02])
    np.testing.assert_allclose(ExponentialRate(0.02)([0.1, 0.5]), [0.2, 0.04])
    with pytest.raises(ValidationError) as err:
        ExponentialRate(0.0)
    assert err.value.key == "omega_exp"
