import math
from decimal import Decimal, localcontext

import numpy as np
import pytest

from egfl_lab.errors import BoundDomainError
from egfl_lab.theory import (
    BoundInputs,
    alpha,
    bound_constant,
    convergence_probability,
    count_violations,
    delta_curve,
    js_lower_bound,
    series_probability,
    violation_rate,
)


def _decimal_delta(inputs, convention="printed"):
    """Closed form evaluated with 50 significant digits"""
    with localcontext() as ctx:
        ctx.prec = 50
        D = [Decimal(d) for d in inputs.D]
        B = [Decimal(b) for b in inputs.B]
        D_n = sum(D)
        log_term = (Decimal(1) - Decimal(inputs.V) ** 2 / 4).ln()
        a = Decimal(inputs.delta) + (log_term if convention == "printed" else -log_term)
        C = 2 * Decimal(inputs.R_lambda) * sum(d * b for d, b in zip(D, B)) + D_n * a
        q = (-(D_n * Decimal(inputs.epsilon)) ** 2 / (2 * C * C)).exp()
        nu = Decimal(inputs.nu)
        return float(1 - nu / (1 + (nu - 1) * q))


def _random_inputs(rng):
    K = int(rng.integers(1, 6))
    return BoundInputs(
        nu=float(rng.uniform(0.05, 0.95)),
        epsilon=float(rng.uniform(0.0, 1.0)),
        R_lambda=float(rng.uniform(0.0, 1e-3)),
        B=rng.uniform(0.1, 5.0, size=K).tolist(),
        D=rng.integers(100, 1500, size=K).tolist(),
        delta=float(rng.uniform(0.05, 0.5)),
        V=float(rng.uniform(0.0, 1.0)),
    )


def _inputs(**changes):
    base = dict(nu=0.3, epsilon=0.1, R_lambda=1e-5, B=(2.0, 3.0), D=(500, 1000), delta=0.1, V=0.2)
    base.update(changes)
    return BoundInputs(**base)


def test_matches_high_precision_reference():
    """Test the bound against a 50-digit evaluation on random inputs"""
    rng = np.random.default_rng(8)
    for _ in range(20):
        inputs = _random_inputs(rng)
        for convention in ("printed", "alt"):
            assert convergence_probability(inputs, convention) == pytest.approx(
                _decimal_delta(inputs, convention), abs=1e-12)


def test_zero_epsilon_gives_zero():
    """Test Delta(eps = 0) is exactly zero"""
    assert convergence_probability(_inputs(epsilon=0.0)) == 0.0
    assert convergence_probability(_inputs(epsilon=0.0), "alt") == 0.0


def test_large_epsilon_approaches_one_minus_nu():
    """Test Delta tends to 1 - nu as eps grows"""
    assert convergence_probability(_inputs(epsilon=1e6)) == pytest.approx(0.7, abs=1e-9)


def test_delta_is_monotone_in_epsilon():
    """Test Delta never decreases along an epsilon grid"""
    curve = delta_curve(_inputs(), np.linspace(0.0, 2.0, 100))
    assert all(b >= a - 1e-15 for a, b in zip(curve, curve[1:]))
    assert all(0.0 <= v <= 1.0 for v in curve)


def test_series_matches_closed_form():
    """Test the term-by-term geometric sum agrees with the closed form"""
    rng = np.random.default_rng(9)
    for _ in range(10):
        inputs = _random_inputs(rng)
        assert series_probability(inputs) == pytest.approx(convergence_probability(inputs), abs=1e-12)


def test_worked_example():
    """Test nu = 0.3, eps = 0.5, D_n = 1500, C = 100 lands on 0.7"""
    inputs = _inputs(nu=0.3, epsilon=0.5, R_lambda=0.0, V=0.0, delta=100 / 1500)
    assert bound_constant(inputs) == pytest.approx(100.0)
    assert convergence_probability(inputs) == pytest.approx(0.7, abs=1e-9)


def test_js_lower_bound_values():
    """Test the JS floor at the ends of its domain"""
    assert js_lower_bound(0.0) == 0.0
    assert js_lower_bound(1.0) == pytest.approx(0.287682, abs=1e-6)
    with pytest.raises(BoundDomainError):
        js_lower_bound(1.5)


def test_alpha_conventions():
    """Test the alternative convention flips the sign of the log term"""
    inputs = _inputs(V=0.6, delta=0.2)
    log_term = math.log(1 - 0.09)
    assert alpha(inputs, "printed") == pytest.approx(0.2 + log_term)
    assert alpha(inputs, "alt") == pytest.approx(0.2 - log_term)
    with pytest.raises(ValueError, match="convention"):
        alpha(inputs, "other")


def test_zero_denominator_is_a_domain_error():
    """Test C = 0 is refused rather than divided by"""
    inputs = _inputs(R_lambda=0.0, delta=0.0, V=0.0)
    with pytest.raises(BoundDomainError, match="denominator"):
        convergence_probability(inputs)


@pytest.mark.parametrize("changes", [
    dict(nu=0.0),
    dict(nu=1.0),
    dict(epsilon=-0.1),
    dict(V=1.2),
    dict(B=(1.0,)),
    dict(D=(0, 10)),
])
def test_invalid_inputs(changes):
    """Test out-of-domain bound inputs are refused"""
    with pytest.raises(BoundDomainError):
        _inputs(**changes)


def test_violation_rate_floor_and_ceiling():
    """Test nu is clamped into (0, 1) and flagged when clamped"""
    assert violation_rate(0, 10) == (pytest.approx(1 / 11), True)
    assert violation_rate(10, 10) == (pytest.approx(10 / 11), True)
    assert violation_rate(3, 10) == (pytest.approx(0.3), False)
    with pytest.raises(BoundDomainError):
        violation_rate(0, 0)


def _record(t, k, n, epoch, phi):
    return {"round": t, "k": k, "n": n, "epoch": epoch, "phi": phi}


def test_count_violations_uses_final_epoch_mean():
    """Test a round violates when the clients' final-epoch Phi averages above zero"""
    records = [
        _record(0, 0, 0, 0, 0.5), _record(0, 0, 0, 1, 0.1),
        _record(0, 1, 0, 0, 0.4), _record(0, 1, 0, 1, -0.3),
        _record(1, 0, 0, 1, 0.2), _record(1, 0, 0, 0, -0.9),
        _record(1, 1, 0, 1, 0.0),
        _record(0, 0, 1, 1, 0.8),
    ]
    assert count_violations(records, 0) == (1, 2)
    assert count_violations(records, 1) == (1, 1)
    with pytest.raises(BoundDomainError):
        count_violations(records, 2)
