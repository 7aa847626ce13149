from fractions import Fraction

import numpy as np
import pytest

from singing_mis.coin import (
    alpha,
    capped_win_probability,
    estimate_coin_bounds,
    exact_win_probability,
    ordering_probability,
    outcome,
    run_competition,
    weak_orderings,
    y_lower_bound,
)
from singing_mis.protocol import ConfigError


def test_outcome_winner_and_tie():
    assert outcome([3, 1, 2]).winner == 0
    assert outcome([2, 2, 1]).tie


def test_run_competition_shapes():
    out = run_competition(5, rng=np.random.default_rng(1))
    assert len(out.steps) == 5 and min(out.steps) >= 1


@pytest.mark.parametrize("d, p", [(0, 0.5), (2, 0.0), (2, 1.0)])
def test_bad_arguments(d, p):
    with pytest.raises(ConfigError):
        y_lower_bound(d, p)


def test_single_agent_always_wins():
    assert exact_win_probability(1, Fraction(1, 2)) == 1
    est, = estimate_coin_bounds([1], trials=1000)
    assert est.y_hat == 1 and est.x_hat == 1


def test_weak_ordering_counts():
    # Fubini numbers
    assert [len(weak_orderings(k)) for k in range(5)] == [1, 1, 3, 13, 75]


@pytest.mark.parametrize("p", [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_ordering_probabilities_sum_to_one(k, p):
    assert sum(ordering_probability([len(b) for b in o], p) for o in weak_orderings(k)) == 1


def test_two_agent_win_probability_closed_form():
    # Pr[tie] = (1-p)/(1+p), the rest is split evenly
    for p in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)):
        assert exact_win_probability(2, p) == (1 - (1 - p) / (1 + p)) / 2


@pytest.mark.parametrize("p", [Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)])
def test_exact_values_respect_bound(p):
    values = [exact_win_probability(d, p) for d in range(1, 5)]
    for d, y in enumerate(values, start=1):
        assert y >= 2 * p / ((1 + p) * d)
    assert all(a >= b for a, b in zip(values, values[1:]))


def test_two_agents_hit_the_bound_exactly():
    for p in (Fraction(1, 4), Fraction(1, 2), Fraction(3, 4)):
        assert exact_win_probability(2, p) == p / (1 + p)


def test_capped_enumeration_brackets_exact_value():
    for d in (1, 2, 3):
        y = exact_win_probability(d, Fraction(1, 2))
        lo, missing = capped_win_probability(d, Fraction(1, 2), 8)
        assert lo <= y <= lo + missing


def test_monte_carlo_close_to_exact():
    est = estimate_coin_bounds([2, 3, 4], p=0.5, trials=200_000, seed=3)
    for e in est:
        y = float(exact_win_probability(e.d, Fraction(1, 2)))
        assert abs(e.y_hat - y) <= 4 * e.y_se
        assert e.y_ok and e.x_ok and e.unresolved == 0


def test_estimates_are_reproducible():
    a = estimate_coin_bounds([3], trials=5000, seed=9)[0]
    b = estimate_coin_bounds([3], trials=5000, seed=9, chunk=777)[0]
    assert (a.y_hat, a.x_hat) == (b.y_hat, b.x_hat)


def test_alpha():
    assert alpha(0.5) == pytest.approx(2 / 3)
    assert y_lower_bound(4, 0.5) == pytest.approx(alpha(0.5) / 4)
