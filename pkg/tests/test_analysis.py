import math
from fractions import Fraction

import numpy as np
import pytest

from conftest import all_un
from singing_mis._topology import Topology
from singing_mis.analysis import (
    active_mask,
    alpha_bounds,
    check_async_contraction,
    check_dynamic_contraction,
    check_eligibility_probability,
    check_static_contraction,
    classify,
    one_round_leader_check,
    refined_status,
)
from singing_mis.async_engine import TimingParams
from singing_mis.generators import churn_script, generate
from singing_mis.network import Network
from singing_mis.protocol import IN, OUT, UN, ConfigError
from singing_mis.sync_engine import run_sync


def test_refined_status_on_path(path5):
    st = {0: IN, 1: OUT, 2: UN, 3: IN, 4: IN}
    rs = refined_status(path5, st)
    assert str(rs[0]) == "In^~In" and str(rs[2]) == "Un^In" and str(rs[3]) == "In^In"


def test_classify_leaders_eliminate_their_neighbourhood(path5):
    # 0 is a leader (In, no In neighbour); 3 and 4 are In next to each other
    st = {0: IN, 1: UN, 2: UN, 3: IN, 4: IN}
    cls = classify(path5, st)
    assert cls.active_agents == {2, 3, 4}
    assert cls.active_edges == {(2, 3), (3, 4)} and cls.e == 2
    assert cls.eliminated_edges == {(0, 1), (1, 2)}


def test_all_un_is_fully_active():
    net = generate("gnp:30,0.2", 1)
    assert classify(net, all_un(net)).e == net.num_edges


def test_active_mask_matches_classify():
    net = generate("gnp:25,0.2", 2)
    topo = Topology(net)
    rng = np.random.default_rng(0)
    rows = rng.integers(0, 3, size=(50, len(net))).astype(np.int8)
    active, e = active_mask(topo, rows)
    for r in range(rows.shape[0]):
        st = {int(a): int(rows[r, i]) for i, a in enumerate(topo.ids)}
        cls = classify(net, st)
        assert e[r] == cls.e
        assert {int(topo.ids[i]) for i in np.flatnonzero(active[r])} == cls.active_agents


def test_alpha_bounds():
    assert alpha_bounds([]) == []
    assert alpha_bounds([0.5]) == [pytest.approx(2 / 3)]
    equal = alpha_bounds([0.5, 0.5, 0.5])
    assert all(a == pytest.approx(2 / 3) for a in equal)
    mixed = alpha_bounds([0.25, 0.75])
    assert mixed[0] < mixed[1]
    with pytest.raises(ConfigError):
        alpha_bounds([0.5, 1.0])


def test_one_round_leader_small_networks():
    for variant in ("singing", "sj"):
        checked, bad = one_round_leader_check(3, variant=variant)
        assert checked > 0 and bad == []


def test_static_contraction_report():
    net = generate("gnp:30,0.2", 0)
    tr = run_sync(net, all_un(net), seed=0)
    rep = check_static_contraction([tr], branches=2000, seed=1)
    assert rep.samples > 0 and rep.passed
    assert all(0 <= r["mean"] <= 1 for r in rep.rows)
    keys, rows = rep.csv_rows()
    assert "mean" in keys and len(rows) == rep.samples
    assert "PASS" in rep.summary()


def test_static_contraction_rejects_dynamic_traces():
    net = generate("gnp:30,0.2", 0)
    tr = run_sync(net, all_un(net), script=churn_script(net, 10, 0.1, seed=1), max_rounds=11,
                  stop_on_convergence=False)
    with pytest.raises(ConfigError):
        check_static_contraction([tr], branches=10)


def test_eligibility_report():
    net = generate("gnp:20,0.25", 3)
    tr = run_sync(net, all_un(net), variant="sj", seed=3)
    rep = check_eligibility_probability([tr], branches=2000, rounds={1}, seed=2)
    assert rep.samples == len(net) and rep.passed


def test_dynamic_contraction_report():
    net = generate("gnp:40,0.1", 5)
    tr = run_sync(net, all_un(net), script=churn_script(net, 20, 0.05, seed=5), seed=5, max_rounds=21,
                  stop_on_convergence=False)
    rep = check_dynamic_contraction([tr], branches=1000, windows=range(1, 17, 5), seed=3)
    assert rep.samples > 0 and rep.passed


def test_async_contraction_report():
    net = generate("gnp:24,0.2", 1)
    rep = check_async_contraction(net, TimingParams(4, 8, 2), "sj", trials=300, t_diff=(40, 52), seed=1)
    assert [r["window"] for r in rep.rows] == [40, 52]
    assert rep.passed
    assert all(math.isfinite(r["mean"]) for r in rep.rows)


def test_one_round_leader_factor_is_bias_dependent():
    # two In agents on an edge: the In^~In probability over Pr[In] is p, so
    # the factor 1/2 breaks for biases below 1/2
    assert one_round_leader_check(3, variant="sj", p=Fraction(3, 4))[1] == []
    _, bad = one_round_leader_check(2, variant="sj", p=Fraction(1, 4))
    assert ([(0, 1)], (IN, IN), (0,), Fraction(1, 5), Fraction(1, 5)) in bad
    assert min(q / (1 - px) for *_, q, px in bad) == Fraction(1, 4)


def test_isolated_network_has_no_active_edges():
    net = Network(range(4))
    assert classify(net, all_un(net)).e == 0
