import numpy as np
import pytest

from conftest import all_un
from singing_mis.analysis import classify, locality_violations, settle_down_violations
from singing_mis.generators import churn_script, generate
from singing_mis.network import AddAgent, ChangeEvent, ChangeScript, Network
from singing_mis.protocol import IN, OUT, UN, AgentState, transition
from singing_mis.sync_engine import ell_table, is_converged, run_sync, run_sync_batch


def states_after(trace, rnd):
    return tuple(int(s) for s in trace.rounds[rnd - 1].next_state)


def test_isolated_agent_joins_in_one_round():
    net = Network([0])
    for variant in ("singing", "sj"):
        tr = run_sync(net, {0: UN}, variant=variant, seed=3)
        assert states_after(tr, 1) == (IN,)


def test_triangle_with_forced_ell(triangle):
    ells = ell_table({1: {0: 3, 1: 1, 2: 1}}, default=1)
    tr = run_sync(triangle, all_un(triangle), ell_fn=ells)
    assert states_after(tr, 1) == (IN, UN, UN)
    assert states_after(tr, 2) == (IN, OUT, OUT)
    assert tr.termination == "converged"


def test_equal_ell_singing_stays_un(k2):
    tr = run_sync(k2, all_un(k2), ell_fn=ell_table({}, default=2), max_rounds=3, stop_on_convergence=False)
    assert states_after(tr, 1) == (UN, UN)


def test_equal_ell_sj_conflict_then_resolution(k2):
    ells = ell_table({1: {0: 2, 1: 2}, 2: {0: 1, 1: 2}}, default=1)
    tr = run_sync(k2, all_un(k2), variant="sj", ell_fn=ells, max_rounds=4)
    assert states_after(tr, 1) == (IN, IN)
    assert states_after(tr, 2) == (UN, IN)


@pytest.mark.parametrize("net, states, ok", [
    (Network(range(3), [(0, 1), (1, 2)]), (IN, OUT, IN), True),
    (Network(range(3), [(0, 1), (1, 2)]), (IN, UN, IN), False),
    (Network(range(3), [(0, 1), (1, 2), (0, 2)]), (IN, IN, OUT), False),
    (Network(range(3), [(0, 1), (1, 2)]), (OUT, IN, OUT), True),
    (Network(range(3), [(0, 1), (1, 2)]), (IN, OUT, OUT), False),  # 2 is not dominated
])
def test_is_converged(net, states, ok):
    assert is_converged(net, dict(enumerate(states))) is ok


def test_round_records_follow_the_rules():
    net = generate("gnp:40,0.15", 2)
    for variant in ("singing", "sj"):
        tr = run_sync(net, all_un(net), variant=variant, seed=5)
        for rec in tr.rounds:
            for i, a in enumerate(rec.agents):
                assert transition(rec.state[i], int(rec.ell[i]), rec.heard(int(a)), variant) == rec.next_state[i]
            assert rec.active_edges == classify(net, rec.states()).e
        assert [r.round for r in tr.rounds] == list(range(1, len(tr.rounds) + 1))


@pytest.mark.parametrize("seed", range(8))
def test_static_singing_monotone_and_independent(seed):
    net = generate("gnp:60,0.12", seed)
    tr = run_sync(net, all_un(net), seed=seed)
    left, prev = set(), {}
    for rec in tr.rounds:
        st = rec.states()
        for u in left:
            assert st[u] is prev[u]
        for u, v in net.edges:
            assert not (st[u] is IN and st[v] is IN)
        cls = classify(net, st)
        for u in cls.active_agents:
            assert st[u] is UN and not any(st[w] is IN for w in net.neighbors(u))
        left |= {u for u, s in st.items() if s is not UN}
        prev = st
    assert tr.termination == "converged"
    assert is_converged(tr.final_network, tr.final_states)


def test_eliminated_is_absorbing_in_static_singing():
    net = generate("gnp:80,0.08", 11)
    tr = run_sync(net, all_un(net), seed=11)
    prev = set()
    for rec in tr.rounds:
        elim = set(classify(net, rec.states()).agent_active) - classify(net, rec.states()).active_agents
        assert prev <= elim
        prev = elim


def test_determinism_and_batch_agreement():
    net = generate("gnp:50,0.1", 1)
    a = run_sync(net, all_un(net), variant="sj", seed=42)
    b = run_sync(net, all_un(net), variant="sj", seed=42)
    assert [r.next_state.tolist() for r in a.rounds] == [r.next_state.tolist() for r in b.rounds]
    batch = run_sync_batch(net, all_un(net), [40, 41, 42], variant="sj")
    assert batch.converged_round[2] == a.converged_round


def test_sj_convergence_needs_a_quiet_round():
    for seed in range(10):
        net = generate("gnp:30,0.2", seed)
        tr = run_sync(net, all_un(net), variant="sj", seed=seed)
        last = tr.rounds[-1]
        assert tr.termination == "converged"
        assert np.array_equal(last.state, last.next_state)


def test_budget_exhaustion_is_reported():
    net = generate("complete:30")
    tr = run_sync(net, all_un(net), ell_fn=ell_table({}, default=1), max_rounds=5)
    assert tr.termination == "budget" and tr.converged_round is None


def test_new_agent_runs_in_its_first_round():
    net = Network([0, 1], [(0, 1)])
    script = ChangeScript([ChangeEvent(3, AddAgent(5, AgentState.UN, ()))])
    tr = run_sync(net, all_un(net), script=script, seed=1, max_rounds=6, stop_on_convergence=False)
    rec = tr.rounds[2]
    i = int(np.searchsorted(rec.agents, 5))
    assert rec.agents[i] == 5 and rec.state[i] == UN and rec.next_state[i] == IN


@pytest.mark.parametrize("variant", ["singing", "sj"])
def test_churn_locality_and_settle_down(variant):
    net = generate("gnp:40,0.1", 3)
    script = churn_script(net, 40, 0.05, seed=4, fault_rate=0.01)
    tr = run_sync(net, all_un(net), script=script, variant=variant, seed=5, max_rounds=41, stop_on_convergence=False)
    assert locality_violations(tr) == []
    assert settle_down_violations(tr) == []


def test_dynamic_run_converges_after_churn_stops():
    net = generate("gnp:40,0.1", 6)
    script = churn_script(net, 10, 0.05, seed=6)
    tr = run_sync(net, all_un(net), script=script, variant="singing", seed=6)
    assert tr.termination == "converged"
    assert is_converged(tr.final_network, tr.final_states)
