import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singing_mis.analysis import unaffected_ball_changes
from singing_mis.generators import churn_script, generate, parse_generator
from singing_mis.network import (
    AddAgent,
    AddEdge,
    ChangeEvent,
    ChangeScript,
    Network,
    NetworkError,
    RemoveAgent,
    RemoveEdge,
    affected_edges,
    apply_changes,
    build_network,
    format_change_script,
    format_edge_list,
    parse_change_script,
    parse_edge_list,
)
from singing_mis.protocol import UN, ConfigError


def test_remove_edge_changes_endpoints(path5):
    _, changed = apply_changes(path5, [RemoveEdge(0, 1)])
    assert changed == {0, 1}


def test_no_events_no_change(path5):
    before = path5.copy()
    _, changed = apply_changes(path5, [])
    assert changed == set()
    assert affected_edges(path5, changed, before) == set()


def test_add_agent_changes_new_edges(path5):
    _, changed = apply_changes(path5, [AddAgent(9, UN, (2,))])
    assert changed == {9, 2}
    assert path5.has_edge(2, 9)


def test_affected_edges_on_path(path5):
    before = path5.copy()
    _, changed = apply_changes(path5, [RemoveEdge(0, 1)])
    assert affected_edges(path5, changed, before) >= {(1, 2), (2, 3), (3, 4)}


def test_star_center_affects_everything():
    star = generate("star:6")
    assert affected_edges(star, {0}) == set(star.edges)


def test_inapplicable_event_is_reported(path5):
    with pytest.raises(NetworkError, match="RemoveEdge"):
        apply_changes(path5, [RemoveEdge(0, 4)])


def test_network_rejects_self_loops_and_canonicalizes():
    with pytest.raises(NetworkError):
        Network([0], [(0, 0)])
    net = build_network([(3, 1)])
    assert net.edges == {(1, 3)}


def test_edge_list_round_trip():
    net = generate("gnp:30,0.2", 4)
    net.add_agent(99)
    back = parse_edge_list(format_edge_list(net))
    assert back == net


def test_edge_list_comments_and_blank_lines():
    net = parse_edge_list("# a path\n\n0 1\n1 2  # trailing\n")
    assert net.edges == {(0, 1), (1, 2)}


def test_change_script_round_trip():
    net = generate("gnp:20,0.2", 1)
    script = churn_script(net, 10, 0.1, seed=2, fault_rate=0.05)
    assert len(script) > 0
    again = parse_change_script(format_change_script(script))
    assert format_change_script(again) == format_change_script(script)


def test_change_script_formats():
    script = parse_change_script("2 +e 0 1\n3 -e 0 1\n4 +a 7 IN 0 1\n5 -a 7\n")
    kinds = [e.kind for e in script.events]
    assert kinds == [AddEdge(0, 1), RemoveEdge(0, 1), AddAgent(7, kinds[2].state, (0, 1)), RemoveAgent(7)]


@pytest.mark.parametrize("spec", ["gnp:1,0.5", "gnp:5,0", "gnp:6,1", "ring:1", "ring:2", "grid:1x1", "complete:1",
                                  "star:1", "path:1"])
def test_generator_corner_cases(spec):
    net = generate(spec, 0)
    assert all(u in net for e in net.edges for u in e)
    if spec == "gnp:6,1":
        assert net.num_edges == 15
    if spec == "gnp:5,0":
        assert net.num_edges == 0


@pytest.mark.parametrize("text", ["gnp:10", "foo:3", "grid:0x3", "gnp:5,1.5", "ring:x"])
def test_bad_generator_specs(text):
    with pytest.raises(ConfigError):
        parse_generator(text)


def test_gnp_edge_density():
    net = generate("gnp:400,0.05", 3)
    expected = 0.05 * 400 * 399 / 2
    assert abs(net.num_edges - expected) < 5 * expected ** 0.5


@st.composite
def graph_and_events(draw):
    n = draw(st.integers(2, 10))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    present = draw(st.lists(st.sampled_from(pairs), unique=True))
    net = Network(range(n), present)
    toggles = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=3))
    events = [RemoveEdge(u, v) if net.has_edge(u, v) else AddEdge(u, v) for u, v in toggles]
    return net, events


@settings(max_examples=200, deadline=None)
@given(graph_and_events())
def test_affected_is_monotone(case):
    net, events = case
    before = net.copy()
    after, changed = apply_changes(net.copy(), events)
    for drop in changed:
        smaller = changed - {drop}
        assert affected_edges(after, smaller, before) <= affected_edges(after, changed, before)


@settings(max_examples=200, deadline=None)
@given(graph_and_events())
def test_unaffected_edges_keep_their_neighbourhood(case):
    net, events = case
    before = net.copy()
    after, changed = apply_changes(net.copy(), events)
    assert unaffected_ball_changes(before, after, changed, radius=2) == []


def test_radius_three_neighbourhood_can_change():
    # y-x with two branches x-p-q-a and x-p2-q2-b; adding {a, b} leaves {x, y}
    # unaffected although both a and b are at distance 3 from x
    y, x, p, q, a, p2, q2, b = range(8)
    net = Network(range(8), [(y, x), (x, p), (p, q), (q, a), (x, p2), (p2, q2), (q2, b)])
    before = net.copy()
    after, changed = apply_changes(net.copy(), [AddEdge(a, b)])
    assert (0, 1) not in affected_edges(after, changed, before)
    assert unaffected_ball_changes(before, after, changed, radius=2) == []
    assert (0, 1) in unaffected_ball_changes(before, after, changed, radius=3)


def test_script_rejects_rounds_below_one():
    with pytest.raises((NetworkError, ValueError)):
        ChangeScript([ChangeEvent(0, AddEdge(0, 1))])
