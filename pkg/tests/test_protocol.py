import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from singing_mis import _rng
from singing_mis.protocol import (
    IN,
    OUT,
    UN,
    ConfigError,
    ContractViolation,
    HearingMode,
    check_pairing,
    heard_flags,
    listen_set,
    resolve_heard,
    sample_ell,
    sing_notes,
    transition,
)


class Flips:
    """Replays a fixed flip sequence and counts consumption."""

    def __init__(self, seq):
        self.seq = list(seq)
        self.used = 0

    def flip(self, p):
        v = self.seq[self.used]
        self.used += 1
        return v


@pytest.mark.parametrize("seq, ell", [([0], 1), ([1, 1, 1, 1, 0], 5)])
def test_sample_ell_counts_flips(seq, ell):
    rng = Flips(seq + [1, 1])
    assert sample_ell(rng) == ell
    assert rng.used == ell


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5])
def test_sample_ell_rejects_bad_p(p):
    with pytest.raises(ConfigError):
        sample_ell(np.random.default_rng(0), p)


def test_geometric_law_chi_square():
    ell = _rng.geometric(1, np.arange(1_000_000), 0, 0.5)
    counts = np.bincount(ell, minlength=12)[1:12]
    expected = 1_000_000 * 0.5 ** np.arange(1, 12)
    chi2 = float(((counts - expected) ** 2 / expected).sum())
    assert chi2 < 35  # 11 cells; far beyond the 99.9% quantile (~31.3) only on a broken sampler
    assert abs(ell.mean() - 2.0) < 0.01


def test_geometric_tail():
    ell = _rng.geometric(2, np.arange(200_000), 0, 0.5)
    for c in range(1, 8):
        assert (ell > c).mean() <= 2.0 ** -c * 1.05 + 0.002


def test_flip_stream_matches_vectorized():
    stream = _rng.FlipStream(9, agent=4, index=3)
    assert sample_ell(stream) == _rng.geometric(9, np.array([4]), np.array([3]), 0.5)[0]


@pytest.mark.parametrize("state, ell, variant, notes", [
    (UN, 3, "singing", {1, 2, 3}),
    (OUT, 7, "sj", set()),
    (IN, 3, "sj", {0, 2, 4}),
    (IN, 5, "singing", {0}),
    (UN, 2, "sj", {1, 3}),
])
def test_sing_notes(state, ell, variant, notes):
    assert set(sing_notes(state, ell, variant)) == notes


@pytest.mark.parametrize("state, ell, variant, notes", [
    (UN, 4, "singing", {0, 4}),
    (IN, 3, "sj", {6}),
    (OUT, 9, "singing", {0}),
    (UN, 2, "sj", {0, 5}),
])
def test_listen_set(state, ell, variant, notes):
    assert set(listen_set(state, ell, variant)) == notes


@pytest.mark.parametrize("state, ell, heard, variant, nxt", [
    (UN, 2, {0}, "singing", OUT),
    (UN, 2, set(), "singing", IN),
    (IN, 3, {0}, "singing", UN),
    (IN, 3, {6}, "sj", UN),
    (UN, 2, {2}, "singing", UN),
    (OUT, 1, set(), "sj", UN),
])
def test_transition_examples(state, ell, heard, variant, nxt):
    assert transition(state, ell, frozenset(heard), variant) == nxt


def test_transition_rejects_unlistened_note():
    with pytest.raises(ContractViolation):
        transition(UN, 2, frozenset({3}), "singing")


@pytest.mark.parametrize("own, union, mode, heard", [
    ({1, 2, 3}, {1, 2, 3, 4}, "self-jamming", {4}),
    ({1}, {0, 1}, "plain", {0, 1}),
    ({0, 2}, {0, 2}, "self-jamming", set()),
])
def test_resolve_heard(own, union, mode, heard):
    assert resolve_heard(own, union, mode) == frozenset(heard)


def test_sj_parity_separation():
    for state in (OUT, IN, UN):
        for ell in range(1, 65):
            assert not set(listen_set(state, ell, "sj")) & set(sing_notes(state, ell, "sj"))


def _hears_comp(variant, state, ell, other_state, other_ell, mode):
    max_in = np.array([other_ell if other_state == IN else 0])
    max_un = np.array([other_ell if other_state == UN else 0])
    return bool(heard_flags(np.array([state]), np.array([ell]), max_in, max_un, variant, mode)[1][0])


def test_domination_semantics():
    for a in range(1, 65):
        for b in range(1, 65):
            assert _hears_comp("singing", UN, a, UN, b, "plain") == (b >= a)
            assert _hears_comp("sj", UN, a, UN, b, "self-jamming") == (b > a)
            assert _hears_comp("sj", IN, a, IN, b, "self-jamming") == (b > a)


@given(st.sampled_from(["singing", "sj"]), st.integers(0, 2), st.integers(1, 40), st.integers(0, 40),
       st.integers(0, 40), st.sampled_from(["plain", "self-jamming"]))
def test_heard_flags_match_note_sets(variant, state, ell, max_in, max_un, mode):
    union = set()
    if max_in:
        union |= set(sing_notes(IN, max_in, variant))
    if max_un:
        union |= set(sing_notes(UN, max_un, variant))
    heard = resolve_heard(sing_notes(state, ell, variant), union, mode) & listen_set(state, ell, variant)
    h0, hc = heard_flags(np.array([state]), np.array([ell]), np.array([max_in]), np.array([max_un]), variant, mode)
    want = transition(state, ell, heard, variant)
    from singing_mis.protocol import transition_array

    assert transition_array(np.array([state]), h0, hc, variant)[0] == want


def test_cross_pairing_needs_flag():
    with pytest.raises(ConfigError):
        check_pairing("singing", HearingMode.SELF_JAMMING)
    assert check_pairing("singing", HearingMode.SELF_JAMMING, unsafe_pairing=True)
