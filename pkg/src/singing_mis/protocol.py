"""Per-agent logic of the singing and self-jamming singing protocols.

Everything here is pure. Note sets sung by the protocol are arithmetic
progressions, so they are kept as :class:`NoteRange` descriptors and only
materialized when iterated.
"""

from collections.abc import Set
from enum import Enum, IntEnum

import numpy as np


class AgentState(IntEnum):
    OUT = 0
    IN = 1
    UN = 2


OUT, IN, UN = AgentState.OUT, AgentState.IN, AgentState.UN


class ProtocolVariant(str, Enum):
    SINGING = "singing"
    SELF_JAMMING = "sj"


class HearingMode(str, Enum):
    PLAIN = "plain"
    SELF_JAMMING = "self-jamming"


SINGING = ProtocolVariant.SINGING
SELF_JAMMING_SINGING = ProtocolVariant.SELF_JAMMING


class ConfigError(ValueError):
    """Invalid run configuration."""


class ContractViolation(RuntimeError):
    """An engine handed the protocol an input outside its contract."""


def default_hearing(variant):
    variant = ProtocolVariant(variant)
    return HearingMode.PLAIN if variant is SINGING else HearingMode.SELF_JAMMING


def check_pairing(variant, mode, unsafe_pairing=False):
    """Reject cross pairings of variant and hearing mode unless explicitly allowed."""
    variant, mode = ProtocolVariant(variant), HearingMode(mode)
    if mode is not default_hearing(variant) and not unsafe_pairing:
        raise ConfigError(
            f"variant {variant.value!r} under {mode.value!r} hearing is an unsafe pairing; "
            "pass unsafe_pairing=True to run it as a negative control"
        )
    return variant, mode


class NoteRange(Set):
    """The notes ``start, start+step, ...`` strictly below ``stop``."""

    __slots__ = ("_range",)

    def __init__(self, start=0, stop=0, step=1):
        self._range = range(start, stop, step)

    @classmethod
    def _from_iterable(cls, it):
        return frozenset(it)

    def __contains__(self, note):
        return note in self._range

    def __iter__(self):
        return iter(self._range)

    def __len__(self):
        return len(self._range)

    def __hash__(self):
        return self._hash()

    def __repr__(self):
        r = self._range
        if not r:
            return "NoteRange()"
        return f"NoteRange({r.start}..{r[-1]} step {r.step})"


EMPTY = NoteRange()


def sample_ell(rng, p=0.5):
    """Flip until the first 0 and return the number of flips.

    ``rng`` is anything with a ``flip(p)`` method returning 0 or 1 (for
    example :class:`singing_mis._rng.FlipStream`), or a
    :class:`numpy.random.Generator`.
    """
    if not 0.0 < p < 1.0:
        raise ConfigError(f"flip probability must lie in (0, 1), got {p!r}")
    if isinstance(rng, np.random.Generator):
        flip = lambda: int(rng.random() < p)  # noqa: E731
    else:
        flip = lambda: rng.flip(p)  # noqa: E731
    ell = 1
    while flip():
        ell += 1
    return ell


def sing_notes(state, ell, variant):
    state, variant = AgentState(state), ProtocolVariant(variant)
    if state is OUT:
        return EMPTY
    if variant is SINGING:
        return NoteRange(0, 1) if state is IN else NoteRange(1, ell + 1)
    if state is IN:
        return NoteRange(0, 2 * ell - 1, 2)
    return NoteRange(1, 2 * ell, 2)


def listen_set(state, ell, variant):
    state, variant = AgentState(state), ProtocolVariant(variant)
    if variant is SINGING:
        return frozenset({0, ell}) if state is UN else frozenset({0})
    if state is IN:
        return frozenset({2 * ell})
    if state is UN:
        return frozenset({0, 2 * ell + 1})
    return frozenset({0})


def competition_note(state, ell, variant):
    """The non-zero note an agent listens for, or None."""
    state, variant = AgentState(state), ProtocolVariant(variant)
    if variant is SINGING:
        return ell if state is UN else None
    if state is IN:
        return 2 * ell
    if state is UN:
        return 2 * ell + 1
    return None


def resolve_heard(own, neighbor_union, mode):
    """Notes an agent actually hears given what it and its neighbors sing."""
    if HearingMode(mode) is HearingMode.PLAIN:
        return frozenset(neighbor_union)
    return frozenset(n for n in neighbor_union if n not in own)


def transition(state, ell, heard, variant):
    """End-of-round state update."""
    state, variant = AgentState(state), ProtocolVariant(variant)
    listening = listen_set(state, ell, variant)
    stray = set(heard) - listening
    if stray:
        raise ContractViolation(
            f"{state.name} agent with ell={ell} cannot hear {sorted(stray)}; listens for {sorted(listening)}"
        )
    if variant is SINGING:
        if state is IN:
            return UN if 0 in heard else IN
        if state is UN:
            if 0 in heard:
                return OUT
            return UN if ell in heard else IN
        return OUT if 0 in heard else UN
    if state is IN:
        return UN if 2 * ell in heard else IN
    if state is UN:
        if 0 in heard:
            return OUT
        return UN if 2 * ell + 1 in heard else IN
    return OUT if 0 in heard else UN


# --- vectorized forms used by the engines ---------------------------------
#
# A collection of singers is summarized by three numbers: whether any of them
# is In, the largest ell among In singers and the largest ell among Un
# singers (0 when absent). Every protocol note set is a prefix of the odd or
# even notes (or of 1..ell), so these determine membership of any note in the
# union exactly.


def _in_union(note, variant, max_in, max_un):
    note = np.asarray(note)
    if variant is SINGING:
        return np.where(note == 0, max_in > 0, max_un >= note)
    return np.where(note % 2 == 0, max_in > note // 2, max_un > note // 2)


def heard_flags(state, ell, max_in, max_un, variant, mode):
    """Return ``(heard_zero, heard_competition)`` boolean arrays.

    Both flags are already restricted to the agent's listen set and resolved
    against its own singing under self-jamming hearing.
    """
    variant, mode = ProtocolVariant(variant), HearingMode(mode)
    state = np.asarray(state)
    ell = np.asarray(ell)
    own_in = np.where(state == IN, ell, 0)
    own_un = np.where(state == UN, ell, 0)

    listens_zero = (state != IN) | (variant is SINGING)
    heard_zero = listens_zero & _in_union(0, variant, max_in, max_un)

    if variant is SINGING:
        comp = ell
        listens_comp = state == UN
    else:
        comp = np.where(state == IN, 2 * ell, 2 * ell + 1)
        listens_comp = state != OUT
    heard_comp = listens_comp & _in_union(comp, variant, max_in, max_un)

    if mode is HearingMode.SELF_JAMMING:
        heard_zero &= ~_in_union(0, variant, own_in, own_un)
        heard_comp &= ~_in_union(comp, variant, own_in, own_un)
    return heard_zero, heard_comp


def transition_array(state, heard_zero, heard_comp, variant):
    variant = ProtocolVariant(variant)
    state = np.asarray(state)
    nxt = np.empty_like(state)
    is_in, is_un, is_out = state == IN, state == UN, state == OUT
    if variant is SINGING:
        nxt[is_in] = np.where(heard_zero[is_in], UN, IN)
    else:
        nxt[is_in] = np.where(heard_comp[is_in], UN, IN)
    nxt[is_un] = np.where(heard_zero[is_un], OUT, np.where(heard_comp[is_un], UN, IN))
    nxt[is_out] = np.where(heard_zero[is_out], OUT, UN)
    return nxt
