"""Round rules written out line by line, independent of :mod:`.protocol`.

This is a second, deliberately naive rendering of the two round protocols:
plain strings for states, explicit note lists, and if/else chains that follow
the rule text one line at a time. It serves as the reference that the
vectorized implementation is compared against exhaustively.
"""

from itertools import chain, combinations

import numpy as np

# -- singing protocol ----------------------------------------------------------


def singing_sings(s, ell):
    if s == "Out":
        return []  # do not sing
    if s == "In":
        return [0]  # sing note 0
    return list(range(1, ell + 1))  # Un: sing notes 1..ell


def singing_listens(s, ell):
    notes = [0]  # listen for note 0
    if s == "Un":
        notes.append(ell)  # Un also listens for note ell
    return notes


def singing_next(s, ell, heard):
    if s == "In":
        if 0 in heard:
            return "Un"
        return "In"
    if s == "Un":
        if 0 in heard:
            return "Out"
        if ell in heard:
            return "Un"
        return "In"
    if 0 in heard:
        return "Out"
    return "Un"


# -- self-jamming singing protocol ----------------------------------------------


def sj_sings(s, ell):
    if s == "Out":
        return []
    if s == "In":
        return [2 * k for k in range(ell)]  # even notes 0, 2, ..., 2*ell-2
    return [2 * k + 1 for k in range(ell)]  # odd notes 1, 3, ..., 2*ell-1


def sj_listens(s, ell):
    if s == "Out":
        return [0]
    if s == "In":
        return [2 * ell]
    return [0, 2 * ell + 1]


def sj_next(s, ell, heard):
    if s == "In":
        if 2 * ell in heard:
            return "Un"
        return "In"
    if s == "Un":
        if 0 in heard:
            return "Out"
        if 2 * ell + 1 in heard:
            return "Un"
        return "In"
    if 0 in heard:
        return "Out"
    return "Un"


RULES = {
    "singing": (singing_sings, singing_listens, singing_next),
    "sj": (sj_sings, sj_listens, sj_next),
}
NAMES = {0: "Out", 1: "In", 2: "Un"}
CODES = {v: k for k, v in NAMES.items()}


def _subsets(notes):
    notes = sorted(set(notes))
    return chain.from_iterable(combinations(notes, k) for k in range(len(notes) + 1))


def compare_transitions(max_ell=8):
    """Compare the library's rules with the listings above, case by case.

    Covers every variant, state, ``ell <= max_ell`` and subset of the listen
    set, through the scalar API (notes sung, listen set, next state) and the
    vectorized one. Returns ``(cases, mismatches)`` with mismatches as
    readable strings.
    """
    from .protocol import listen_set, sing_notes, transition, transition_array

    cases, bad = 0, []
    for variant, (sings, listens, nxt) in RULES.items():
        for code, s in NAMES.items():
            for ell in range(1, max_ell + 1):
                if sorted(sing_notes(code, ell, variant)) != sings(s, ell):
                    bad.append(f"{variant} {s} ell={ell}: sung notes differ")
                if sorted(listen_set(code, ell, variant)) != sorted(set(listens(s, ell))):
                    bad.append(f"{variant} {s} ell={ell}: listen sets differ")
                comp = [x for x in listens(s, ell) if x != 0 or (variant == "sj" and s == "In")]
                for heard in _subsets(listens(s, ell)):
                    cases += 1
                    want = nxt(s, ell, set(heard))
                    got = NAMES[int(transition(code, ell, frozenset(heard), variant))]
                    h0 = np.array([0 in heard and not (variant == "sj" and s == "In")])
                    hc = np.array([any(x in heard for x in comp)])
                    arr = NAMES[int(transition_array(np.array([code]), h0, hc, variant)[0])]
                    if got != want or arr != want:
                        bad.append(f"{variant} {s} ell={ell} heard={list(heard)}: "
                                   f"listing {want}, scalar {got}, vector {arr}")
    return cases, bad


def compare_hearing(max_ell=5, max_neighbours=2):
    """Compare ``heard_flags`` with hearing worked out note by note.

    For each listener (state, ell) and each multiset of up to
    ``max_neighbours`` singing neighbours, the reference takes the union of
    the neighbours' notes, removes the listener's own notes under
    self-jamming hearing, and keeps what lies in the listen set. Every
    variant is paired with both hearing modes. Returns ``(cases, mismatches)``.
    """
    from itertools import combinations_with_replacement, product

    from .protocol import heard_flags

    singers = [(s, ell) for s in ("In", "Un") for ell in range(1, max_ell + 1)]
    cases, bad = 0, []
    for variant, (sings, listens, nxt) in RULES.items():
        for mode in ("plain", "self-jamming"):
            for (code, s), ell in product(NAMES.items(), range(1, max_ell + 1)):
                own = set(sings(s, ell))
                for k in range(max_neighbours + 1):
                    for group in combinations_with_replacement(singers, k):
                        union = set()
                        for ns, nl in group:
                            union |= set(sings(ns, nl))
                        if mode == "self-jamming":
                            union -= own
                        heard = union & set(listens(s, ell))
                        want = nxt(s, ell, heard)
                        max_in = max([nl for ns, nl in group if ns == "In"], default=0)
                        max_un = max([nl for ns, nl in group if ns == "Un"], default=0)
                        h0, hc = heard_flags(np.array([code]), np.array([ell]), np.array([max_in]),
                                             np.array([max_un]), variant, mode)
                        comp_notes = [x for x in listens(s, ell) if x != 0 or (variant == "sj" and s == "In")]
                        want0 = 0 in heard and 0 not in comp_notes
                        wantc = any(x in heard for x in comp_notes)
                        cases += 1
                        if bool(h0[0]) != want0 or bool(hc[0]) != wantc:
                            bad.append(f"{variant}/{mode} {s} ell={ell} neighbours={list(group)}: "
                                       f"flags ({bool(h0[0])}, {bool(hc[0])}), expected ({want0}, {wantc}); "
                                       f"next state {want}")
    return cases, bad
