import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normweaver.automata import ltl_to_dra
from normweaver.crdra import (Crdra, CrdraTransitionSeq, Norm, NormAction, NormError, NormFileError,
                              Transition, build_crdra, discounted_cost, parse_norms, violation_cost)
from normweaver.ltl import parse_ltl

KEEP, SUSP = NormAction.KEEP, NormAction.SUSP


def g_p(weight=1.0):
    return Crdra(ltl_to_dra(parse_ltl("G p")), weight, "N1")


def test_parse_norms_and_comments():
    norms = parse_norms("# header\n1 :: G p\n\n2.5 :: F q  # trailing\n")
    assert [n.name for n in norms] == ["N1", "N2"]
    assert [n.weight for n in norms] == [1.0, 2.5]
    assert norms[1].formula == parse_ltl("F q")


def test_domain_directive_grounds():
    text = "@domain human: h1 h2\n3 :: forall x:human . G (human(x) -> !injured(x))\n"
    (n,) = parse_norms(text)
    assert "human_h2" in str(n.formula)


def test_domain_argument():
    (n,) = parse_norms("1 :: forall x:room . G clean(x)", {"room": ["r1"]})
    assert n.formula == parse_ltl("G clean_r1")


@pytest.mark.parametrize("text,line", [
    ("1 :: G p\nnonsense\n", 2),
    ("abc :: G p\n", 1),
    ("1 :: G p\n0 :: G q\n", 2),
    ("-2 :: G p\n", 1),
    ("1 :: G (p\n", 1),
    ("1 :: forall x:robot . G ok(x)\n", 1),
    ("@domain : a b\n1 :: G p\n", 1),
])
def test_norm_file_errors(text, line):
    with pytest.raises(NormFileError) as e:
        parse_norms(text)
    assert e.value.line == line


def test_empty_norm_file():
    with pytest.raises(NormError):
        parse_norms("# nothing\n")


def test_weight_must_be_positive():
    with pytest.raises(NormError):
        Norm("N", 0.0, parse_ltl("G p"))


def test_susp_keeps_state_and_costs_weight():
    c = g_p(3.0)
    q = c.initial
    assert c.step_valuation(q, set(), SUSP) == q
    assert c.cost(SUSP) == 3.0 and c.cost(KEEP) == 0.0
    assert c.step_valuation(q, set(), KEEP) != q


def test_build_crdra_uses_compiled_automaton():
    n = parse_norms("2 :: G p")[0]
    c = build_crdra(n)
    assert c.weight == 2.0 and c.n_states == 2 and c.name == "N1"


def test_sequence_validation():
    c = g_p()
    q0 = c.initial
    with pytest.raises(NormError):
        CrdraTransitionSeq(c, [Transition(q0, frozenset(), KEEP), Transition(q0, frozenset(), KEEP)])
    with pytest.raises(NormError):
        CrdraTransitionSeq(c, [Transition(1 - q0, frozenset(), KEEP)])


def test_from_letters_closes_cycle():
    c = g_p()
    seq = CrdraTransitionSeq.from_letters(c, [({"p"}, KEEP)], [(set(), SUSP)])
    assert len(seq.cycle) == 1 and seq.is_run() is False
    assert violation_cost(seq, 0.5) == pytest.approx(0.5 / (1 - 0.5))


def test_keep_sequence_is_run():
    seq = CrdraTransitionSeq.from_letters(g_p(), [({"p"}, KEEP)], [({"p"}, KEEP), (set(), KEEP)])
    assert seq.is_run()
    assert violation_cost(seq, 0.9) == 0.0


def test_discounted_cost_examples():
    assert discounted_cost([1, 0, 2], [], 0.5) == pytest.approx(1 + 0.5)
    assert discounted_cost([], [1], 0.9) == pytest.approx(10.0)
    assert discounted_cost([0], [1, 0], 0.5) == pytest.approx(0.5 / (1 - 0.25))
    with pytest.raises(NormError):
        discounted_cost([1], [], 1.0)


@given(st.lists(st.floats(0, 10), max_size=5), st.lists(st.floats(0, 10), min_size=1, max_size=4),
       st.floats(0, 0.95))
@settings(max_examples=300, deadline=None)
def test_closed_form_matches_truncated_sum(pre, cyc, gamma):
    n = 2000
    word = pre + cyc * (n // len(cyc) + 1)
    truncated = sum(gamma ** t * w for t, w in enumerate(word[:n]))
    tail = gamma ** n * 10 / (1 - gamma)
    assert abs(discounted_cost(pre, cyc, gamma) - truncated) <= tail + 1e-9
