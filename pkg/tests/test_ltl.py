import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from normweaver.ltl import (FALSE, TRUE, And, Atom, AtomTable, Finally, Globally, GroundingError,
                            Implies, Lasso, LassoBatch, LtlSyntaxError, Next, Not, Or,
                            UnknownCharacterError, UnsupportedNegation, Until, all_lassos,
                            evaluate_on_lasso, ground, is_nnf, parse_ltl, parse_quantified, to_nnf)

p, q = Atom("p"), Atom("q")


def formulas(atoms=("p", "q"), depth=3):
    leaves = st.sampled_from([Atom(a) for a in atoms] + [TRUE, FALSE])

    def extend(children):
        return st.one_of(
            st.builds(Not, children), st.builds(Next, children), st.builds(Finally, children),
            st.builds(Globally, children), st.builds(And, children, children),
            st.builds(Or, children, children), st.builds(Implies, children, children),
            st.builds(Until, children, children))

    return st.recursive(leaves, extend, max_leaves=2 ** depth)


letters = st.frozensets(st.sampled_from(["p", "q"]))
lassos = st.builds(Lasso, st.lists(letters, max_size=3).map(tuple),
                   st.lists(letters, min_size=1, max_size=3).map(tuple))


class TestParse:
    def test_globally(self):
        assert parse_ltl("G roomsClean") == Globally(Atom("roomsClean"))

    def test_until(self):
        assert parse_ltl("p U q") == Until(p, q)

    def test_norm_shape(self):
        f = parse_ltl("G (a -> (!t U !s))")
        assert f == Globally(Implies(Atom("a"), Until(Not(Atom("t")), Not(Atom("s")))))

    def test_precedence(self):
        assert parse_ltl("p & q | p") == Or(And(p, q), p)
        assert parse_ltl("p -> q -> p") == Implies(p, Implies(q, p))
        assert parse_ltl("!p U q") == Until(Not(p), q)

    def test_constants(self):
        assert parse_ltl("true U false") == Until(TRUE, FALSE)

    def test_unknown_character(self):
        with pytest.raises(UnknownCharacterError) as e:
            parse_ltl("p $ q")
        assert e.value.position == 2

    def test_truncated(self):
        with pytest.raises(LtlSyntaxError):
            parse_ltl("p U")

    def test_unbalanced(self):
        with pytest.raises(LtlSyntaxError):
            parse_ltl("(p & q")

    def test_atom_table_interning(self):
        table = AtomTable()
        parse_ltl("p U q", table)
        parse_ltl("G q", table)
        assert table.index("p") == 0 and table.index("q") == 1

    @given(formulas())
    @settings(max_examples=200, deadline=None)
    def test_print_parse_round_trip(self, f):
        assert parse_ltl(str(f)) == f


class TestGround:
    def test_single_entity(self):
        qf = parse_quantified("forall x:human . G (human(x) -> !injured(x))")
        assert ground(qf, {"human": ["h1"]}) == parse_ltl("G (human_h1 -> !injured_h1)")

    def test_two_entities(self):
        qf = parse_quantified("forall x:human . G (human(x) -> !injured(x))")
        g = ground(qf, {"human": ["h1", "h2"]})
        assert g == And(parse_ltl("G (human_h1 -> !injured_h1)"), parse_ltl("G (human_h2 -> !injured_h2)"))

    def test_constant_argument(self):
        qf = parse_quantified("forall h:human . G (human(h) -> (!talk(r) U !talking(h)))")
        assert ground(qf, {"human": ["h1"]}) == parse_ltl("G (human_h1 -> (!talk_r U !talking_h1))")

    def test_unknown_sort(self):
        with pytest.raises(GroundingError):
            ground(parse_quantified("forall x:robot . G ok(x)"), {"human": ["h1"]})

    def test_empty_domain(self):
        with pytest.raises(GroundingError):
            ground(parse_quantified("forall x:human . G ok(x)"), {"human": []})


class TestNnf:
    def test_duality(self):
        assert to_nnf(parse_ltl("!G p")) == Finally(Not(p))

    def test_double_negation(self):
        assert to_nnf(parse_ltl("!!p")) == p

    def test_negated_until_needs_release(self):
        with pytest.raises(UnsupportedNegation):
            to_nnf(parse_ltl("!(p U q)"), expand_release=False)

    @given(formulas(), lassos)
    @settings(max_examples=300, deadline=None)
    def test_equivalent_and_normal(self, f, w):
        g = to_nnf(f)
        assert is_nnf(g)
        assert evaluate_on_lasso(g, w) == evaluate_on_lasso(f, w)


class TestLasso:
    def test_globally_holds(self):
        assert evaluate_on_lasso(parse_ltl("G p"), Lasso((), ({"p"},)))

    def test_globally_fails_on_cycle(self):
        assert not evaluate_on_lasso(parse_ltl("G p"), Lasso(({"p"},), (set(),)))

    def test_until_hand_unrolled(self):
        assert evaluate_on_lasso(parse_ltl("p U q"), Lasso(({"p"}, {"p"}), ({"q"},)))

    def test_until_never_released(self):
        assert not evaluate_on_lasso(parse_ltl("p U q"), Lasso((), ({"p"},)))

    def test_next_reads_cycle(self):
        assert evaluate_on_lasso(parse_ltl("X X q"), Lasso(({"p"},), ({"p"}, {"q"})))

    def test_empty_cycle_rejected(self):
        with pytest.raises(ValueError):
            Lasso(({"p"},), ())

    def test_count(self):
        assert len(all_lassos(("p",), 2, 2)) == (1 + 2 + 4) * (2 + 4)

    @given(formulas(), st.lists(lassos, min_size=1, max_size=8))
    @settings(max_examples=150, deadline=None)
    def test_batch_matches_scalar(self, f, ws):
        got = LassoBatch(ws, ("p", "q")).evaluate(f)
        assert list(got) == [evaluate_on_lasso(f, w) for w in ws]

    @given(formulas(), lassos)
    @settings(max_examples=200, deadline=None)
    def test_rotation_invariance(self, f, w):
        # unrolling the cycle once more describes the same word
        longer = Lasso(w.prefix + w.cycle, w.cycle)
        assert evaluate_on_lasso(f, longer) == evaluate_on_lasso(f, w)
