"""Reading and writing deterministic Rabin automata in the HOA v1 format.

Only the deterministic, state-based Rabin subset with explicit edge labels
is handled.  Rabin pair ``i`` is written as ``Fin(2i) & Inf(2i+1)``.
"""
from __future__ import annotations

import re

from .automata import Dra


class HoaError(ValueError):
    pass


class HoaParseError(HoaError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonDeterministic(HoaError):
    pass


class UnsupportedAcceptance(HoaError):
    pass


def _quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def _minterm(bits: int, k: int) -> str:
    if k == 0:
        return "t"
    return "&".join(str(i) if bits >> i & 1 else f"!{i}" for i in range(k))


def export_hoa(d: Dra, name: str | None = None) -> str:
    k = len(d.atoms)
    lines = ["HOA: v1"]
    if name:
        lines.append(f"name: {_quote(name)}")
    lines.append(f"States: {d.n_states}")
    lines.append(f"Start: {d.initial}")
    lines.append(f"AP: {k}" + "".join(" " + _quote(a) for a in d.atoms))
    m = len(d.pairs)
    lines.append(f"acc-name: Rabin {m}")
    cond = " | ".join(f"(Fin({2 * i})&Inf({2 * i + 1}))" for i in range(m))
    lines.append(f"Acceptance: {2 * m} {cond}")
    lines.append("properties: trans-labels explicit-labels state-acc deterministic complete")
    lines.append("--BODY--")
    for q in range(d.n_states):
        marks = []
        for i, (fin, inf) in enumerate(d.pairs):
            if q in fin:
                marks.append(2 * i)
            if q in inf:
                marks.append(2 * i + 1)
        acc = " {" + " ".join(map(str, marks)) + "}" if marks else ""
        lines.append(f"State: {q} {_quote(d.names[q])}{acc}")
        by_target: dict[int, list[int]] = {}
        for bits in range(d.n_letters):
            by_target.setdefault(d.step(q, bits), []).append(bits)
        for target in sorted(by_target):
            letters = by_target[target]
            if len(letters) == d.n_letters:
                label = "t"
            else:
                label = " | ".join(f"({_minterm(b, k)})" if k > 1 else _minterm(b, k) for b in letters)
            lines.append(f"[{label}] {target}")
    lines.append("--END--")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Import

_LABEL_TOKEN = re.compile(r"\s*(\d+|t|f|!|&|\||\(|\))")


def _label_fn(text: str, n_ap: int, line: int):
    tokens = []
    pos = 0
    text = text.strip()
    while pos < len(text):
        m = _LABEL_TOKEN.match(text, pos)
        if not m:
            raise HoaParseError(f"bad label {text!r}", line)
        tokens.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    i = 0

    def peek():
        return tokens[i] if i < len(tokens) else None

    def take():
        nonlocal i
        tok = peek()
        if tok is None:
            raise HoaParseError(f"truncated label {text!r}", line)
        i += 1
        return tok

    def disj():
        parts = [conj()]
        while peek() == "|":
            take()
            parts.append(conj())
        return lambda b: any(p(b) for p in parts)

    def conj():
        parts = [atom()]
        while peek() == "&":
            take()
            parts.append(atom())
        return lambda b: all(p(b) for p in parts)

    def atom():
        tok = take()
        if tok == "!":
            inner = atom()
            return lambda b: not inner(b)
        if tok == "(":
            inner = disj()
            if take() != ")":
                raise HoaParseError(f"unbalanced label {text!r}", line)
            return inner
        if tok == "t":
            return lambda b: True
        if tok == "f":
            return lambda b: False
        if tok.isdigit():
            idx = int(tok)
            if idx >= n_ap:
                raise HoaParseError(f"AP index {idx} out of range", line)
            return lambda b: bool(b >> idx & 1)
        raise HoaParseError(f"unexpected {tok!r} in label", line)

    fn = disj()
    if i != len(tokens):
        raise HoaParseError(f"trailing tokens in label {text!r}", line)
    return fn


_PAIR_RE = re.compile(r"^\(?\s*(?:Fin\((\d+)\)\s*&\s*Inf\((\d+)\)|Inf\((\d+)\)\s*&\s*Fin\((\d+)\)|Inf\((\d+)\)|Fin\((\d+)\))\s*\)?$")


def _parse_acceptance(text: str, line: int):
    m = re.match(r"\s*(\d+)\s+(.*)$", text)
    if not m:
        raise HoaParseError("malformed Acceptance header", line)
    n_sets = int(m.group(1))
    cond = m.group(2).strip()
    if cond in ("t", "f"):
        raise UnsupportedAcceptance(f"trivial acceptance {cond!r}")
    pairs = []
    for disjunct in _split_top(cond, "|"):
        pm = _PAIR_RE.match(disjunct.strip())
        if not pm:
            raise UnsupportedAcceptance(f"not a Rabin condition: {cond}")
        g = pm.groups()
        if g[0] is not None:
            fin, inf = int(g[0]), int(g[1])
        elif g[2] is not None:
            fin, inf = int(g[3]), int(g[2])
        elif g[4] is not None:
            fin, inf = None, int(g[4])
        else:
            fin, inf = int(g[5]), None
        for s in (fin, inf):
            if s is not None and s >= n_sets:
                raise HoaParseError(f"acceptance set {s} out of range", line)
        pairs.append((fin, inf))
    return pairs


def _split_top(text: str, sep: str) -> list[str]:
    depth = 0
    out, cur = [], []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
        if ch == sep and depth == 0:
            out.append("".join(cur))
            cur = []
        else:
            cur.append(ch)
    out.append("".join(cur))
    return out


_STATE_RE = re.compile(r'^State:\s*(\d+)\s*(?:"((?:[^"\\]|\\.)*)")?\s*(?:\{([\d\s]*)\})?\s*$')
_EDGE_RE = re.compile(r"^\[(.*)\]\s*(\d+)\s*(\{[\d\s]*\})?\s*$")


def import_hoa(text: str) -> Dra:
    """Parse a deterministic Rabin automaton; the result is completed."""
    lines = text.splitlines()
    header: dict[str, str] = {}
    n_states = None
    start: list[int] = []
    aps: list[str] = []
    pairs_decl = None
    body_at = None
    for no, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if line == "--BODY--":
            body_at = no
            break
        key, sep, value = line.partition(":")
        if not sep:
            raise HoaParseError(f"expected header item, found {line!r}", no)
        key, value = key.strip(), value.strip()
        if not header and key != "HOA":
            raise HoaParseError("document must start with 'HOA:'", no)
        header[key] = value
        if key in ("States", "Start") and not value.replace("&", " ").replace(" ", "").isdigit():
            raise HoaParseError(f"{key} expects a state number", no)
        if key == "HOA" and value != "v1":
            raise HoaParseError(f"unsupported version {value!r}", no)
        elif key == "States":
            n_states = int(value)
        elif key == "Start":
            if "&" in value:
                raise NonDeterministic("conjunctive initial states")
            start.append(int(value))
        elif key == "AP":
            parts = re.findall(r'"((?:[^"\\]|\\.)*)"', value)
            head = value.split()[0] if value.split() else ""
            if not head.isdigit():
                raise HoaParseError("AP expects a count", no)
            count = int(head)
            if count != len(parts):
                raise HoaParseError("AP count does not match names", no)
            aps = [p.replace('\\"', '"') for p in parts]
        elif key == "acc-name":
            kind = value.split()[0]
            if kind not in ("Rabin", "Buchi"):
                raise UnsupportedAcceptance(f"acceptance {value!r}")
        elif key == "Acceptance":
            pairs_decl = _parse_acceptance(value, no)
        elif key == "Alias":
            raise HoaParseError("aliases are not supported", no)
    if body_at is None:
        raise HoaParseError("missing --BODY--", len(lines))
    if pairs_decl is None:
        raise HoaParseError("missing Acceptance header", body_at)
    if len(start) != 1:
        raise NonDeterministic(f"expected exactly one initial state, found {len(start)}")
    k = len(aps)
    delta: dict[int, dict[int, int]] = {}
    marks: dict[int, set[int]] = {}
    names: dict[int, str] = {}
    current = None
    ended = False
    for no in range(body_at + 1, len(lines) + 1):
        line = lines[no - 1].strip()
        if not line:
            continue
        if line == "--END--":
            ended = True
            break
        if line.startswith("State:"):
            m = _STATE_RE.match(line)
            if not m:
                raise HoaParseError(f"bad state line {line!r}", no)
            current = int(m.group(1))
            if current in delta:
                raise HoaParseError(f"state {current} declared twice", no)
            delta[current] = {}
            names[current] = m.group(2) or str(current)
            marks[current] = {int(x) for x in (m.group(3) or "").split()}
            continue
        if current is None:
            raise HoaParseError("edge before any State:", no)
        m = _EDGE_RE.match(line)
        if not m:
            if not line.startswith("["):
                raise HoaParseError("implicit labels are not supported", no)
            raise HoaParseError(f"bad edge line {line!r}", no)
        if m.group(3):
            raise UnsupportedAcceptance("transition-based acceptance marks")
        label = _label_fn(m.group(1), k, no)
        target = int(m.group(2))
        row = delta[current]
        for bits in range(1 << k):
            if label(bits):
                if bits in row and row[bits] != target:
                    raise NonDeterministic(f"state {current} has two successors on letter {bits}")
                if bits in row:
                    raise NonDeterministic(f"state {current} has a duplicate edge on letter {bits}")
                row[bits] = target
    if not ended:
        raise HoaParseError("missing --END--", len(lines))
    if n_states is None:
        n_states = max(list(delta) + [start[0]]) + 1
    for q in delta:
        if q >= n_states:
            raise HoaParseError(f"state {q} exceeds States: {n_states}", body_at)
    pairs = []
    for fin_set, inf_set in pairs_decl:
        fin = {q for q, ms in marks.items() if fin_set is not None and fin_set in ms}
        if inf_set is None:
            inf = set(range(n_states))
        else:
            inf = {q for q, ms in marks.items() if inf_set in ms}
        pairs.append((frozenset(fin), frozenset(inf)))
    table = [dict(delta.get(q, {})) for q in range(n_states)]
    default: list[int | None] = [None] * n_states
    return Dra(tuple(aps), n_states, start[0], table, default, pairs,
               [names.get(q, str(q)) for q in range(n_states)])


def isomorphic(a: Dra, b: Dra) -> bool:
    """Structural isomorphism of the reachable parts (state renaming only)."""
    if a.atoms != b.atoms or len(a.pairs) != len(b.pairs):
        return False
    mapping = {a.initial: b.initial}
    stack = [a.initial]
    while stack:
        q = stack.pop()
        for bits in range(a.n_letters):
            s, t = a.step(q, bits), b.step(mapping[q], bits)
            if s in mapping:
                if mapping[s] != t:
                    return False
            else:
                if t in mapping.values():
                    return False
                mapping[s] = t
                stack.append(s)
    for (fa, ia), (fb, ib) in zip(a.pairs, b.pairs):
        for q, r in mapping.items():
            if (q in fa) != (r in fb) or (q in ia) != (r in ib):
                return False
    return True


__all__ = ["export_hoa", "import_hoa", "isomorphic", "HoaError", "HoaParseError",
           "NonDeterministic", "UnsupportedAcceptance"]
