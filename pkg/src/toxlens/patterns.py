"""Structural pattern language and subgraph matching.

The pattern syntax is a small SMARTS-like subset: element primitives
(uppercase aliphatic, lowercase aromatic), ``[#n]`` atomic numbers,
attached-hydrogen counts (``[OH]``, ``[CH2]``), ring membership (``[R]``,
``[R0]``), total connection counts (``[CX4]``), formal charges, the four
bond symbols plus the ``~`` wildcard, branches, and ring closures.
Anything outside the subset is rejected with an error naming the
primitive; nothing is silently ignored.

Bonds written without a symbol constrain to aromatic when both atom
primitives are aromatic and to single otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .chem import BOND_ORDERS, MolecularGraph, ParseError, VALENCES

__all__ = ["Pattern", "PatternNode", "parse_pattern", "match_pattern",
           "pattern_from_graph"]

_ATOMIC_NUMBERS = {
    5: "B", 6: "C", 7: "N", 8: "O", 9: "F", 15: "P", 16: "S",
    17: "Cl", 35: "Br", 53: "I",
}
_AROMATIC_LOWER = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_BOND_CONSTRAINTS = {"-": "single", "=": "double", "#": "triple",
                     ":": "aromatic", "~": "any"}
_TWO_LETTER = ("Cl", "Br")


@dataclass(frozen=True)
class PatternNode:
    """Constraints one pattern position places on a molecule atom.

    ``aromatic=None`` accepts either aromaticity (the ``[#n]`` form);
    ``h_count``, ``ring``, ``connections`` and ``charge`` are optional
    constraints, ``None`` meaning unconstrained.
    """

    element: str
    aromatic: bool | None = False
    h_count: int | None = None
    ring: bool | None = None
    connections: int | None = None
    charge: int | None = None

    def matches(self, g: MolecularGraph, idx: int) -> bool:
        atom = g.atoms[idx]
        if atom.element != self.element:
            return False
        if self.aromatic is not None and atom.aromatic != self.aromatic:
            return False
        if self.h_count is not None and atom.implicit_h != self.h_count:
            return False
        if self.ring is not None and atom.ring_member != self.ring:
            return False
        if self.connections is not None and \
                g.degree(idx) + atom.implicit_h != self.connections:
            return False
        if self.charge is not None and atom.formal_charge != self.charge:
            return False
        return True


@dataclass(frozen=True)
class Pattern:
    """Connected constraint graph over pattern nodes."""

    nodes: tuple[PatternNode, ...]
    edges: tuple[tuple[int, int, str], ...]  # order constraint or "any"
    source: str = ""
    adjacency: tuple = field(default=(), compare=False)

    def __post_init__(self):
        n = len(self.nodes)
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for eidx, (a, b, order) in enumerate(self.edges):
            if not (0 <= a < n and 0 <= b < n) or a == b:
                raise ValueError(f"bad pattern edge ({a}, {b})")
            if order not in BOND_ORDERS and order != "any":
                raise ValueError(f"bad bond constraint {order!r}")
            adj[a].append((b, eidx))
            adj[b].append((a, eidx))
        object.__setattr__(self, "adjacency", tuple(tuple(x) for x in adj))
        if n > 0 and not self._connected():
            raise ValueError("pattern graph must be connected")

    def _connected(self) -> bool:
        seen = {0}
        stack = [0]
        while stack:
            node = stack.pop()
            for nbr, _ in self.adjacency[node]:
                if nbr not in seen:
                    seen.add(nbr)
                    stack.append(nbr)
        return len(seen) == len(self.nodes)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)


def _edge_matches(constraint: str, order: str) -> bool:
    return constraint == "any" or constraint == order


# unsupported SMARTS constructs we want to name explicitly in errors
_REJECTED = {
    "*": "wildcard atom '*'",
    "!": "negation '!'",
    ",": "disjunction ','",
    ";": "conjunction ';'",
    "&": "conjunction '&'",
    "@": "'@'",
    "/": "'/'",
    "\\": "'\\'",
    "$": "recursive pattern '$'",
    ".": "disconnection '.'",
    "D": "degree primitive 'D'",
    "v": "valence primitive 'v'",
    "x": "ring-connectivity primitive 'x'",
    "r": "ring-size primitive 'r'",
    "a": "generic-aromatic primitive 'a'",
    "A": "generic-aliphatic primitive 'A'",
}


def _parse_pattern_bracket(text: str, start: int):
    i = start + 1
    n = len(text)
    element = None
    aromatic: bool | None = False
    h_count = None
    ring = None
    connections = None
    charge = None

    if i < n and text[i].isdigit():
        raise ParseError("unsupported primitive: isotope digits", i)
    if i < n and text[i] in _REJECTED:
        raise ParseError(f"unsupported primitive {_REJECTED[text[i]]}", i)
    if i < n and text[i] == "#":
        i += 1
        digits = ""
        while i < n and text[i].isdigit():
            digits += text[i]
            i += 1
        if not digits or int(digits) not in _ATOMIC_NUMBERS:
            raise ParseError(f"unknown atomic number '#{digits}'", start + 1)
        element = _ATOMIC_NUMBERS[int(digits)]
        aromatic = None
    else:
        for two in _TWO_LETTER:
            if text.startswith(two, i):
                element, i = two, i + 2
                break
        else:
            if i < n and text[i] in _AROMATIC_LOWER:
                element, aromatic, i = _AROMATIC_LOWER[text[i]], True, i + 1
            elif i < n and text[i].isupper():
                # Single uppercase element; H alone is not an atom here.
                ch = text[i]
                if ch == "H":
                    raise ParseError(
                        "unsupported primitive: bare 'H' atom in bracket", i)
                if ch in ("R", "X"):
                    raise ParseError("bracket pattern must start with an "
                                     "element or '#n'", i)
                if ch not in VALENCES:
                    raise ParseError(f"unknown element '{ch}'", i)
                element, i = ch, i + 1
    if element is None:
        raise ParseError("expected element in bracket pattern", i)

    while i < n and text[i] != "]":
        ch = text[i]
        if ch == "H":
            i += 1
            digits = ""
            while i < n and text[i].isdigit():
                digits += text[i]
                i += 1
            h_count = int(digits) if digits else 1
        elif ch == "R":
            i += 1
            if i < n and text[i] == "0":
                ring = False
                i += 1
            else:
                ring = True
        elif ch == "X":
            i += 1
            digits = ""
            while i < n and text[i].isdigit():
                digits += text[i]
                i += 1
            if not digits:
                raise ParseError("'X' requires a connection count", i)
            connections = int(digits)
        elif ch in "+-":
            sign = 1 if ch == "+" else -1
            i += 1
            if i < n and text[i] == ch:
                count = 1
                while i < n and text[i] == ch:
                    count += 1
                    i += 1
                charge = sign * count
            else:
                digits = ""
                while i < n and text[i].isdigit():
                    digits += text[i]
                    i += 1
                charge = sign * (int(digits) if digits else 1)
        elif ch in _REJECTED:
            raise ParseError(f"unsupported primitive {_REJECTED[ch]}", i)
        else:
            raise ParseError(f"unsupported primitive '{ch}'", i)
    if i >= n:
        raise ParseError("unterminated bracket pattern", start)
    node = PatternNode(element=element, aromatic=aromatic, h_count=h_count,
                       ring=ring, connections=connections, charge=charge)
    return node, i + 1


def parse_pattern(text: str) -> Pattern:
    """Parse the supported pattern subset into a :class:`Pattern`.

    Raises:
        ParseError: Syntax errors with offsets; unsupported SMARTS
            primitives are named in the message.
    """
    if not text:
        raise ParseError("empty pattern", 0)

    nodes: list[PatternNode] = []
    edges: list[tuple[int, int, str]] = []
    prev: int | None = None
    branch_stack: list[tuple[int | None, int]] = []
    pending: str | None = None
    open_rings: dict[int, tuple[int, str | None, int]] = {}

    def add_node(node: PatternNode):
        nonlocal prev, pending
        idx = len(nodes)
        nodes.append(node)
        if prev is not None:
            constraint = pending
            if constraint is None:
                constraint = "aromatic" if (
                    nodes[prev].aromatic is True and node.aromatic is True
                ) else "single"
            edges.append((prev, idx, constraint))
        pending = None
        prev = idx

    def close_ring(number: int, offset: int):
        nonlocal pending
        if prev is None:
            raise ParseError("ring closure before any atom", offset)
        if number in open_rings:
            other, sym_open, _ = open_rings.pop(number)
            sym = pending if pending is not None else sym_open
            if pending is not None and sym_open is not None \
                    and pending != sym_open:
                raise ParseError(
                    f"conflicting bond symbols on ring closure {number}", offset)
            pending = None
            if sym is None:
                sym = "aromatic" if (nodes[other].aromatic is True and
                                     nodes[prev].aromatic is True) else "single"
            edges.append((other, prev, sym))
        else:
            sym = pending
            pending = None
            open_rings[number] = (prev, sym, offset)

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == "(":
            if prev is None:
                raise ParseError("branch with no preceding atom", i)
            branch_stack.append((prev, i))
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise ParseError("unbalanced parenthesis", i)
            prev = branch_stack.pop()[0]
            i += 1
            continue
        if ch in _BOND_CONSTRAINTS:
            pending = _BOND_CONSTRAINTS[ch]
            i += 1
            continue
        if ch.isdigit():
            close_ring(int(ch), i)
            i += 1
            continue
        if ch == "%":
            if i + 2 >= n or not (text[i + 1].isdigit() and text[i + 2].isdigit()):
                raise ParseError("'%' ring closure needs two digits", i)
            close_ring(int(text[i + 1:i + 3]), i)
            i += 3
            continue
        if ch == "[":
            node, i = _parse_pattern_bracket(text, i)
            add_node(node)
            continue
        matched = False
        for two in _TWO_LETTER:
            if text.startswith(two, i):
                add_node(PatternNode(element=two, aromatic=False))
                i += 2
                matched = True
                break
        if matched:
            continue
        if ch in _AROMATIC_LOWER:
            add_node(PatternNode(element=_AROMATIC_LOWER[ch], aromatic=True))
            i += 1
            continue
        if ch.isalpha() and ch.isupper() and ch in VALENCES:
            add_node(PatternNode(element=ch, aromatic=False))
            i += 1
            continue
        if ch in _REJECTED:
            raise ParseError(f"unsupported primitive {_REJECTED[ch]}", i)
        raise ParseError(f"unsupported primitive '{ch}'", i)

    if branch_stack:
        raise ParseError("unbalanced parenthesis", branch_stack[-1][1])
    if open_rings:
        number, (_, _, offset) = min(open_rings.items(), key=lambda kv: kv[1][2])
        raise ParseError(f"unmatched ring closure {number}", offset)
    if pending is not None:
        raise ParseError("dangling bond symbol", i - 1)
    if not nodes:
        raise ParseError("no atoms in pattern", 0)
    try:
        return Pattern(tuple(nodes), tuple(edges), source=text)
    except ValueError as exc:
        raise ParseError(str(exc), 0) from exc


def pattern_from_graph(g: MolecularGraph) -> Pattern:
    """Turn a concrete fragment graph into an exact containment pattern.

    Element, aromaticity, formal charge and bond orders are constrained;
    hydrogen counts and ring membership are left free so the fragment can
    be found embedded in larger molecules.
    """
    nodes = tuple(
        PatternNode(element=a.element, aromatic=a.aromatic,
                    charge=a.formal_charge if a.formal_charge != 0 else None)
        for a in g.atoms)
    edges = tuple((b.endpoints[0], b.endpoints[1], b.order) for b in g.bonds)
    return Pattern(nodes, edges, source="<fragment>")


def match_pattern(pattern: Pattern, g: MolecularGraph,
                  dedupe: bool = True) -> list[tuple[int, ...]]:
    """All embeddings of the pattern into the molecule.

    Backtracking subgraph monomorphism: every pattern edge must map onto a
    molecule bond satisfying its constraint; extra molecule bonds between
    matched atoms are allowed.

    Args:
        pattern: Parsed pattern.
        g: Target molecule.
        dedupe: Collapse matches that cover the same atom set with the
            same multiset of node constraints (one presence call per
            substructure occurrence). With ``dedupe=False`` every raw
            isomorphism is returned.

    Returns:
        List of tuples; entry ``i`` of a tuple is the molecule atom matched
        to pattern node ``i``. Empty list means the pattern is absent.
    """
    k = pattern.n_nodes
    if k == 0 or k > g.n_atoms:
        return []

    # Order pattern nodes so each (after the first) touches a previous one.
    order = [0]
    placed = {0}
    while len(order) < k:
        for idx in range(k):
            if idx not in placed and any(nbr in placed
                                         for nbr, _ in pattern.adjacency[idx]):
                order.append(idx)
                placed.add(idx)
                break
    position = {node: pos for pos, node in enumerate(order)}

    # Signature ids for constraint-equivalent nodes, used by deduplication.
    sigs: dict[PatternNode, int] = {}
    node_sig = []
    for node in pattern.nodes:
        key = node
        if key not in sigs:
            sigs[key] = len(sigs)
        node_sig.append(sigs[key])

    matches: list[tuple[int, ...]] = []
    seen_keys: set[frozenset] = set()
    mapping: dict[int, int] = {}
    used: set[int] = set()

    def feasible(p_idx: int, m_idx: int) -> bool:
        if not pattern.nodes[p_idx].matches(g, m_idx):
            return False
        for nbr, eidx in pattern.adjacency[p_idx]:
            if nbr in mapping:
                bond = g.bond_between(m_idx, mapping[nbr])
                if bond is None or not _edge_matches(pattern.edges[eidx][2],
                                                     bond.order):
                    return False
        return True

    def backtrack(pos: int):
        if pos == k:
            match = tuple(mapping[i] for i in range(k))
            if dedupe:
                key = frozenset(zip(node_sig, match))
                if key in seen_keys:
                    return
                seen_keys.add(key)
            matches.append(match)
            return
        p_idx = order[pos]
        anchored = [mapping[nbr] for nbr, _ in pattern.adjacency[p_idx]
                    if nbr in mapping]
        if anchored:
            candidates = set(g.neighbors(anchored[0]))
            for a in anchored[1:]:
                candidates &= set(g.neighbors(a))
            candidates = sorted(candidates)
        else:
            candidates = range(g.n_atoms)
        for m_idx in candidates:
            if m_idx in used:
                continue
            if feasible(p_idx, m_idx):
                mapping[p_idx] = m_idx
                used.add(m_idx)
                backtrack(pos + 1)
                del mapping[p_idx]
                used.discard(m_idx)

    backtrack(0)
    return matches
