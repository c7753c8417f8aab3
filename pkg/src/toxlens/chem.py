"""Molecular graphs and a self-contained SMILES reader/writer.

The parser covers the organic subset (B, C, N, O, P, S, F, Cl, Br, I),
bracket atoms with charge and explicit hydrogen counts, single/double/
triple/aromatic bonds, branches, and ring closures (single digit and
``%nn``). Implicit hydrogens are assigned from a fixed valence table;
anything that cannot be made consistent with that table is rejected with
a character offset. Stereochemistry tokens are rejected rather than
silently dropped.

Aromaticity is taken from lowercase input notation, plus a light
perception pass that upgrades six-membered rings of strictly alternating
single/double bonds. There is no electron-counting analysis beyond that.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from itertools import permutations

__all__ = [
    "Atom",
    "Bond",
    "MolecularGraph",
    "ParseError",
    "parse_smiles",
    "write_smiles",
    "make_graph",
    "induced_subgraph",
    "permute_atoms",
    "graphs_isomorphic",
    "BOND_ORDERS",
    "ORGANIC_SUBSET",
]

# Bond order names and the numeric order used in valence bookkeeping.
BOND_ORDERS = ("single", "double", "triple", "aromatic")
ORDER_VALUE = {"single": 1, "double": 2, "triple": 3, "aromatic": 1}
_BOND_SYMBOLS = {"-": "single", "=": "double", "#": "triple", ":": "aromatic"}
_SYMBOL_FOR_ORDER = {"single": "-", "double": "=", "triple": "#", "aromatic": ":"}

ORGANIC_SUBSET = ("B", "C", "N", "O", "P", "S", "F", "Cl", "Br", "I")
# Elements that may carry the aromatic (lowercase) flag.
AROMATIC_ELEMENTS = frozenset({"B", "C", "N", "O", "P", "S"})

# Fixed valence alternatives; the smallest consistent value wins.
VALENCES = {
    "B": (3,),
    "C": (4,),
    "N": (3,),
    "O": (2,),
    "P": (3, 5),
    "S": (2, 4, 6),
    "F": (1,),
    "Cl": (1,),
    "Br": (1,),
    "I": (1,),
}

# How many valence slots the delocalized ring system may consume on top of
# the explicit bonds: one for elements that take a formal double bond in a
# Kekulé structure, zero for ether-like ring members.
_AROMATIC_PI_PREFERENCE = {
    "B": (1, 0),
    "C": (1, 0),
    "N": (1, 0),
    "P": (1, 0),
    "O": (0,),
    "S": (0,),
}


class ParseError(ValueError):
    """Syntax or valence error in a SMILES/pattern string, with offset."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.message = message
        self.offset = offset


@dataclass(frozen=True)
class Atom:
    """One heavy atom; hydrogens are implicit counts, never nodes."""

    element: str
    aromatic: bool = False
    formal_charge: int = 0
    implicit_h: int = 0
    ring_member: bool = False


@dataclass(frozen=True)
class Bond:
    """Undirected bond between two atom indices."""

    endpoints: tuple[int, int]
    order: str

    def other(self, idx: int) -> int:
        a, b = self.endpoints
        return b if idx == a else a


class MolecularGraph:
    """Immutable heavy-atom graph with a symmetric adjacency index.

    Attributes:
        atoms: Tuple of :class:`Atom`.
        bonds: Tuple of :class:`Bond`.
        adjacency: Per-atom tuple of ``(neighbor_index, bond_index)`` pairs.
    """

    __slots__ = ("atoms", "bonds", "adjacency")

    def __init__(self, atoms, bonds):
        atoms = tuple(atoms)
        bonds = tuple(bonds)
        n = len(atoms)
        seen_pairs = set()
        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for bidx, bond in enumerate(bonds):
            a, b = bond.endpoints
            if a == b:
                raise ValueError(f"self-loop bond on atom {a}")
            if not (0 <= a < n and 0 <= b < n):
                raise ValueError(f"bond endpoint out of range: {bond.endpoints}")
            key = (min(a, b), max(a, b))
            if key in seen_pairs:
                raise ValueError(f"duplicate bond between atoms {a} and {b}")
            if bond.order not in BOND_ORDERS:
                raise ValueError(f"unknown bond order {bond.order!r}")
            seen_pairs.add(key)
            adj[a].append((b, bidx))
            adj[b].append((a, bidx))
        self.atoms = atoms
        self.bonds = bonds
        self.adjacency = tuple(tuple(pairs) for pairs in adj)

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def neighbors(self, idx: int) -> tuple[int, ...]:
        return tuple(nbr for nbr, _ in self.adjacency[idx])

    def degree(self, idx: int) -> int:
        return len(self.adjacency[idx])

    def bond_between(self, a: int, b: int) -> Bond | None:
        for nbr, bidx in self.adjacency[a]:
            if nbr == b:
                return self.bonds[bidx]
        return None

    def __repr__(self) -> str:
        return f"MolecularGraph(n_atoms={self.n_atoms}, n_bonds={len(self.bonds)})"


# ---------------------------------------------------------------------------
# valence model
# ---------------------------------------------------------------------------


def effective_valences(element: str, charge: int) -> tuple[int, ...]:
    """Allowed valences of an element after adjusting for formal charge."""
    base = VALENCES[element]
    if charge == 0:
        return base
    if element == "C":
        adjusted = [v - abs(charge) for v in base]
    elif element == "B":
        adjusted = [v - charge for v in base]
    else:
        adjusted = [v + charge for v in base]
    return tuple(sorted(v for v in adjusted if v >= 0))


def _resolve_hydrogens(element, aromatic, charge, explicit_h, bond_sum, offset):
    """Pick the implicit hydrogen count, or raise on a valence violation.

    ``bond_sum`` counts aromatic bonds as one each; aromatic atoms may
    additionally consume 0 or 1 valence slots for the ring system.
    """
    targets = effective_valences(element, charge)
    pi_options = _AROMATIC_PI_PREFERENCE.get(element, (0,)) if aromatic else (0,)
    if not targets:
        raise ParseError(
            f"valence violation: charge {charge:+d} leaves no valid valence "
            f"for {element}", offset)
    if explicit_h is not None:
        total = bond_sum + explicit_h
        if not any(total + pi == v for v in targets for pi in pi_options):
            raise ParseError(
                f"valence violation: {element} with {bond_sum} bond order and "
                f"{explicit_h} explicit hydrogens", offset)
        return explicit_h
    for pi in pi_options:
        fitting = [v for v in targets if v >= bond_sum + pi]
        if fitting:
            return min(fitting) - bond_sum - pi
    raise ParseError(
        f"valence violation: {element} with bond order sum {bond_sum} "
        f"exceeds valences {targets}", offset)


# ---------------------------------------------------------------------------
# graph finalization shared by the parser and programmatic construction
# ---------------------------------------------------------------------------


def _find_six_ring_aromatics(n_atoms, raw_atoms, bonds, adjacency):
    """Indices of atoms/bonds in 6-rings of alternating single/double bonds."""
    arom_atoms: set[int] = set()
    arom_bonds: set[int] = set()

    def cycle_alternates(bond_ids):
        orders = [bonds[b][2] for b in bond_ids]
        if set(orders) != {"single", "double"}:
            return False
        for i in range(6):
            if orders[i] == orders[(i + 1) % 6]:
                return False
        return True

    seen_rings: set[frozenset[int]] = set()
    for start in range(n_atoms):
        # DFS over simple paths of length 6 returning to start.
        stack = [(start, [start], [])]
        while stack:
            node, path, bond_path = stack.pop()
            if len(path) == 6:
                closing = next((b for nbr, b in adjacency[node] if nbr == start), None)
                if closing is not None:
                    ring = frozenset(path)
                    if ring not in seen_rings:
                        seen_rings.add(ring)
                        ids = bond_path + [closing]
                        if all(raw_atoms[a]["element"] in AROMATIC_ELEMENTS
                               for a in path) and cycle_alternates(ids):
                            arom_atoms.update(path)
                            arom_bonds.update(ids)
                continue
            for nbr, b in adjacency[node]:
                if nbr > start and nbr not in path:
                    stack.append((nbr, path + [nbr], bond_path + [b]))
    return arom_atoms, arom_bonds


def _ring_membership(n_atoms, bonds, adjacency):
    """Atoms incident to at least one cycle edge (non-bridge bond)."""
    members = [False] * n_atoms

    def connected_without(bidx, a, b):
        seen = {a}
        queue = deque([a])
        while queue:
            node = queue.popleft()
            if node == b:
                return True
            for nbr, bi in adjacency[node]:
                if bi != bidx and nbr not in seen:
                    seen.add(nbr)
                    queue.append(nbr)
        return False

    for bidx, (a, b, _order) in enumerate(bonds):
        if connected_without(bidx, a, b):
            members[a] = True
            members[b] = True
    return members


def _finalize_graph(raw_atoms, raw_bonds):
    """Run aromatic perception, ring flags, and hydrogen assignment.

    Args:
        raw_atoms: Dicts with keys element, aromatic, charge, explicit_h
            (``None`` for "compute it"), offset.
        raw_bonds: ``(a, b, order)`` triples where ``order`` may be ``None``
            (defaulted to aromatic between two aromatic-flagged atoms,
            single otherwise).

    Returns:
        A validated :class:`MolecularGraph`.
    """
    n = len(raw_atoms)
    bonds = []
    for a, b, order in raw_bonds:
        if order is None:
            if raw_atoms[a]["aromatic"] and raw_atoms[b]["aromatic"]:
                order = "aromatic"
            else:
                order = "single"
        bonds.append([a, b, order])

    adjacency: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    pair_seen = set()
    for bidx, (a, b, _order) in enumerate(bonds):
        if a == b:
            raise ParseError("ring closure forms a self-loop",
                             raw_atoms[a]["offset"])
        key = (min(a, b), max(a, b))
        if key in pair_seen:
            raise ParseError("duplicate bond between the same atom pair",
                             raw_atoms[b]["offset"])
        pair_seen.add(key)
        adjacency[a].append((b, bidx))
        adjacency[b].append((a, bidx))

    arom_atoms, arom_bonds = _find_six_ring_aromatics(n, raw_atoms, bonds, adjacency)
    for a in arom_atoms:
        raw_atoms[a]["aromatic"] = True
    for bidx in arom_bonds:
        bonds[bidx][2] = "aromatic"

    for a, b, order in bonds:
        if order == "aromatic" and not (
                raw_atoms[a]["aromatic"] and raw_atoms[b]["aromatic"]):
            raise ParseError("aromatic bond between non-aromatic atoms",
                             raw_atoms[b]["offset"])

    in_ring = _ring_membership(n, bonds, adjacency)

    atoms = []
    for idx, raw in enumerate(raw_atoms):
        if raw["aromatic"] and raw["element"] not in AROMATIC_ELEMENTS:
            raise ParseError(f"element {raw['element']} cannot be aromatic",
                             raw["offset"])
        bond_sum = sum(ORDER_VALUE[bonds[bidx][2]] for _, bidx in adjacency[idx])
        implicit_h = _resolve_hydrogens(
            raw["element"], raw["aromatic"], raw["charge"], raw["explicit_h"],
            bond_sum, raw["offset"])
        atoms.append(Atom(
            element=raw["element"],
            aromatic=raw["aromatic"],
            formal_charge=raw["charge"],
            implicit_h=implicit_h,
            ring_member=in_ring[idx],
        ))
    return MolecularGraph(atoms, [Bond((a, b), order) for a, b, order in bonds])


def make_graph(atom_specs, bond_specs) -> MolecularGraph:
    """Build a graph programmatically through the same validation as parsing.

    Args:
        atom_specs: Iterable of ``(element, aromatic, charge)`` or
            ``(element, aromatic, charge, explicit_h)`` tuples.
        bond_specs: Iterable of ``(a, b, order)`` with order one of
            :data:`BOND_ORDERS` or ``None`` for the context default.
    """
    raw_atoms = []
    for idx, spec in enumerate(atom_specs):
        element, aromatic, charge = spec[0], spec[1], spec[2]
        explicit_h = spec[3] if len(spec) > 3 else None
        if element not in VALENCES:
            raise ParseError(f"unknown element '{element}'", idx)
        raw_atoms.append({"element": element, "aromatic": bool(aromatic),
                          "charge": int(charge), "explicit_h": explicit_h,
                          "offset": idx})
    return _finalize_graph(raw_atoms, list(bond_specs))


# ---------------------------------------------------------------------------
# SMILES reader
# ---------------------------------------------------------------------------

_TWO_LETTER = ("Cl", "Br")
_AROMATIC_TOKENS = {"b": "B", "c": "C", "n": "N", "o": "O", "p": "P", "s": "S"}
_STEREO_TOKENS = "/\\@"


def _parse_bracket(text: str, start: int):
    """Parse a bracket atom starting at ``text[start] == '['``.

    Returns ``(raw_atom_dict, index_after_bracket)``.
    """
    i = start + 1
    n = len(text)
    if i < n and text[i].isdigit():
        raise ParseError("unsupported isotope specification", i)

    element = None
    aromatic = False
    if i < n:
        for two in _TWO_LETTER:
            if text.startswith(two, i):
                element, i = two, i + 2
                break
        else:
            ch = text[i]
            if ch.isupper() and i + 1 < n and text[i + 1].islower():
                raise ParseError(f"unknown element '{text[i:i + 2]}'", i)
            if ch in _AROMATIC_TOKENS:
                element, aromatic, i = _AROMATIC_TOKENS[ch], True, i + 1
            elif ch.isalpha() and ch.isupper():
                element, i = ch, i + 1
    if element is None:
        raise ParseError("expected element symbol in bracket atom", i)
    if element == "H":
        raise ParseError("explicit hydrogen atoms are not supported", start + 1)
    if element not in VALENCES:
        raise ParseError(f"unknown element '{element}'", start + 1)

    explicit_h = 0
    charge = 0
    while i < n and text[i] != "]":
        ch = text[i]
        if ch == "H":
            i += 1
            digits = ""
            while i < n and text[i].isdigit():
                digits += text[i]
                i += 1
            explicit_h = int(digits) if digits else 1
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
        elif ch == "@":
            raise ParseError("unsupported stereochemistry token '@'", i)
        elif ch == ":":
            raise ParseError("unsupported atom-class specification ':'", i)
        else:
            raise ParseError(f"unexpected character '{ch}' in bracket atom", i)
    if i >= n:
        raise ParseError("unterminated bracket atom", start)
    return ({"element": element, "aromatic": aromatic, "charge": charge,
             "explicit_h": explicit_h, "offset": start}, i + 1)


def parse_smiles(text: str) -> MolecularGraph:
    """Parse a SMILES string into a :class:`MolecularGraph`.

    Args:
        text: Non-empty SMILES over the supported grammar.

    Returns:
        The parsed graph; all invariants (symmetric adjacency, valence
        consistency, ring flags) hold on return.

    Raises:
        ParseError: On syntax errors, unknown elements, unbalanced
            parentheses, unmatched ring closures, unsupported tokens, or
            valence violations. The error carries the character offset.
    """
    if not text:
        raise ParseError("empty SMILES", 0)

    raw_atoms: list[dict] = []
    raw_bonds: list[tuple[int, int, str | None]] = []
    prev_atom: int | None = None
    branch_stack: list[tuple[int | None, int]] = []
    pending_bond: str | None = None
    pending_bond_offset = -1
    # ring number -> (atom index, bond symbol or None, offset of the digit)
    open_rings: dict[int, tuple[int, str | None, int]] = {}

    def add_atom(raw: dict):
        nonlocal prev_atom, pending_bond
        idx = len(raw_atoms)
        raw_atoms.append(raw)
        if prev_atom is not None:
            order = None if pending_bond is None else _BOND_SYMBOLS[pending_bond]
            raw_bonds.append((prev_atom, idx, order))
        elif pending_bond is not None:
            raise ParseError("bond symbol with no preceding atom",
                             pending_bond_offset)
        pending_bond = None
        prev_atom = idx

    def close_ring(number: int, offset: int):
        nonlocal pending_bond
        if prev_atom is None:
            raise ParseError("ring closure before any atom", offset)
        if number in open_rings:
            other, sym_open, open_offset = open_rings.pop(number)
            sym_close = pending_bond
            pending_bond = None
            if sym_open is not None and sym_close is not None \
                    and sym_open != sym_close:
                raise ParseError(
                    f"conflicting bond symbols on ring closure {number}", offset)
            order = None
            for sym in (sym_close, sym_open):
                if sym is not None:
                    order = _BOND_SYMBOLS[sym]
                    break
            if other == prev_atom:
                raise ParseError("ring closure forms a self-loop", offset)
            raw_bonds.append((other, prev_atom, order))
        else:
            sym = None
            if pending_bond is not None:
                sym = pending_bond
                pending_bond = None
            open_rings[number] = (prev_atom, sym, offset)

    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch in _STEREO_TOKENS:
            raise ParseError(f"unsupported stereochemistry token '{ch}'", i)
        if ch == ".":
            raise ParseError("unsupported token '.' (disconnected fragments)", i)
        if ch == "(":
            if prev_atom is None:
                raise ParseError("branch with no preceding atom", i)
            branch_stack.append((prev_atom, i))
            i += 1
            continue
        if ch == ")":
            if not branch_stack:
                raise ParseError("unbalanced parenthesis", i)
            prev_atom = branch_stack.pop()[0]
            i += 1
            continue
        if ch in _BOND_SYMBOLS:
            if pending_bond is not None:
                raise ParseError("two consecutive bond symbols", i)
            pending_bond = ch
            pending_bond_offset = i
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
            raw, i = _parse_bracket(text, i)
            add_atom(raw)
            continue
        matched = False
        for two in _TWO_LETTER:
            if text.startswith(two, i):
                add_atom({"element": two, "aromatic": False, "charge": 0,
                          "explicit_h": None, "offset": i})
                i += 2
                matched = True
                break
        if matched:
            continue
        if ch in _AROMATIC_TOKENS:
            add_atom({"element": _AROMATIC_TOKENS[ch], "aromatic": True,
                      "charge": 0, "explicit_h": None, "offset": i})
            i += 1
            continue
        if ch.isalpha() and ch.isupper():
            if ch not in VALENCES:
                raise ParseError(f"unknown element '{ch}'", i)
            add_atom({"element": ch, "aromatic": False, "charge": 0,
                      "explicit_h": None, "offset": i})
            i += 1
            continue
        raise ParseError(f"unexpected character '{ch}'", i)

    if branch_stack:
        raise ParseError("unbalanced parenthesis", branch_stack[-1][1])
    if open_rings:
        number, (_, _, offset) = min(open_rings.items(), key=lambda kv: kv[1][2])
        raise ParseError(f"unmatched ring closure {number}", offset)
    if pending_bond is not None:
        raise ParseError("dangling bond symbol", pending_bond_offset)
    if not raw_atoms:
        raise ParseError("no atoms in SMILES", 0)
    return _finalize_graph(raw_atoms, raw_bonds)


# ---------------------------------------------------------------------------
# SMILES writer
# ---------------------------------------------------------------------------


def _canonical_ranks(g: MolecularGraph) -> list[int]:
    """Order-independent atom ranks by iterative invariant refinement."""
    keys = [
        (a.element, a.aromatic, a.formal_charge, a.implicit_h, a.ring_member,
         g.degree(i))
        for i, a in enumerate(g.atoms)
    ]
    ranks = _keys_to_ranks(keys)
    for _ in range(g.n_atoms):
        new_keys = []
        for i in range(g.n_atoms):
            nbr_sig = sorted(
                (g.bonds[b].order, ranks[nbr]) for nbr, b in g.adjacency[i])
            new_keys.append((ranks[i], tuple(nbr_sig)))
        new_ranks = _keys_to_ranks(new_keys)
        if new_ranks == ranks:
            break
        ranks = new_ranks
    return ranks


def _keys_to_ranks(keys) -> list[int]:
    order = sorted(set(keys))
    index = {k: r for r, k in enumerate(order)}
    return [index[k] for k in keys]


def _atom_token(g: MolecularGraph, idx: int) -> str:
    atom = g.atoms[idx]
    symbol = atom.element.lower() if atom.aromatic else atom.element
    bond_sum = sum(ORDER_VALUE[g.bonds[b].order] for _, b in g.adjacency[idx])
    try:
        default_h = _resolve_hydrogens(
            atom.element, atom.aromatic, atom.formal_charge, None, bond_sum, 0)
    except ParseError:
        default_h = -1
    needs_bracket = atom.formal_charge != 0 or atom.implicit_h != default_h
    if not needs_bracket:
        return symbol
    token = "[" + symbol
    if atom.implicit_h == 1:
        token += "H"
    elif atom.implicit_h > 1:
        token += f"H{atom.implicit_h}"
    if atom.formal_charge == 1:
        token += "+"
    elif atom.formal_charge == -1:
        token += "-"
    elif atom.formal_charge > 1:
        token += f"+{atom.formal_charge}"
    elif atom.formal_charge < -1:
        token += f"-{-atom.formal_charge}"
    return token + "]"


def _bond_token(g: MolecularGraph, a: int, b: int, order: str) -> str:
    both_aromatic = g.atoms[a].aromatic and g.atoms[b].aromatic
    default = "aromatic" if both_aromatic else "single"
    return "" if order == default else _SYMBOL_FOR_ORDER[order]


def _emit_from_root(g: MolecularGraph, root: int, ranks) -> str:
    n = g.n_atoms

    def order_key(pair):
        return (ranks[pair[0]], pair[0])

    # Pass 1: depth-first spanning tree; non-tree edges become closures.
    visited = [False] * n
    children: dict[int, list[tuple[int, int]]] = {i: [] for i in range(n)}
    back_edges: list[tuple[int, int, int]] = []
    seen_back: set[tuple[int, int]] = set()

    def explore(node: int, par: int):
        visited[node] = True
        for nbr, b in sorted(g.adjacency[node], key=order_key):
            if nbr == par:
                continue
            if visited[nbr]:
                key = (min(node, nbr), max(node, nbr))
                if key not in seen_back:
                    seen_back.add(key)
                    back_edges.append((node, nbr, b))
            else:
                children[node].append((nbr, b))
                explore(nbr, node)

    explore(root, -1)

    closure_at: dict[int, list[tuple[int, str]]] = {i: [] for i in range(n)}
    for digit, (a, b, bidx) in enumerate(back_edges, start=1):
        sym = _bond_token(g, a, b, g.bonds[bidx].order)
        closure_at[a].append((digit, sym))
        closure_at[b].append((digit, sym))

    def closure_str(idx: int) -> str:
        return "".join(
            sym + (str(digit) if digit < 10 else f"%{digit:02d}")
            for digit, sym in sorted(closure_at[idx]))

    def emit(node: int) -> str:
        parts = [_atom_token(g, node), closure_str(node)]
        kids = children[node]
        for k, (nbr, b) in enumerate(kids):
            sym = _bond_token(g, node, nbr, g.bonds[b].order)
            sub = sym + emit(nbr)
            parts.append(f"({sub})" if k < len(kids) - 1 else sub)
        return "".join(parts)

    return emit(root)


def write_smiles(g: MolecularGraph, canonical: bool = True) -> str:
    """Serialize a connected graph back to SMILES.

    With ``canonical=True`` the output is invariant to the atom numbering
    of the input graph: refinement ranks order the traversal and the
    lexicographically smallest string over all tied root atoms is chosen.
    """
    if g.n_atoms == 0:
        raise ValueError("cannot serialize an empty graph")
    if not _is_connected(g):
        raise ValueError("cannot serialize a disconnected graph")
    if not canonical:
        return _emit_from_root(g, 0, list(range(g.n_atoms)))
    ranks = _canonical_ranks(g)
    best_rank = min(ranks)
    candidates = [i for i, r in enumerate(ranks) if r == best_rank]
    return min(_emit_from_root(g, root, ranks) for root in candidates)


def _is_connected(g: MolecularGraph) -> bool:
    if g.n_atoms == 0:
        return True
    seen = {0}
    queue = deque([0])
    while queue:
        node = queue.popleft()
        for nbr, _ in g.adjacency[node]:
            if nbr not in seen:
                seen.add(nbr)
                queue.append(nbr)
    return len(seen) == g.n_atoms


# ---------------------------------------------------------------------------
# graph utilities
# ---------------------------------------------------------------------------


def induced_subgraph(g: MolecularGraph, atom_indices) -> MolecularGraph:
    """Subgraph on the given atoms with all bonds among them.

    Implicit hydrogen counts are recomputed for the reduced bond
    environment, so the result is a valid standalone graph.
    """
    idx_list = sorted(set(atom_indices))
    remap = {old: new for new, old in enumerate(idx_list)}
    atom_specs = []
    for old in idx_list:
        a = g.atoms[old]
        atom_specs.append((a.element, a.aromatic, a.formal_charge))
    bond_specs = []
    for bond in g.bonds:
        a, b = bond.endpoints
        if a in remap and b in remap:
            bond_specs.append((remap[a], remap[b], bond.order))
    return make_graph(atom_specs, bond_specs)


def permute_atoms(g: MolecularGraph, perm) -> MolecularGraph:
    """Relabel atoms so old index ``i`` becomes ``perm[i]``."""
    perm = list(perm)
    if sorted(perm) != list(range(g.n_atoms)):
        raise ValueError("perm must be a permutation of the atom indices")
    new_atoms = [None] * g.n_atoms
    for old, new in enumerate(perm):
        new_atoms[new] = g.atoms[old]
    new_bonds = [Bond((perm[a], perm[b]), bond.order)
                 for bond in g.bonds for a, b in [bond.endpoints]]
    return MolecularGraph(new_atoms, new_bonds)


def _atom_signature(a: Atom):
    return (a.element, a.aromatic, a.formal_charge, a.implicit_h)


def graphs_isomorphic(g1: MolecularGraph, g2: MolecularGraph) -> bool:
    """Exact isomorphism on (element, aromatic, charge, implicit H, bonds).

    Backtracking with degree/signature pruning; intended for the small
    molecules this package works with, not for large graphs.
    """
    if g1.n_atoms != g2.n_atoms or len(g1.bonds) != len(g2.bonds):
        return False
    sig1 = sorted((_atom_signature(a), g1.degree(i)) for i, a in enumerate(g1.atoms))
    sig2 = sorted((_atom_signature(a), g2.degree(i)) for i, a in enumerate(g2.atoms))
    if sig1 != sig2:
        return False

    n = g1.n_atoms
    mapping: dict[int, int] = {}
    used = [False] * n

    def compatible(i, j):
        if _atom_signature(g1.atoms[i]) != _atom_signature(g2.atoms[j]):
            return False
        if g1.degree(i) != g2.degree(j):
            return False
        for nbr, b in g1.adjacency[i]:
            if nbr in mapping:
                other = g2.bond_between(j, mapping[nbr])
                if other is None or other.order != g1.bonds[b].order:
                    return False
        return True

    order = sorted(range(n), key=lambda i: -g1.degree(i))

    def backtrack(pos):
        if pos == n:
            return True
        i = order[pos]
        # Prefer candidates adjacent to already-mapped neighbors.
        mapped_nbrs = [mapping[nbr] for nbr, _ in g1.adjacency[i] if nbr in mapping]
        if mapped_nbrs:
            candidates = set(g2.neighbors(mapped_nbrs[0]))
            for m in mapped_nbrs[1:]:
                candidates &= set(g2.neighbors(m))
        else:
            candidates = set(range(n))
        for j in sorted(candidates):
            if not used[j] and compatible(i, j):
                mapping[i] = j
                used[j] = True
                if backtrack(pos + 1):
                    return True
                del mapping[i]
                used[j] = False
        return False

    return backtrack(0)


def shortest_path_lengths(g: MolecularGraph, source: int) -> list[int]:
    """BFS distances from ``source``; unreachable atoms get -1."""
    dist = [-1] * g.n_atoms
    dist[source] = 0
    queue = deque([source])
    while queue:
        node = queue.popleft()
        for nbr, _ in g.adjacency[node]:
            if dist[nbr] < 0:
                dist[nbr] = dist[node] + 1
                queue.append(nbr)
    return dist


def atoms_within_radius(g: MolecularGraph, center: int, radius: int) -> frozenset[int]:
    """All atoms at graph distance <= radius from the center atom."""
    dist = shortest_path_lengths(g, center)
    return frozenset(i for i, d in enumerate(dist) if 0 <= d <= radius)


def enumerate_injective_matches(node_ok, edge_ok, n_pattern: int,
                                g: MolecularGraph):
    """Exhaustive injective-assignment search (oracle-grade, O(n^k)).

    Yields every tuple ``t`` with ``t[i]`` the graph atom for pattern node
    ``i`` such that all node and edge predicates hold. Used by tests as an
    independent reference; the production matcher lives in ``patterns``.
    """
    for assignment in permutations(range(g.n_atoms), n_pattern):
        if all(node_ok(i, assignment[i]) for i in range(n_pattern)) and \
                edge_ok(assignment):
            yield assignment
