"""Circular substructure fingerprints with bit-to-atom provenance.

Iterative neighborhood hashing (the Morgan scheme): every atom starts from
an invariant tuple, and each round rehashes it together with the sorted
(bond order, neighbor identifier) list. Identifiers from all rounds are
folded into a fixed-length bit vector by masking. The hash is an explicit
64-bit mixing function, so fingerprints are byte-identical across runs,
processes and platforms.

Unlike plain bit vectors, every set bit remembers which circular
environments produced it (center atom, radius, atom set), which is what
lets downstream attribution code move from feature space to atoms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .chem import MolecularGraph, shortest_path_lengths

__all__ = ["Fingerprint", "FingerprintConfig", "ecfp", "atoms_for_bits"]

_MASK64 = (1 << 64) - 1
_ORDER_CODE = {"single": 1, "double": 2, "triple": 3, "aromatic": 4}


def _mix64(x: int) -> int:
    """SplitMix64 finalizer; a fixed, platform-independent 64-bit mixer."""
    x &= _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (x ^ (x >> 31)) & _MASK64


def _hash_ints(values) -> int:
    h = 0x9E3779B97F4A7C15
    for v in values:
        h = _mix64(h ^ _mix64(v & _MASK64))
    return h


def _element_code(element: str) -> int:
    return int.from_bytes(element.encode("ascii"), "big")


@dataclass(frozen=True)
class FingerprintConfig:
    """Radius / length / invariant settings for fingerprint generation."""

    radius: int = 1
    n_bits: int = 1024

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be non-negative")
        if self.n_bits <= 0 or (self.n_bits & (self.n_bits - 1)) != 0:
            raise ValueError("n_bits must be a positive power of two")


@dataclass
class Fingerprint:
    """Binary presence vector plus provenance for every set bit.

    Attributes:
        bits: uint8 vector of length ``n_bits``.
        provenance: Map set-bit index -> list of ``(center_atom, radius,
            frozenset_of_environment_atoms)`` entries.
        n_atoms: Atom count of the source molecule.
    """

    bits: np.ndarray
    provenance: dict[int, list[tuple[int, int, frozenset[int]]]]
    n_atoms: int
    config: FingerprintConfig = field(default_factory=FingerprintConfig)

    @property
    def n_bits(self) -> int:
        return int(self.bits.shape[0])

    def set_bits(self) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.bits)]

    def as_float(self) -> np.ndarray:
        return self.bits.astype(np.float64)


def initial_invariant(g: MolecularGraph, idx: int) -> tuple[int, ...]:
    """The round-0 atom descriptor tuple fed to the hash."""
    atom = g.atoms[idx]
    return (
        _element_code(atom.element),
        g.degree(idx),
        atom.implicit_h,
        atom.formal_charge + 256,
        int(atom.ring_member),
        int(atom.aromatic),
    )


def ecfp(g: MolecularGraph, cfg: FingerprintConfig | None = None) -> Fingerprint:
    """Compute the circular fingerprint of a molecule.

    Deterministic: equal graphs (up to atom order) give bitwise-equal
    fingerprints. Environments covering the same atoms and bonds that
    reappear in later rounds are emitted only once.
    """
    if cfg is None:
        cfg = FingerprintConfig()
    n = g.n_atoms
    mask = cfg.n_bits - 1

    dist = [shortest_path_lengths(g, a) for a in range(n)]

    def ball(center: int, radius: int) -> frozenset[int]:
        return frozenset(i for i, d in enumerate(dist[center])
                         if 0 <= d <= radius)

    def env_bonds(center: int, radius: int) -> frozenset[int]:
        # Bonds reached while growing the ball: at least one endpoint
        # strictly inside radius, both endpoints within it.
        out = set()
        for bidx, bond in enumerate(g.bonds):
            a, b = bond.endpoints
            da, db = dist[center][a], dist[center][b]
            if da < 0 or db < 0:
                continue
            if min(da, db) <= radius - 1 and max(da, db) <= radius:
                out.add(bidx)
        return frozenset(out)

    # Collect every candidate environment first; duplicates (same atom and
    # bond sets, possibly from different rounds or centers) are collapsed
    # to one winner chosen by (radius, identifier), which is invariant to
    # the atom numbering of the input graph.
    candidates: dict[tuple[frozenset[int], frozenset[int]],
                     tuple[int, int, int]] = {}

    def offer(identifier: int, center: int, radius: int):
        key = (ball(center, radius), env_bonds(center, radius))
        held = candidates.get(key)
        if held is None or (radius, identifier) < (held[1], held[0]):
            candidates[key] = (identifier, radius, center)

    ids = [_hash_ints(initial_invariant(g, a)) for a in range(n)]
    for a in range(n):
        offer(ids[a], a, 0)

    for radius in range(1, cfg.radius + 1):
        new_ids = []
        for a in range(n):
            nbr_sig = sorted(
                (_ORDER_CODE[g.bonds[b].order], ids[w])
                for w, b in g.adjacency[a])
            payload = [radius, ids[a]]
            for code, nid in nbr_sig:
                payload.extend((code, nid))
            new_ids.append(_hash_ints(payload))
        ids = new_ids
        for a in range(n):
            offer(ids[a], a, radius)

    bits = np.zeros(cfg.n_bits, dtype=np.uint8)
    provenance: dict[int, list[tuple[int, int, frozenset[int]]]] = {}
    winners = sorted(
        ((identifier, radius, center, atoms)
         for (atoms, _bonds), (identifier, radius, center)
         in candidates.items()),
        key=lambda t: (t[1], t[2]))
    for identifier, radius, center, atoms in winners:
        bit = identifier & mask
        bits[bit] = 1
        provenance.setdefault(bit, []).append((center, radius, atoms))

    return Fingerprint(bits=bits, provenance=provenance, n_atoms=n, config=cfg)


def atoms_for_bits(fp: Fingerprint, bit_indices) -> dict[int, set[int]]:
    """Union of provenance atom sets for each requested bit.

    Unset bits map to the empty set.
    """
    out: dict[int, set[int]] = {}
    for bit in bit_indices:
        bit = int(bit)
        if not 0 <= bit < fp.n_bits:
            raise IndexError(f"bit {bit} out of range for {fp.n_bits} bits")
        atoms: set[int] = set()
        for _center, _radius, env in fp.provenance.get(bit, ()):
            atoms |= env
        out[bit] = atoms
    return out


def feature_matrix(graphs, cfg: FingerprintConfig | None = None):
    """Fingerprints and the stacked float matrix for a molecule list."""
    if cfg is None:
        cfg = FingerprintConfig()
    fps = [ecfp(g, cfg) for g in graphs]
    X = np.stack([fp.as_float() for fp in fps]) if fps else \
        np.zeros((0, cfg.n_bits))
    return fps, X
