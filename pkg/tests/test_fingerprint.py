"""Fingerprint determinism, provenance, and invariance tests."""

import json
import random
from pathlib import Path

import numpy as np
import pytest

from toxlens.chem import parse_smiles, permute_atoms, shortest_path_lengths
from toxlens.datasets import GeneratorConfig, generate_alcohol_set
from toxlens.fingerprint import (
    Fingerprint,
    FingerprintConfig,
    _hash_ints,
    _element_code,
    atoms_for_bits,
    ecfp,
    initial_invariant,
)

GOLDEN = Path(__file__).parent / "data" / "golden_fingerprints.json"


class TestConfig:
    def test_power_of_two_required(self):
        with pytest.raises(ValueError):
            FingerprintConfig(n_bits=1000)
        with pytest.raises(ValueError):
            FingerprintConfig(radius=-1)
        FingerprintConfig(radius=0, n_bits=2)


class TestEthanolRadiusZero:
    """Hand-derived oracle for the three radius-0 environments of CCO."""

    def test_exactly_three_bits(self):
        g = parse_smiles("CCO")
        # The three atoms differ in their invariant tuples:
        # CH3 carbon (degree 1, 3 H), CH2 carbon (degree 2, 2 H),
        # OH oxygen (degree 1, 1 H).
        tuples = [initial_invariant(g, i) for i in range(3)]
        assert tuples[0] == (_element_code("C"), 1, 3, 256, 0, 0)
        assert tuples[1] == (_element_code("C"), 2, 2, 256, 0, 0)
        assert tuples[2] == (_element_code("O"), 1, 1, 256, 0, 0)
        assert len(set(tuples)) == 3
        # No fold collision for this hash at 1024 bits:
        folded = {_hash_ints(t) & 1023 for t in tuples}
        assert len(folded) == 3

        fp = ecfp(g, FingerprintConfig(radius=0, n_bits=1024))
        assert fp.set_bits() == sorted(folded)
        assert len(fp.set_bits()) == 3


class TestProvenance:
    def test_every_set_bit_has_provenance(self):
        g = parse_smiles("CC(=O)Oc1ccccc1")
        fp = ecfp(g, FingerprintConfig(radius=2, n_bits=256))
        set_bits = set(fp.set_bits())
        assert set(fp.provenance) == set_bits
        for bit, entries in fp.provenance.items():
            assert entries
            for center, radius, atoms in entries:
                assert 0 <= center < g.n_atoms
                assert center in atoms
                assert all(0 <= a < g.n_atoms for a in atoms)

    def test_every_atom_covered(self):
        g = parse_smiles("OCC(N)C(=O)O")
        fp = ecfp(g, FingerprintConfig(radius=1, n_bits=512))
        covered = set()
        for entries in fp.provenance.values():
            for _c, _r, atoms in entries:
                covered |= atoms
        assert covered == set(range(g.n_atoms))

    def test_monotone_coverage(self):
        # Every recorded radius-r environment contains the full radius-(r-1)
        # ball of its center, computed here independently by BFS.
        g = parse_smiles("CC(C)Cc1ccc(cc1)C(C)C(=O)O")
        fp = ecfp(g, FingerprintConfig(radius=3, n_bits=2048))
        for entries in fp.provenance.values():
            for center, radius, atoms in entries:
                if radius == 0:
                    assert atoms == {center}
                    continue
                dist = shortest_path_lengths(g, center)
                smaller = {i for i, d in enumerate(dist) if 0 <= d <= radius - 1}
                assert atoms >= smaller

    def test_atoms_for_bits_examples(self):
        g = parse_smiles("CCO")
        fp = ecfp(g, FingerprintConfig(radius=1, n_bits=1024))
        # radius-0 oxygen bit
        o_bit = next(bit for bit, entries in fp.provenance.items()
                     if any(r == 0 and c == 2 for c, r, _ in entries))
        assert atoms_for_bits(fp, [o_bit])[o_bit] == {2}
        # radius-1 environment centered on the CH2 covers the whole molecule
        mid_bit = next(bit for bit, entries in fp.provenance.items()
                       if any(r == 1 and c == 1 for c, r, _ in entries))
        assert atoms_for_bits(fp, [mid_bit])[mid_bit] == {0, 1, 2}
        # unset bit maps to the empty set
        unset = next(i for i in range(fp.n_bits) if fp.bits[i] == 0)
        assert atoms_for_bits(fp, [unset])[unset] == set()

    def test_atoms_for_bits_range_check(self):
        fp = ecfp(parse_smiles("C"), FingerprintConfig(radius=0, n_bits=16))
        with pytest.raises(IndexError):
            atoms_for_bits(fp, [16])


class TestDegenerateCases:
    def test_single_atom_radius_one_adds_nothing(self):
        g = parse_smiles("O")
        f0 = ecfp(g, FingerprintConfig(radius=0, n_bits=64))
        f1 = ecfp(g, FingerprintConfig(radius=1, n_bits=64))
        assert np.array_equal(f0.bits, f1.bits)
        assert len(f1.set_bits()) == 1


class TestInvariance:
    def test_permutation_invariance_generated(self):
        ls = generate_alcohol_set(GeneratorConfig(
            seed=31, n_positive=20, n_negative=20, n_acid=10))
        rng = random.Random(7)
        cfg = FingerprintConfig(radius=2, n_bits=512)
        for g in ls.molecules:
            reference = ecfp(g, cfg)
            for _ in range(3):
                perm = list(range(g.n_atoms))
                rng.shuffle(perm)
                permuted = ecfp(permute_atoms(g, perm), cfg)
                assert np.array_equal(reference.bits, permuted.bits)

    def test_determinism_two_calls(self):
        g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O")
        cfg = FingerprintConfig(radius=2, n_bits=1024)
        a, b = ecfp(g, cfg), ecfp(g, cfg)
        assert np.array_equal(a.bits, b.bits)
        assert a.provenance == b.provenance


GOLDEN_SMILES = [
    "CCO", "CC(=O)O", "c1ccccc1", "Cc1ccccc1O", "C[N+](=O)[O-]",
    "OCC(N)C(=O)O", "C1CC1C(Cl)Br", "c1ccncc1", "CC(C)(C)O", "CSC",
]


class TestGoldenFile:
    """Cross-platform stability: sparse indices frozen in the repository."""

    def test_matches_golden(self):
        golden = json.loads(GOLDEN.read_text())
        assert golden["radius"] == 1 and golden["n_bits"] == 1024
        cfg = FingerprintConfig(radius=1, n_bits=1024)
        for smiles, expected in golden["fingerprints"].items():
            fp = ecfp(parse_smiles(smiles), cfg)
            assert fp.set_bits() == expected, smiles
