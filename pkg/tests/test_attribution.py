"""Integrated-gradients attribution and rendering tests."""

import json

import numpy as np
import pytest

from toxlens.attribution import (
    atomwise,
    attribute_molecule,
    completeness_gap,
    integrated_gradients,
    parse_attribution_json,
    render_attribution,
)
from toxlens.chem import parse_smiles
from toxlens.densenet import DenseNet, TrainConfig, train
from toxlens.fingerprint import FingerprintConfig, ecfp


def _linear_sigmoid(w, b=0.0):
    return DenseNet([np.asarray(w, dtype=float).reshape(-1, 1)],
                    [np.array([b])], output="sigmoid")


class TestIntegratedGradients:
    def test_input_equal_baseline_gives_exact_zero(self):
        net = DenseNet.initialize(6, (4,), 1, seed=0)
        x = np.full(6, 0.7)
        a = integrated_gradients(net, x, baseline=x.copy(), steps=25)
        assert np.all(a == 0.0)

    def test_sensitivity_null(self):
        # Coordinates where input and baseline agree get exactly zero.
        net = DenseNet.initialize(5, (4,), 1, seed=1)
        x = np.array([1.0, 0.0, 2.0, 0.0, -1.0])
        baseline = np.array([1.0, 0.5, 0.0, 0.0, 0.0])
        a = integrated_gradients(net, x, baseline, steps=64)
        assert a[0] == 0.0 and a[3] == 0.0
        assert a[2] != 0.0

    def test_linear_model_exact_for_one_step(self):
        w = np.array([0.5, -2.0, 3.0])
        net = DenseNet([w.reshape(-1, 1)], [np.zeros(1)], output="identity")
        x = np.array([1.0, 2.0, -1.0])
        for m in (1, 2, 17):
            a = integrated_gradients(net, x, steps=m)
            assert np.array_equal(a, w * x)

    def test_completeness_on_sigmoid_linear(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            w = rng.normal(size=4)
            net = _linear_sigmoid(w, b=float(rng.normal()))
            x = rng.normal(size=4)
            a = integrated_gradients(net, x, steps=1000)
            gap = completeness_gap(net, x, np.zeros(4), a, 0)
            assert gap <= 1e-3

    def test_gap_shrinks_as_steps_double(self):
        rng = np.random.default_rng(7)
        coarse_worse = 0
        for _ in range(20):
            net = DenseNet.initialize(6, (5,), 1,
                                      seed=int(rng.integers(1 << 30)))
            x = rng.normal(size=6)
            a100 = integrated_gradients(net, x, steps=100)
            a2000 = integrated_gradients(net, x, steps=2000)
            g100 = completeness_gap(net, x, np.zeros(6), a100, 0)
            g2000 = completeness_gap(net, x, np.zeros(6), a2000, 0)
            coarse_worse += g2000 <= g100
        assert coarse_worse >= 18  # non-increasing in expectation

    def test_trapezoid_scheme(self):
        net = DenseNet.initialize(4, (3,), 1, seed=3)
        x = np.ones(4)
        a_right = integrated_gradients(net, x, steps=200, scheme="right")
        a_trap = integrated_gradients(net, x, steps=200, scheme="trapezoid")
        gap_r = completeness_gap(net, x, np.zeros(4), a_right, 0)
        gap_t = completeness_gap(net, x, np.zeros(4), a_trap, 0)
        assert gap_t <= gap_r * 1.01

    def test_shape_and_step_validation(self):
        net = DenseNet.initialize(4, (3,), 1, seed=0)
        with pytest.raises(ValueError):
            integrated_gradients(net, np.ones(4), baseline=np.ones(3))
        with pytest.raises(ValueError):
            integrated_gradients(net, np.ones(4), steps=0)
        with pytest.raises(ValueError):
            integrated_gradients(net, np.ones(4), scheme="simpson")


class TestAtomwise:
    def test_single_atom_collects_everything(self):
        g = parse_smiles("O")
        fp = ecfp(g, FingerprintConfig(radius=1, n_bits=64))
        per_feature = np.zeros(64)
        for bit in fp.set_bits():
            per_feature[bit] = 0.25
        scores = atomwise(fp, per_feature)
        assert scores.shape == (1,)
        assert abs(scores[0] - 0.25 * len(fp.set_bits())) < 1e-15

    def test_zero_features_zero_atoms(self):
        fp = ecfp(parse_smiles("CCO"), FingerprintConfig(radius=1, n_bits=128))
        assert np.all(atomwise(fp, np.zeros(128)) == 0.0)

    def test_unset_bits_ignored(self):
        fp = ecfp(parse_smiles("CCO"), FingerprintConfig(radius=0, n_bits=128))
        per_feature = np.ones(128)  # attribution mass on unset bits too
        scores = atomwise(fp, per_feature)
        assert np.allclose(scores, 1.0)  # one radius-0 bit per atom

    def test_ethanol_hand_enumerated_provenance(self):
        # radius 1: oxygen participates in its own radius-0 environment,
        # the O-centered radius-1 pair, and the C-centered radius-1
        # environments that reach it.
        g = parse_smiles("CCO")
        fp = ecfp(g, FingerprintConfig(radius=1, n_bits=1024))
        rng = np.random.default_rng(0)
        per_feature = rng.normal(size=1024)
        expected = np.zeros(3)
        for bit, entries in fp.provenance.items():
            touched = set()
            for _c, _r, atoms in entries:
                touched |= atoms
            for atom in touched:
                expected[atom] += per_feature[bit]
        assert np.allclose(atomwise(fp, per_feature), expected, atol=1e-15)
        o_bits = {bit for bit, entries in fp.provenance.items()
                  if any(2 in atoms for _c, _r, atoms in entries)}
        manual = sum(per_feature[b] for b in o_bits)
        assert abs(atomwise(fp, per_feature)[2] - manual) < 1e-12

    def test_length_mismatch(self):
        fp = ecfp(parse_smiles("C"), FingerprintConfig(radius=0, n_bits=32))
        with pytest.raises(ValueError):
            atomwise(fp, np.zeros(64))


class TestAttributeMolecule:
    def test_result_fields(self):
        g = parse_smiles("CCO")
        cfg = FingerprintConfig(radius=1, n_bits=256)
        fp = ecfp(g, cfg)
        net = DenseNet.initialize(256, (16,), 1, seed=4)
        result = attribute_molecule(net, fp, steps=200)
        assert result.per_feature.shape == (256,)
        assert result.per_atom.shape == (3,)
        assert result.steps == 200
        assert result.completeness_gap >= 0.0
        # completeness gap recomputed independently
        manual = abs(result.per_feature.sum()
                     - (net.predict(fp.as_float())[0]
                        - net.predict(np.zeros(256))[0]))
        assert abs(result.completeness_gap - manual) < 1e-12


class TestRendering:
    def test_json_roundtrip_bit_exact(self):
        g = parse_smiles("CC(=O)O")
        scores = np.array([0.123456789012345, -1.5, 0.0, 3.25e-17])
        doc = render_attribution(g, scores, fmt="json")
        _parsed, recovered = parse_attribution_json(doc)
        assert np.array_equal(recovered, scores)

    def test_json_structure(self):
        g = parse_smiles("CCO")
        doc = json.loads(render_attribution(g, np.zeros(3), fmt="json"))
        assert len(doc["atoms"]) == 3
        assert len(doc["bonds"]) == 2
        assert doc["normalization"]["max_abs"] == 0.0

    def test_dot_neutral_when_zero(self):
        g = parse_smiles("CCO")
        dot = render_attribution(g, np.zeros(3), fmt="dot")
        assert dot.count("#ffffff") == 3
        assert "a0 -- a1" in dot

    def test_dot_most_positive_is_reddest(self):
        g = parse_smiles("CCO")
        dot = render_attribution(g, np.array([0.5, 0.0, 1.0]), fmt="dot")
        lines = [ln for ln in dot.splitlines() if "fillcolor" in ln]
        assert '#b2182b' in lines[2]          # full saturation at max score
        assert '#ffffff' in lines[1]
        neg = render_attribution(g, np.array([-1.0, 0.0, 1.0]), fmt="dot")
        assert "#2166ac" in neg.splitlines()[3]

    def test_svg_contains_all_atoms_and_bonds(self):
        g = parse_smiles("c1ccccc1O")
        svg = render_attribution(g, np.linspace(-1, 1, 7), fmt="svg")
        assert svg.count("<circle") == 7
        assert svg.count("<line") == 7
        assert svg.startswith("<svg")

    def test_unknown_format(self):
        g = parse_smiles("C")
        with pytest.raises(ValueError):
            render_attribution(g, np.zeros(1), fmt="png")

    def test_length_check(self):
        g = parse_smiles("CC")
        with pytest.raises(ValueError):
            render_attribution(g, np.zeros(3), fmt="json")


class TestEndToEndToy:
    """A small trained model puts its mass on the alcohol group."""

    def test_alcohol_attribution_localizes(self):
        from toxlens.datasets import GeneratorConfig, generate_alcohol_set
        ls = generate_alcohol_set(GeneratorConfig(
            seed=77, n_positive=60, n_negative=120, n_acid=40))
        cfg = FingerprintConfig(radius=1, n_bits=256)
        from toxlens.fingerprint import feature_matrix
        fps, X = feature_matrix(ls.molecules, cfg)
        y = ls.labels[:, 0]
        result = train(X, y, TrainConfig(seed=5, hidden_dims=(64, 64),
                                         epochs=60, batch_size=32,
                                         learning_rate=3e-3))
        net = result.net
        correct_pos = [i for i in range(len(ls))
                       if y[i] == 1 and net.predict(X[i])[0] > 0.5]
        assert len(correct_pos) >= 40
        localized = 0
        for i in correct_pos[:25]:
            res = attribute_molecule(net, fps[i], steps=200)
            g = ls.molecules[i]
            top = int(np.argmax(res.per_atom))
            oxygens = {j for j, a in enumerate(g.atoms) if a.element == "O"}
            carbons = {nbr for o in oxygens for nbr in g.neighbors(o)}
            if top in oxygens | carbons:
                localized += 1
        assert localized / min(len(correct_pos), 25) >= 0.8
