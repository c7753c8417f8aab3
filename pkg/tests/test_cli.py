"""Command line behavior: exit codes, artifacts, manifest reproducibility."""

import json
from pathlib import Path

import numpy as np
import pytest

from toxlens.cli import dispatch


def run(tmp_path, *argv):
    import os
    old = os.getcwd()
    os.chdir(tmp_path)
    try:
        return dispatch(list(argv))
    finally:
        os.chdir(old)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli")
    code = run(path, "gen-toy", "--seed", "7", "--out", "toy.tsv",
               "--total", "120")
    assert code == 0
    return path


class TestGenerate:
    def test_gen_toy_reproducible_bytes(self, workdir):
        assert run(workdir, "gen-toy", "--seed", "7", "--out", "toy_b.tsv",
                   "--total", "120") == 0
        a = (workdir / "toy.tsv").read_bytes()
        b = (workdir / "toy_b.tsv").read_bytes()
        assert a == b

    def test_manifest_written(self, workdir):
        manifest = json.loads((workdir / "toy.tsv.manifest.json").read_text())
        assert manifest["command"] == "gen-toy"
        assert manifest["seeds"] == [7]
        assert manifest["outputs"] == ["toy.tsv"]
        assert "library_version" in manifest

    def test_gen_planted(self, workdir):
        code = run(workdir, "gen-planted", "--seed", "3", "--out",
                   "planted.tsv", "--n-positive", "15", "--n-negative", "15",
                   "--patterns", "azo")
        assert code == 0
        lines = (workdir / "planted.tsv").read_text().splitlines()
        assert lines[0] == "smiles\tplanted"
        assert len(lines) == 31

    def test_explicit_counts(self, workdir):
        code = run(workdir, "gen-toy", "--seed", "1", "--out", "c.tsv",
                   "--total", "30")
        assert code == 0
        assert len((workdir / "c.tsv").read_text().splitlines()) == 31


class TestErrors:
    def test_unknown_subcommand(self, tmp_path, capsys):
        assert run(tmp_path, "frobnicate") == 1

    def test_no_subcommand(self, tmp_path):
        assert run(tmp_path) == 1

    def test_missing_required_flag_names_it(self, tmp_path, capsys):
        code = run(tmp_path, "attribute", "--smiles-file", "x.tsv")
        captured = capsys.readouterr()
        assert code == 1
        assert "--model" in captured.err

    def test_missing_file(self, tmp_path, capsys):
        code = run(tmp_path, "attribute", "--model", "none.json",
                   "--smiles-file", "none.tsv")
        assert code == 1
        assert "not found" in capsys.readouterr().err

    def test_help_exits_zero(self, tmp_path):
        assert run(tmp_path, "--help") == 0
        assert run(tmp_path, "train-dense", "--help") == 0


@pytest.fixture(scope="module")
def trained(workdir):
    code = run(workdir, "train-dense", "--data", "toy.tsv", "--out",
               "model.json", "--seed", "11", "--hidden", "32,32",
               "--epochs", "12", "--n-bits", "256", "--batch-size", "32",
               "--lr", "0.003")
    assert code == 0
    return workdir


class TestTrainDense:
    def test_artifacts_exist(self, trained):
        assert (trained / "model.json").is_file()
        assert (trained / "model.json.log.tsv").is_file()
        manifest = json.loads((trained / "model.json.manifest.json").read_text())
        assert manifest["command"] == "train-dense"
        assert "toy.tsv" in manifest["input_digests"]
        log = (trained / "model.json.log.tsv").read_text().splitlines()
        assert log[0].startswith("epoch\tloss\tval_auc_")
        assert len(log) == 13

    def test_model_reproducible(self, trained):
        code = run(trained, "train-dense", "--data", "toy.tsv", "--out",
                   "model_b.json", "--seed", "11", "--hidden", "32,32",
                   "--epochs", "12", "--n-bits", "256", "--batch-size", "32",
                   "--lr", "0.003")
        assert code == 0
        assert (trained / "model.json").read_bytes() == \
            (trained / "model_b.json").read_bytes()

    def test_model_loads(self, trained):
        from toxlens.modelio import load_model
        net, meta = load_model(trained / "model.json")
        assert meta["fingerprint"]["n_bits"] == 256
        assert net.input_dim == 256


class TestAttribute:
    def test_json_outputs(self, trained):
        (trained / "three.tsv").write_text("smiles\talcohol\nCCO\t1\nCC\t0\nCCC\t0\n")
        code = run(trained, "attribute", "--model", "model.json",
                   "--smiles-file", "three.tsv", "--task", "0",
                   "--steps", "64", "--out-dir", "attr", "--out-format", "json")
        assert code == 0
        files = sorted((trained / "attr").glob("mol_*.json"))
        assert len(files) == 3
        doc = json.loads(files[0].read_text())
        assert len(doc["atoms"]) == 3
        assert (trained / "attr" / "manifest.json").is_file()

    def test_task_out_of_range(self, trained, capsys):
        code = run(trained, "attribute", "--model", "model.json",
                   "--smiles-file", "three.tsv", "--task", "5",
                   "--out-dir", "attr2")
        assert code == 1
        assert "--task" in capsys.readouterr().err

    def test_svg_format(self, trained):
        code = run(trained, "attribute", "--model", "model.json",
                   "--smiles-file", "three.tsv", "--steps", "16",
                   "--out-dir", "attr_svg", "--out-format", "svg")
        assert code == 0
        svg = next((trained / "attr_svg").glob("mol_*.svg")).read_text()
        assert svg.startswith("<svg")


class TestCorrelate:
    def test_outputs(self, trained):
        (trained / "patterns.tsv").write_text(
            "[CX4][OH]\talcohol\nC(=O)[OH]\tacid\nN\tamine\n")
        code = run(trained, "correlate", "--model", "model.json",
                   "--data", "toy.tsv", "--patterns", "patterns.tsv",
                   "--min-support", "10",
                   "--out-assoc", "assoc.tsv", "--out-summary", "summary.tsv")
        assert code == 0
        assoc = (trained / "assoc.tsv").read_text().splitlines()
        assert assoc[0] == "layer\tunit\tpattern\tU\tp_raw\tp_adjusted\tdirection"
        summary = (trained / "summary.tsv").read_text().splitlines()
        assert summary[0].startswith("layer\tfirst_discovered")
        assert len(summary) == 3  # two hidden layers

    def test_bad_pattern_file(self, trained, capsys):
        (trained / "badpat.tsv").write_text("C@C\tchiral\n")
        code = run(trained, "correlate", "--model", "model.json",
                   "--data", "toy.tsv", "--patterns", "badpat.tsv")
        assert code == 1
        assert "unsupported" in capsys.readouterr().err


class TestExtractAndRender:
    def test_extract_pipeline(self, workdir):
        code = run(workdir, "train-gcn", "--data", "planted.tsv", "--out",
                   "gcn.json", "--seed", "5", "--conv-filters", "12,12",
                   "--head-hidden", "8", "--epochs", "15", "--batch-size",
                   "8", "--lr", "0.005", "--fractions", "0.6,0.2,0.2")
        assert code == 0
        code = run(workdir, "extract", "--model", "gcn.json", "--data",
                   "planted.tsv", "--top", "5", "--out", "frags.tsv",
                   "--fractions", "0.6,0.2,0.2")
        assert code == 0
        lines = (workdir / "frags.tsv").read_text().splitlines()
        assert lines[0] == "fragment\tscore\tppv\tsupport\tflag"
        assert len(lines) == 6

    def test_render_smiles(self, tmp_path):
        code = run(tmp_path, "render", "--smiles", "c1ccccc1O",
                   "--format", "dot", "--out", "mol.dot")
        assert code == 0
        assert "graph molecule" in (tmp_path / "mol.dot").read_text()

    def test_render_attribution_file(self, trained):
        attr = next((trained / "attr").glob("mol_*.json"))
        code = run(trained, "render", "--attribution", str(attr),
                   "--format", "svg", "--out", "re.svg")
        assert code == 0
        assert (trained / "re.svg").read_text().startswith("<svg")

    def test_render_needs_exactly_one_source(self, tmp_path, capsys):
        assert run(tmp_path, "render", "--out", "x.svg") == 1
        assert run(tmp_path, "render", "--smiles", "C", "--attribution",
                   "a.json", "--out", "x.svg") == 1


class TestConfigFile:
    def test_config_defaults_and_flag_priority(self, tmp_path):
        (tmp_path / "conf.ini").write_text("seed=9\ntotal=40\n")
        code = run(tmp_path, "--config", "conf.ini", "gen-toy",
                   "--out", "a.tsv")
        assert code == 0
        assert len((tmp_path / "a.tsv").read_text().splitlines()) == 41
        # explicit flag wins over the file
        code = run(tmp_path, "--config", "conf.ini", "gen-toy",
                   "--out", "b.tsv", "--total", "20")
        assert code == 0
        assert len((tmp_path / "b.tsv").read_text().splitlines()) == 21

    def test_malformed_config(self, tmp_path, capsys):
        (tmp_path / "bad.ini").write_text("this is not key value\n")
        assert run(tmp_path, "--config", "bad.ini", "gen-toy", "--seed", "1",
                   "--out", "x.tsv") == 1
