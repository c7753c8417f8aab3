"""Command line front end for the whole pipeline.

Subcommands: gen-toy, gen-planted, train-dense, train-gcn, attribute,
correlate, extract, render. Every command writes a run manifest (full
resolved configuration, seeds, input digests, library version, wall-clock
time, output paths) next to its outputs; identical configurations over
identical inputs produce byte-identical artifacts.

Exit codes: 0 success, 1 user error (bad flags or files, message on
stderr), 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import attribution, datasets, densenet, gcn, modelio, unitscreen
from .chem import parse_smiles
from .fingerprint import FingerprintConfig, feature_matrix
from .patterns import parse_pattern


class UserError(Exception):
    """Bad input from the operator; maps to exit code 1."""


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_manifest(command: str, args: argparse.Namespace, inputs, outputs,
                    started: float, manifest_path: Path):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    manifest = {
        "command": command,
        "config": config,
        "seeds": [v for k, v in sorted(config.items()) if "seed" in k
                  and v is not None],
        "input_digests": {str(p): _sha256(Path(p)) for p in inputs},
        "library_version": __version__,
        "wall_clock_s": round(time.monotonic() - started, 3),
        "outputs": [str(p) for p in outputs],
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))


def _require_file(path: str, flag: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UserError(f"{flag}: file not found: {path}")
    return p


def _load_set(path: str, flag: str = "--data") -> datasets.LabeledSet:
    p = _require_file(path, flag)
    fmt = "csv" if p.suffix.lower() == ".csv" else "smiles-tsv"
    try:
        return datasets.load_table(p, fmt=fmt)
    except ValueError as exc:
        raise UserError(f"{flag}: {exc}") from exc


def _split_three(ls, args):
    tagged = datasets.split(ls, fractions=tuple(args.fractions),
                            seed=args.split_seed)
    return tagged.subset("train"), tagged.subset("valid"), tagged.subset("test")


def _fractions(text: str):
    parts = [float(x) for x in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("need train,valid,test fractions")
    return parts


def _int_tuple(text: str):
    return tuple(int(x) for x in text.split(",") if x)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _cmd_gen_toy(args) -> int:
    started = time.monotonic()
    if args.total is not None:
        # class ratio of the reference composition: 4.39% / 3.07% / rest
        n_pos = round(args.total * 1236 / 28147)
        n_acid = round(args.total * 864 / 28147)
        cfg = datasets.GeneratorConfig(
            seed=args.seed, n_positive=n_pos, n_acid=n_acid,
            n_negative=args.total - n_pos - n_acid,
            size_min=args.size_min, size_max=args.size_max,
            ring_probability=args.ring_prob)
    else:
        cfg = datasets.GeneratorConfig(
            seed=args.seed, n_positive=args.n_positive,
            n_negative=args.n_negative, n_acid=args.n_acid,
            size_min=args.size_min, size_max=args.size_max,
            ring_probability=args.ring_prob)
    ls = datasets.generate_alcohol_set(cfg)
    out = Path(args.out)
    datasets.save_table(ls, out)
    _write_manifest("gen-toy", args, [], [out], started,
                    out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {len(ls)} molecules to {out}")
    return 0


def _cmd_gen_planted(args) -> int:
    started = time.monotonic()
    cfg = datasets.GeneratorConfig(
        seed=args.seed, n_positive=args.n_positive,
        n_negative=args.n_negative, n_acid=0,
        size_min=args.size_min, size_max=args.size_max,
        ring_probability=args.ring_prob,
        planted=tuple(args.patterns.split(",")),
        decoys=tuple(d for d in args.decoys.split(",") if d))
    ls = datasets.generate_planted_set(cfg)
    out = Path(args.out)
    datasets.save_table(ls, out)
    _write_manifest("gen-planted", args, [], [out], started,
                    out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {len(ls)} molecules to {out}")
    return 0


def _cmd_train_dense(args) -> int:
    started = time.monotonic()
    ls = _load_set(args.data)
    train, valid, test = _split_three(ls, args)
    fp_cfg = FingerprintConfig(radius=args.radius, n_bits=args.n_bits)
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size,
                 "learning_rate": args.lr, "optimizer": args.optimizer}
    if args.patience is not None:
        overrides["patience"] = args.patience
    if args.hidden is not None:
        cfg = densenet.TrainConfig(seed=args.seed, hidden_dims=args.hidden,
                                   **overrides)
    else:
        cfg = densenet.preset_config(args.preset, seed=args.seed, **overrides)

    _, x_train = feature_matrix(train.molecules, fp_cfg)
    _, x_valid = feature_matrix(valid.molecules, fp_cfg)
    result = densenet.train(x_train, train.y, cfg, mask=train.mask,
                            x_valid=x_valid, y_valid=valid.y,
                            mask_valid=valid.mask)

    out = Path(args.out)
    meta = {"seed": args.seed, "tasks": ls.task_names,
            "fingerprint": {"radius": args.radius, "n_bits": args.n_bits},
            "preset": None if args.hidden else args.preset,
            "train_config": {k: list(v) if isinstance(v, tuple) else v
                             for k, v in vars(cfg).items()}}
    modelio.save_model(result.net, out, meta)
    log_path = out.with_suffix(out.suffix + ".log.tsv")
    _write_train_log(log_path, result.history, ls.task_names)
    _write_manifest("train-dense", args, [args.data], [out, log_path],
                    started, out.with_suffix(out.suffix + ".manifest.json"))
    _, x_test = feature_matrix(test.molecules, fp_cfg)
    test_auc = densenet.evaluate_auc(result.net, x_test, test.y, test.mask)
    print(f"model written to {out}; test AUC per task: "
          f"{np.array2string(test_auc, precision=4)}")
    return 0


def _cmd_train_gcn(args) -> int:
    started = time.monotonic()
    ls = _load_set(args.data)
    train, valid, test = _split_three(ls, args)
    overrides = {"epochs": args.epochs, "batch_size": args.batch_size,
                 "learning_rate": args.lr, "optimizer": args.optimizer,
                 "pool": args.pool, "skip_connections": args.skip}
    if args.patience is not None:
        overrides["patience"] = args.patience
    if args.conv_filters is not None:
        overrides["conv_filters"] = args.conv_filters
    if args.head_hidden is not None:
        overrides["head_hidden"] = args.head_hidden
    cfg = gcn.gcn_preset_config(args.preset, seed=args.seed, **overrides)

    result = gcn.train_gcn(train.molecules, train.y, cfg, mask=train.mask,
                           valid_graphs=valid.molecules, y_valid=valid.y,
                           mask_valid=valid.mask)
    out = Path(args.out)
    meta = {"seed": args.seed, "tasks": ls.task_names, "preset": args.preset,
            "train_config": {k: list(v) if isinstance(v, tuple) else v
                             for k, v in vars(cfg).items()}}
    modelio.save_model(result.net, out, meta)
    log_path = out.with_suffix(out.suffix + ".log.tsv")
    _write_train_log(log_path, result.history, ls.task_names)
    _write_manifest("train-gcn", args, [args.data], [out, log_path],
                    started, out.with_suffix(out.suffix + ".manifest.json"))
    test_auc = gcn._gcn_auc(result.net, test.molecules, test.y, test.mask)
    print(f"model written to {out}; test AUC per task: "
          f"{np.array2string(test_auc, precision=4)}")
    return 0


def _write_train_log(path: Path, history, task_names):
    lines = ["epoch\tloss\t" + "\t".join(f"val_auc_{t}" for t in task_names)]
    for record in history:
        aucs = record.get("val_auc")
        cells = [str(record["epoch"]), f"{record['loss']:.6f}"]
        if aucs is not None:
            cells += [f"{a:.6f}" if not np.isnan(a) else "nan" for a in aucs]
        lines.append("\t".join(cells))
    path.write_text("\n".join(lines) + "\n")


def _cmd_attribute(args) -> int:
    started = time.monotonic()
    model_path = _require_file(args.model, "--model")
    try:
        net, meta = modelio.load_model(model_path)
    except modelio.ModelFormatError as exc:
        raise UserError(f"--model: {exc}") from exc
    if not isinstance(net, densenet.DenseNet):
        raise UserError("--model: attribution requires a dense model")
    fp_meta = meta.get("fingerprint", {})
    fp_cfg = FingerprintConfig(radius=fp_meta.get("radius", 1),
                               n_bits=fp_meta.get("n_bits", net.input_dim))

    smiles_path = _require_file(args.smiles_file, "--smiles-file")
    lines = [ln.split("\t")[0].strip()
             for ln in smiles_path.read_text().splitlines() if ln.strip()]
    if lines and lines[0].lower() == "smiles":
        lines = lines[1:]
    if not lines:
        raise UserError("--smiles-file: no molecules")
    if not 0 <= args.task < net.n_tasks:
        raise UserError(f"--task: index {args.task} out of range "
                        f"({net.n_tasks} tasks)")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    ext = {"json": "json", "dot": "dot", "svg": "svg"}[args.out_format]
    output_mode = "identity" if args.logit else "sigmoid"
    for i, text in enumerate(lines):
        try:
            g = parse_smiles(text)
        except ValueError as exc:
            raise UserError(f"--smiles-file line {i + 1}: {exc}") from exc
        fps, _ = feature_matrix([g], fp_cfg)
        result = attribution.attribute_molecule(
            net, fps[0], task=args.task, steps=args.steps, output=output_mode)
        doc = attribution.render_attribution(g, result.per_atom,
                                             fmt=args.out_format)
        path = out_dir / f"mol_{i:04d}.{ext}"
        path.write_text(doc)
        outputs.append(path)
    _write_manifest("attribute", args, [args.model, args.smiles_file],
                    outputs, started, out_dir / "manifest.json")
    print(f"wrote {len(outputs)} attribution files to {out_dir}")
    return 0


def _cmd_correlate(args) -> int:
    started = time.monotonic()
    model_path = _require_file(args.model, "--model")
    try:
        net, meta = modelio.load_model(model_path)
    except modelio.ModelFormatError as exc:
        raise UserError(f"--model: {exc}") from exc
    if not isinstance(net, densenet.DenseNet):
        raise UserError("--model: correlation screening requires a dense model")
    ls = _load_set(args.data)
    patterns_path = _require_file(args.patterns, "--patterns")
    pattern_ids, patterns = [], []
    for line_no, line in enumerate(patterns_path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        text = parts[0]
        pid = parts[1] if len(parts) > 1 else text
        try:
            patterns.append(parse_pattern(text))
        except ValueError as exc:
            raise UserError(f"--patterns line {line_no}: {exc}") from exc
        pattern_ids.append(pid)
    if not patterns:
        raise UserError("--patterns: no patterns")

    fp_meta = meta.get("fingerprint", {})
    fp_cfg = FingerprintConfig(radius=fp_meta.get("radius", 1),
                               n_bits=fp_meta.get("n_bits", net.input_dim))
    report = unitscreen.screen(net, ls.molecules, patterns, fp_cfg,
                               alpha=args.alpha, min_support=args.min_support,
                               pattern_ids=pattern_ids)

    assoc_path = Path(args.out_assoc)
    lines = ["layer\tunit\tpattern\tU\tp_raw\tp_adjusted\tdirection"]
    for a in report.associations:
        lines.append(f"{a.layer}\t{a.unit}\t{a.pattern_id}\t{a.u_stat:g}\t"
                     f"{a.p_raw:.6g}\t{a.p_adjusted:.6g}\t{a.direction}")
    assoc_path.write_text("\n".join(lines) + "\n")

    summary_path = Path(args.out_summary)
    lines = ["layer\tfirst_discovered\tmean_pattern_size\tse_pattern_size"]
    for d in report.discovery:
        mean = "" if d.mean_pattern_size is None else f"{d.mean_pattern_size:.4f}"
        se = "" if d.se_pattern_size is None else f"{d.se_pattern_size:.4f}"
        lines.append(f"{d.layer}\t{d.first_discovered}\t{mean}\t{se}")
    summary_path.write_text("\n".join(lines) + "\n")

    _write_manifest("correlate", args, [args.model, args.data, args.patterns],
                    [assoc_path, summary_path], started,
                    assoc_path.with_suffix(assoc_path.suffix + ".manifest.json"))
    print(f"{len(report.associations)} significant associations "
          f"({report.n_tests} tests, alpha={args.alpha}); "
          f"dropped {len(report.dropped_patterns)} low-support patterns")
    return 0


def _cmd_extract(args) -> int:
    started = time.monotonic()
    model_path = _require_file(args.model, "--model")
    try:
        net, _meta = modelio.load_model(model_path)
    except modelio.ModelFormatError as exc:
        raise UserError(f"--model: {exc}") from exc
    if not isinstance(net, gcn.GraphConvNet):
        raise UserError("--model: extraction requires a graph-convolution model")
    ls = _load_set(args.data)
    _, valid, test = _split_three(ls, args)
    if not 0 <= args.task < net.head.n_tasks:
        raise UserError(f"--task: index {args.task} out of range")
    fragments = gcn.extract_top_substructures(net, valid, test,
                                              task=args.task, k=args.top)
    out = Path(args.out)
    lines = ["fragment\tscore\tppv\tsupport\tflag"]
    for f in fragments:
        ppv = "" if f.ppv is None else f"{f.ppv:.4f}"
        lines.append(f"{f.smiles}\t{f.score:.6f}\t{ppv}\t{f.support}\t{f.flag}")
    out.write_text("\n".join(lines) + "\n")
    _write_manifest("extract", args, [args.model, args.data], [out], started,
                    out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {len(fragments)} fragments to {out}")
    return 0


def _cmd_render(args) -> int:
    started = time.monotonic()
    if (args.attribution is None) == (args.smiles is None):
        raise UserError("render needs exactly one of --attribution or --smiles")
    if args.attribution:
        path = _require_file(args.attribution, "--attribution")
        doc, scores = attribution.parse_attribution_json(path.read_text())
        from .chem import make_graph
        atom_specs = [(a["element"], a["aromatic"], a["charge"])
                      for a in doc["atoms"]]
        bond_specs = [(b["a"], b["b"], b["order"]) for b in doc["bonds"]]
        g = make_graph(atom_specs, bond_specs)
        inputs = [args.attribution]
    else:
        try:
            g = parse_smiles(args.smiles)
        except ValueError as exc:
            raise UserError(f"--smiles: {exc}") from exc
        scores = np.zeros(g.n_atoms)
        inputs = []
    doc = attribution.render_attribution(g, scores, fmt=args.format)
    out = Path(args.out)
    out.write_text(doc)
    _write_manifest("render", args, inputs, [out], started,
                    out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {out}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="toxlens",
        description="Train small molecular classifiers and extract "
                    "substructure-level explanations.")
    parser.add_argument("--config", help="key=value config file; "
                        "explicit flags win over file entries")
    parser.add_argument("--threads", type=int, default=1,
                        help="cap on worker threads (recorded in the manifest)")
    sub = parser.add_subparsers(dest="command", metavar="command")

    def common_gen(p):
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--size-min", type=int, default=4)
        p.add_argument("--size-max", type=int, default=12)
        p.add_argument("--ring-prob", type=float, default=0.2)

    p = sub.add_parser("gen-toy", help="generate the alcohol toy set")
    common_gen(p)
    p.add_argument("--total", type=int, default=5000,
                   help="total size at the reference class ratio")
    p.add_argument("--n-positive", type=int)
    p.add_argument("--n-negative", type=int)
    p.add_argument("--n-acid", type=int)
    p.set_defaults(func=_cmd_gen_toy)

    p = sub.add_parser("gen-planted", help="generate a planted-pattern set")
    common_gen(p)
    p.add_argument("--n-positive", type=int, default=500)
    p.add_argument("--n-negative", type=int, default=4500)
    p.add_argument("--patterns", default="azo,nitro",
                   help=f"comma list from {sorted(datasets.FRAGMENTS)}")
    p.add_argument("--decoys", default="amine")
    p.set_defaults(func=_cmd_gen_planted)

    def common_train(p):
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, required=True)
        p.add_argument("--epochs", type=int, default=30)
        p.add_argument("--batch-size", type=int, default=128)
        p.add_argument("--lr", type=float, default=1e-3)
        p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
        p.add_argument("--patience", type=int)
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--fractions", type=_fractions, default=[0.8, 0.1, 0.1])

    p = sub.add_parser("train-dense", help="train a descriptor model")
    common_train(p)
    p.add_argument("--preset", choices=sorted(densenet.PRESETS),
                   default="tox21-4x1024")
    p.add_argument("--hidden", type=_int_tuple,
                   help="explicit hidden widths, overrides --preset")
    p.add_argument("--radius", type=int, default=1)
    p.add_argument("--n-bits", type=int, default=1024)
    p.set_defaults(func=_cmd_train_dense)

    p = sub.add_parser("train-gcn", help="train a graph-convolution model")
    common_train(p)
    p.add_argument("--preset", choices=sorted(gcn.GCN_PRESETS),
                   default="ames-gcn-3x1024-fc512")
    p.add_argument("--conv-filters", type=_int_tuple,
                   help="override preset filter widths, e.g. 128,128,128")
    p.add_argument("--head-hidden", type=_int_tuple)
    p.add_argument("--pool", choices=("max", "sum", "mean"), default="max")
    p.add_argument("--skip", action="store_true",
                   help="concatenate per-layer molecule vectors")
    p.set_defaults(func=_cmd_train_gcn)

    p = sub.add_parser("attribute", help="per-atom attributions")
    p.add_argument("--model", required=True)
    p.add_argument("--smiles-file", required=True)
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--steps", type=int, default=1000)
    p.add_argument("--out-format", choices=("json", "dot", "svg"),
                   default="json")
    p.add_argument("--out-dir", default="attributions")
    p.add_argument("--logit", action="store_true",
                   help="attribute the logit instead of the probability")
    p.set_defaults(func=_cmd_attribute)

    p = sub.add_parser("correlate", help="hidden-unit / pattern screening")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--patterns", required=True,
                   help="file: one pattern per line, optional tab-separated id")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--min-support", type=int, default=20)
    p.add_argument("--out-assoc", default="associations.tsv")
    p.add_argument("--out-summary", default="layer_summary.tsv")
    p.set_defaults(func=_cmd_correlate)

    p = sub.add_parser("extract", help="rank indicative substructures")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--task", type=int, default=0)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--fractions", type=_fractions, default=[0.8, 0.1, 0.1])
    p.add_argument("--out", default="fragments.tsv")
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("render", help="render a molecule or attribution file")
    p.add_argument("--attribution", help="json file produced by 'attribute'")
    p.add_argument("--smiles", help="render a molecule with neutral colors")
    p.add_argument("--format", choices=("json", "dot", "svg"), default="svg")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    return parser


def _apply_config_file(parser, argv):
    """Pre-scan for --config and install its entries as defaults."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise UserError("--config needs a file path")
    path = _require_file(argv[idx + 1], "--config")
    defaults = {}
    for line_no, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UserError(f"--config line {line_no}: expected key=value")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        value = value.strip()
        for cast in (int, float):
            try:
                value = cast(value)
                break
            except ValueError:
                continue
        else:
            if value.lower() in ("true", "false"):
                value = value.lower() == "true"
        defaults[key] = value
    for subparser in parser._subparsers._group_actions[0].choices.values():
        known = {a.dest for a in subparser._actions}
        subparser.set_defaults(
            **{k: v for k, v in defaults.items() if k in known})
        for action in subparser._actions:
            if action.required and action.dest in defaults:
                action.required = False
    return argv


def dispatch(argv) -> int:
    parser = build_parser()
    try:
        argv = _apply_config_file(parser, list(argv))
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return 0 if exc.code in (0, None) else 1
        if not getattr(args, "command", None):
            parser.print_usage(sys.stderr)
            return 1
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - invariant violations map to 2
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
