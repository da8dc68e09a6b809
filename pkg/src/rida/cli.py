"""Command-line front end.

Subcommands::

    rida mask       write a missingness mask for a dataset
    rida attack     poison a dataset and write the flip diff and perturbed edges
    rida eval       compare a clean and an attacked graph over seeded GCN runs
    rida reproduce  mask, attack and evaluate one named dataset with baselines
    rida heatmap    export the log-scaled propagation matrix as CSV
    rida prepare    convert raw LINQS / Planetoid files into the TSV layout

Every option can also come from a flat ``key = value`` file passed with
``--config``.  Keys are option names without the leading dashes; command-line
flags win over the file.  Each run writes an echo of its resolved options in
the same format.

Exit codes: 0 success, 1 I/O error, 2 invalid input, 3 numerical divergence.
"""

import argparse
import json
import logging
from pathlib import Path
import sys

from . import __version__
from .datasets import convert, read_linqs, read_planetoid
from .eval import (
    ExperimentConfig,
    evaluate_attacked,
    export_propagation_heatmap,
    fit_pseudo_labels,
    heatmap_matrix,
    prepare,
    rida_attack,
    run_experiment,
)
from .exceptions import DivergenceError, RidaError, ValidationError
from .graphio import load_dataset, read_edges, write_edges
from .haa import read_diff, write_diff
from .missingness import MissingnessSpec, apply_missingness, save_mask

log = logging.getLogger("rida")

DATASETS = ("cora", "citeseer", "cora-ml")

EXIT_OK, EXIT_IO, EXIT_INVALID, EXIT_DIVERGED = 0, 1, 2, 3


def dataset_defaults(name):
    """Propagation defaults that depend on the dataset name."""
    name = (name or "").lower()
    return {
        "K": 8 if name == "citeseer" else 16,
        "delta": 0.2 if name == "cora-ml" else 0.1,
    }


# --------------------------------------------------------------------------
# argument types


def _fraction(low_open=False, high_open=False):
    lo = "(" if low_open else "["
    hi = ")" if high_open else "]"

    def parse(text):
        try:
            value = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        ok = (value > 0 if low_open else value >= 0) and (value < 1 if high_open else value <= 1)
        if not ok:
            raise argparse.ArgumentTypeError(f"must lie in {lo}0, 1{hi}, got {text}")
        return value

    return parse


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {text}")
    return value


def _seed(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer seed: {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError(f"seeds must be non-negative, got {text}")
    return value


def _positive_real(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not value > 0 or value == float("inf"):
        raise argparse.ArgumentTypeError(f"must be a positive finite number, got {text}")
    return value


_BOOL = {"true": True, "yes": True, "1": True, "on": True,
         "false": False, "no": False, "0": False, "off": False}


# --------------------------------------------------------------------------
# config files


def read_config(path):
    """Parse a flat ``key = value`` file.  ``#`` starts a comment."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip().lstrip("-").replace("-", "_")
            if not key:
                raise ValidationError(f"{path}:{lineno}: empty key")
            out[key] = value.strip()
    return out


def write_config(path, options):
    """Write resolved options in the format :func:`read_config` accepts."""
    lines = []
    for key in sorted(options):
        value = options[key]
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key.replace('_', '-')} = {value}\n")
    Path(path).write_text("".join(lines), encoding="utf-8")


def _apply_config(parser, values):
    """Install config-file values as parser defaults, typed like the flags."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, text in values.items():
        action = actions.get(key)
        if action is None:
            raise ValidationError(f"unknown option in config file: {key}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            flag = _BOOL.get(text.lower())
            if flag is None:
                raise ValidationError(f"{key}: expected a boolean, got {text!r}")
            defaults[key] = flag if isinstance(action, argparse._StoreTrueAction) else not flag
        else:
            # string defaults are run through the action's type on parse
            defaults[key] = text
    parser.set_defaults(**defaults)


# --------------------------------------------------------------------------
# parser


def _add_data(p):
    p.add_argument("--data", help="dataset directory with edges/attrs/labels.tsv (required)")


def _add_missingness(p):
    p.add_argument("--alpha", type=_fraction(), default=0.3, help="fraction of attributes removed per affected vertex")
    p.add_argument("--beta", type=_fraction(), default=0.7, help="fraction of affected vertices")
    p.add_argument("--mask-seed", type=_seed, default=0)


def _add_attack(p):
    p.add_argument("--mask", help="read the missingness mask from this file instead of generating it")
    p.add_argument("--label-fraction", type=_fraction(True, True), default=0.1)
    p.add_argument("--split-seed", type=_seed, default=0)
    p.add_argument("--K", type=_positive_int, default=None, help="propagation depth (16; 8 for citeseer)")
    p.add_argument("--delta", type=_fraction(True, False), default=None, help="initial decay (0.1; 0.2 for cora-ml)")
    p.add_argument("--gamma", type=_fraction(False, True), default=0.01)
    p.add_argument("--omega", type=_fraction(), default=0.9)
    p.add_argument("--no-global", dest="no_global", action="store_true")
    p.add_argument("--no-local", dest="no_local", action="store_true")
    p.add_argument("--no-bfp", dest="no_bfp", action="store_true")
    p.add_argument("--epsilon", type=_fraction(True, True), default=0.05, help="flip budget as a fraction of |E|")
    p.add_argument("--eta", type=_fraction(), default=0.05)
    p.add_argument("--surrogate-epochs", type=_positive_int, default=100)
    p.add_argument("--surrogate-lr", type=_positive_real, default=0.01)
    p.add_argument("--hidden", type=_positive_int, default=16)
    p.add_argument("--warm-start", action="store_true")
    p.add_argument("--attack-seed", type=_seed, default=0)


def _add_eval(p):
    p.add_argument("--runs", type=_positive_int, default=10)
    p.add_argument("--target-seed", type=_seed, default=0)
    p.add_argument("--target-epochs", type=_positive_int, default=200)
    p.add_argument("--target-lr", type=_positive_real, default=0.005)
    p.add_argument("--target-features", choices=("incomplete", "complete"), default="incomplete")


def build_parser():
    parser = argparse.ArgumentParser(prog="rida", description=__doc__.split("\n", 1)[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def command(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="flat 'key = value' option file")
        p.add_argument("-v", "--verbose", action="store_true")
        return p

    p = command("mask", "write a missingness mask")
    _add_data(p)
    _add_missingness(p)
    p.add_argument("--out", help="mask file to write (required)")
    p.set_defaults(func=cmd_mask)

    p = command("attack", "poison a dataset")
    _add_data(p)
    _add_missingness(p)
    _add_attack(p)
    p.add_argument("--out", help="output directory (required)")
    p.set_defaults(func=cmd_attack)

    p = command("eval", "evaluate an attacked graph")
    _add_data(p)
    _add_missingness(p)
    _add_attack(p)
    _add_eval(p)
    p.add_argument("--attacked", help="perturbed edges.tsv")
    p.add_argument("--diff", help="flip diff to replay on the clean graph")
    p.add_argument("--name", default="rida", help="attack name used in the report")
    p.add_argument("--out", help="output directory (required)")
    p.set_defaults(func=cmd_eval)

    p = command("reproduce", "mask, attack and evaluate a named dataset")
    p.add_argument("--dataset", help=f"one of {', '.join(DATASETS)}")
    p.add_argument("--data-root", default="data")
    _add_missingness(p)
    _add_attack(p)
    _add_eval(p)
    p.add_argument("--reattack", action="store_true", help="recompute every attack for each run")
    p.add_argument("--baselines", default="dice,mean", help="comma-separated subset of dice,mean")
    p.add_argument("--out", help="output directory (required)")
    p.set_defaults(func=cmd_reproduce)

    p = command("heatmap", "export the propagation heatmap")
    _add_data(p)
    p.add_argument("--K", type=_positive_int, default=None)
    p.add_argument("--delta", type=_fraction(True, False), default=None)
    p.add_argument("--gamma", type=_fraction(False, True), default=0.01)
    p.add_argument("--out", help="CSV file to write (required)")
    p.set_defaults(func=cmd_heatmap)

    p = command("prepare", "convert raw citation data")
    p.add_argument("--format", choices=("linqs", "planetoid"))
    p.add_argument("--raw", help="raw file directory")
    p.add_argument("--name", help="dataset file prefix, e.g. cora")
    p.add_argument("--out", help="dataset directory to write (required)")
    p.set_defaults(func=cmd_prepare)
    return parser, sub


# checked after the config file is merged, so either source may supply them
REQUIRED = {
    "mask": ("data", "out"),
    "attack": ("data", "out"),
    "eval": ("data", "out"),
    "reproduce": ("dataset", "out"),
    "heatmap": ("data", "out"),
    "prepare": ("format", "raw", "name", "out"),
}


def parse_args(argv=None):
    parser, sub = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        child = sub.choices[args.command]
        _apply_config(child, read_config(args.config))
        args = parser.parse_args(argv)
    missing = [k for k in REQUIRED[args.command] if getattr(args, k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ValidationError(f"{args.command}: missing required option(s) {flags}")
    return args


# --------------------------------------------------------------------------
# commands


def _echo(args, path):
    skip = {"func", "config", "verbose", "command"}
    write_config(path, {k: v for k, v in vars(args).items() if k not in skip})


def _resolve_defaults(args, name):
    for key, value in dataset_defaults(name).items():
        if getattr(args, key, None) is None:
            setattr(args, key, value)


def _experiment_config(args, dataset):
    baselines = getattr(args, "baselines", "")
    baselines = tuple(b.strip() for b in baselines.split(",") if b.strip())
    return ExperimentConfig(
        dataset=str(dataset), alpha=args.alpha, beta=args.beta, epsilon=args.epsilon,
        K=args.K, delta=args.delta, gamma=args.gamma, eta=args.eta, omega=args.omega,
        label_fraction=args.label_fraction,
        use_global_attention=not args.no_global, use_local_attention=not args.no_local,
        use_bfp=not args.no_bfp, surrogate_epochs=args.surrogate_epochs,
        surrogate_lr=args.surrogate_lr, hidden=args.hidden,
        target_lr=getattr(args, "target_lr", 0.005),
        target_epochs=getattr(args, "target_epochs", 200),
        runs=getattr(args, "runs", 10),
        mask_seed=args.mask_seed, split_seed=args.split_seed,
        attack_seed=args.attack_seed, target_seed=getattr(args, "target_seed", 0),
        warm_start=args.warm_start, reattack=getattr(args, "reattack", False),
        baselines=baselines, target_features=getattr(args, "target_features", "incomplete"),
        mask_path=args.mask,
    )


def cmd_mask(args):
    _, attrs, _ = load_dataset(args.data)
    incomplete = apply_missingness(attrs, MissingnessSpec(args.alpha, args.beta, args.mask_seed))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_mask(incomplete, out, allow_empty=True)
    _echo(args, out.with_name(out.name + ".config"))
    log.info("wrote %d missing entries to %s", incomplete.num_missing(), out)
    return EXIT_OK


def cmd_attack(args):
    _resolve_defaults(args, Path(args.data).name)
    cfg = _experiment_config(args, args.data)
    prep = prepare(cfg)
    pseudo = fit_pseudo_labels(prep, cfg).predict()
    state, graph = rida_attack(prep, cfg, pseudo)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_diff(out / "diff.txt", state.flips)
    write_edges(out / "edges.tsv", graph)
    _echo(args, out / "config.txt")
    summary = {
        "budget": state.budget_total,
        "flips": state.budget_used,
        "warnings": prep.warnings + list(state.warnings),
    }
    (out / "attack.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    for w in summary["warnings"]:
        log.warning("%s", w)
    log.info("applied %d of %d flips", state.budget_used, state.budget_total)
    return EXIT_OK


def cmd_eval(args):
    if bool(args.attacked) == bool(args.diff):
        raise ValidationError("give exactly one of --attacked or --diff")
    _resolve_defaults(args, Path(args.data).name)
    cfg = _experiment_config(args, args.data)
    if args.diff:
        item = read_diff(args.diff)
    else:
        clean, _, _ = load_dataset(args.data)
        item = read_edges(args.attacked, clean.n)
    out = Path(args.out)
    report = evaluate_attacked(cfg, {args.name: item}, out_dir=out)
    _echo(args, out / "config.txt")
    _log_report(report)
    return EXIT_OK


def cmd_reproduce(args):
    name = args.dataset.lower()
    if name not in DATASETS:
        raise ValidationError(f"--dataset must be one of {', '.join(DATASETS)}, got {args.dataset!r}")
    _resolve_defaults(args, name)
    root = Path(args.data_root) / name
    cfg = _experiment_config(args, root)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_experiment(cfg, out_dir=out)
    _echo(args, out / "config.txt")
    _log_report(report)
    return EXIT_OK


def cmd_heatmap(args):
    _resolve_defaults(args, Path(args.data).name)
    graph, _, _ = load_dataset(args.data)
    aphi = heatmap_matrix(graph, args.K, args.delta, args.gamma)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    export_propagation_heatmap(aphi, out)
    _echo(args, out.with_name(out.name + ".config"))
    log.info("fraction of entries above 1e-12: %.4f", float((aphi > 0).mean()))
    return EXIT_OK


def cmd_prepare(args):
    raw = Path(args.raw)
    if args.format == "linqs":
        parsed = read_linqs(raw / f"{args.name}.content", raw / f"{args.name}.cites")
    else:
        parsed = read_planetoid(raw, args.name)
    graph, attrs, labels = convert(*parsed, args.out)
    log.info("wrote %d vertices, %d edges, %d attributes to %s",
             graph.n, graph.num_edges, attrs.d, args.out)
    return EXIT_OK


def _log_report(report):
    log.info("clean trimmed mean %.4f", report["clean"]["trimmed_mean"])
    for name, body in report["attacks"].items():
        log.info("%s trimmed mean %.4f (%d flips)", name, body["trimmed_mean"], body["flips"])


def main(argv=None):
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", level=logging.WARNING)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return exc.code
    except ValidationError as exc:
        print(f"rida: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"rida: error: {exc}", file=sys.stderr)
        return EXIT_IO
    log.setLevel(logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"rida: error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except RidaError as exc:
        print(f"rida: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"rida: error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
