"""``dnd`` command-line entry point.

Subcommands::

    gen-data        synthetic attribute-biased dataset (+ held-out eval split)
    train-teacher   teacher on the a_high group
    train-baseline  plain classifier on all data (the un-debiased reference)
    train-dnd       teacher -> student on a_low
    train-dndpp     teacher -> student -> final student on all data
    train-osd       teacher -> student on all data
    eval            bias report of a checkpoint on a feature file
    report          render a stored report as a text table

Every subcommand accepts ``--config FILE`` (flat TOML); flags override file
values.  Outputs are byte-identical across reruns; wall-clock timestamps go
only to ``*.log`` sidecar files.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .datagen import SynthSpec, generate_synthetic, read_features, read_features_csv, write_features
from .distill import (
    BinaryAttribute,
    Method,
    binarize_attribute,
    default_spec,
    run_pipeline,
    train_baseline,
    train_teacher,
)
from .errors import DndError
from .evaluation import bias_report, dataset_protocol
from .metrics import BiasReport
from .model import TrainSpec, embed, load_checkpoint, save_checkpoint
from .protocol import protocol_from_files
from .saliency import group_mean_maps, write_maps_csv

log = logging.getLogger("dndebias")


class UsageError(Exception):
    pass


# --- value parsers ------------------------------------------------------------------


def fpr_list(text) -> list[float]:
    if isinstance(text, (list, tuple)):
        vals = [float(v) for v in text]
    else:
        vals = [float(v) for v in str(text).split(",") if v.strip()]
    if not vals or any(not 0 < v <= 1 for v in vals):
        raise argparse.ArgumentTypeError(f"FPR list must hold values in (0, 1]: {text!r}")
    return vals


def int_list(text) -> list[int]:
    if isinstance(text, (list, tuple)):
        return [int(v) for v in text]
    return [int(v) for v in str(text).split(",") if v.strip()]


def kv_map(cast):
    def parse(text):
        if isinstance(text, dict):
            return {str(k): cast(v) for k, v in text.items()}
        out = {}
        for item in str(text).split(","):
            if not item.strip():
                continue
            if "=" not in item:
                raise argparse.ArgumentTypeError(f"expected key=value, got {item!r}")
            k, v = item.split("=", 1)
            out[k.strip()] = cast(v)
        return out

    return parse


def mapping_arg(text) -> dict[str, list[str]]:
    """``light=Caucasian+Asian;dark=African+Indian`` -> ``{light: [...], dark: [...]}``."""
    if isinstance(text, dict):
        return {k: list(v) for k, v in text.items()}
    out = {}
    for part in str(text).split(";"):
        if not part.strip():
            continue
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"expected side=raw1+raw2, got {part!r}")
        side, raws = part.split("=", 1)
        out[side.strip()] = [r.strip() for r in raws.split("+") if r.strip()]
    return out


def seed_arg(text) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


# --- parser ---------------------------------------------------------------------------

# option name -> (type, default); REQUIRED marks options without a default
REQUIRED = object()

COMMON = {"config": (str, None), "verbose": (bool, False)}

SYNTH = {
    "seed": (seed_arg, 0),
    "out": (str, REQUIRED),
    "eval_out": (str, None),
    "ids_per_group": (kv_map(int), {"high": 8, "low": 8}),
    "noise_sigma": (kv_map(float), {"high": 1.2, "low": 3.6}),
    "samples_per_id": (int, 40),
    "eval_samples_per_id": (int, 10),
    "input_dim": (int, 32),
    "center_scale": (float, 1.0),
    "group_shift": (float, 1.0),
}

TRAIN = {
    "data": (str, REQUIRED),
    "attribute": (str, "gender"),
    "high": (str, REQUIRED),
    "low": (str, None),
    "mapping": (mapping_arg, None),
    "epochs": (int, 50),
    "batch_size": (int, 128),
    "lr0": (float, 0.1),
    "lr_decay_factor": (float, 0.9),
    "lr_decay_interval": (int, 50),
    "seed": (seed_arg, 0),
    "hidden_dims": (int_list, [64]),
    "embed_dim": (int, 16),
}

PIPELINE = {
    **TRAIN,
    "low": (str, REQUIRED),
    "out_dir": (str, REQUIRED),
    "teacher": (str, None),
    "lambda1": (float, None),
    "lambda2": (float, None),
    "lambda_osd": (float, None),
    "stage_epochs": (kv_map(int), None),
}

COMMANDS = {
    "gen-data": SYNTH,
    "train-teacher": {**TRAIN, "out": (str, REQUIRED)},
    "train-baseline": {**{k: v for k, v in TRAIN.items() if k not in ("high", "low")}, "out": (str, REQUIRED)},
    "train-dnd": PIPELINE,
    "train-dndpp": PIPELINE,
    "train-osd": PIPELINE,
    "eval": {
        "model": (str, REQUIRED),
        "data": (str, REQUIRED),
        "fpr": (fpr_list, [1e-2, 1e-3]),
        "bias_groups": (lambda s: [x.strip() for x in (s if isinstance(s, list) else s.split(","))], None),
        "groups": (lambda s: [x.strip() for x in (s if isinstance(s, list) else s.split(","))], None),
        "reference": (str, None),
        "template_size": (int, 1),
        "membership": (str, None),
        "pairs": (str, None),
        "tag": (str, None),
        "out": (str, None),
        "saliency_csv": (str, None),
        "mapping": (mapping_arg, None),
    },
    "report": {"report": (str, REQUIRED), "out": (str, None)},
}

HELP = {
    "gen-data": "generate a seeded synthetic dataset",
    "train-teacher": "train the teacher on the a_high group",
    "train-baseline": "train a plain classifier on all data",
    "train-dnd": "teacher then student on a_low (distilled)",
    "train-dndpp": "DND followed by a distilled student on all data",
    "train-osd": "teacher then a distilled student on all data",
    "eval": "write a bias report for a checkpoint",
    "report": "render a stored report as a text table",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dnd", description="Distillation-based de-biasing toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, options in COMMANDS.items():
        p = sub.add_parser(name, help=HELP[name])
        for key, (typ, _default) in {**COMMON, **options}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, action="store_true", default=None)
            else:
                p.add_argument(flag, type=typ, default=None)
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge built-in defaults < config file < flags; reject unknown config keys."""
    options = {**COMMON, **COMMANDS[args.command]}
    values = {k: v for k, v in vars(args).items() if k != "command"}
    if values.get("config"):
        try:
            with open(values["config"], "rb") as fh:
                cfg = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise UsageError(f"cannot read config {values['config']}: {exc}") from exc
        for raw_key, raw in cfg.items():
            key = raw_key.replace("-", "_")
            if key not in options or key == "config":
                raise UsageError(f"unknown config key {raw_key!r} for {args.command}")
            if values.get(key) is None:
                typ = options[key][0]
                try:
                    values[key] = raw if typ is bool else typ(raw)
                except (ValueError, argparse.ArgumentTypeError) as exc:
                    raise UsageError(f"bad config value for {raw_key}: {exc}") from exc
    for key, (_typ, default) in options.items():
        if values.get(key) is None:
            if default is REQUIRED:
                raise UsageError(f"--{key.replace('_', '-')} is required")
            values[key] = default
    return values


# --- commands ---------------------------------------------------------------------


def _sidecar(path, argv) -> None:
    stamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    Path(str(path) + ".log").write_text(f"{stamp} dnd {' '.join(argv)}\n")


def _load_dataset(path):
    if str(path).endswith(".csv"):
        return read_features_csv(path)
    return read_features(path)


def _attribute(o) -> BinaryAttribute:
    low = o.get("low")
    if o.get("mapping"):
        sides = o["mapping"]
        if low is None:
            others = [s for s in sides if s != o["high"]]
            low = others[0] if len(others) == 1 else None
        if low is None or set(sides) != {o["high"], low}:
            raise UsageError("--mapping must define exactly the --high and --low sides")
        return BinaryAttribute.from_groups(o["attribute"], sides[o["high"]], sides[low], o["high"], low)
    if low is None:
        return None
    return BinaryAttribute(o["attribute"], o["high"], low)


def _train_spec(o, **lams) -> TrainSpec:
    kw = dict(
        epochs=o["epochs"],
        batch_size=o["batch_size"],
        lr0=o["lr0"],
        lr_decay_factor=o["lr_decay_factor"],
        lr_decay_interval_epochs=o["lr_decay_interval"],
        seed=o["seed"],
    )
    kw.update({k: v for k, v in lams.items() if v is not None})
    attr = o.get("attribute", "gender")
    try:
        return default_spec(attr if attr in ("gender", "skintone") else "gender", **kw)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _arch(o) -> dict:
    return {"hidden_dims": tuple(o["hidden_dims"]), "embed_dim": o["embed_dim"]}


def cmd_gen_data(o, argv) -> None:
    groups = o["ids_per_group"]
    spec = SynthSpec(
        ids_per_group=groups,
        samples_per_id=o["samples_per_id"],
        input_dim=o["input_dim"],
        center_scale=o["center_scale"],
        noise_sigma_per_group=o["noise_sigma"],
        seed=o["seed"],
        group_shift=o["group_shift"],
        eval_samples_per_id=o["eval_samples_per_id"],
    )
    write_features(generate_synthetic(spec), o["out"])
    _sidecar(o["out"], argv)
    if o["eval_out"]:
        write_features(generate_synthetic(spec, "eval"), o["eval_out"])


def cmd_train_teacher(o, argv) -> None:
    data = _load_dataset(o["data"])
    attr = _attribute(o)
    if attr is not None:
        data = binarize_attribute(data, attr)
    high = data.with_group(o["high"])
    if len(high) == 0:
        raise UsageError(f"no samples with label {o['high']!r}")
    net, _ = train_teacher(high, _train_spec(o), o["high"], arch=_arch(o))
    save_checkpoint(net, o["out"])
    _sidecar(o["out"], argv)


def cmd_train_baseline(o, argv) -> None:
    data = _load_dataset(o["data"])
    net, _ = train_baseline(data, _train_spec(o), arch=_arch(o))
    save_checkpoint(net, o["out"])
    _sidecar(o["out"], argv)


def cmd_pipeline(method: Method):
    def run(o, argv) -> None:
        data = _load_dataset(o["data"])
        attr = _attribute(o)
        spec = _train_spec(o, lambda1=o["lambda1"], lambda2=o["lambda2"], lambda_osd=o["lambda_osd"])
        teacher = load_checkpoint(o["teacher"]) if o["teacher"] else None
        result = run_pipeline(method, data, attr, spec, o["stage_epochs"], _arch(o), teacher)
        result.save(o["out_dir"])
        _sidecar(Path(o["out_dir"]) / "run", argv)
        spec_path = Path(o["out_dir"]) / "train_spec.json"
        spec_path.write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")

    return run


def cmd_eval(o, argv) -> None:
    net = load_checkpoint(o["model"])
    data = _load_dataset(o["data"])
    if o["mapping"]:
        sides = list(o["mapping"])
        if len(sides) != 2:
            raise UsageError("--mapping must define exactly two sides")
        data = binarize_attribute(
            data, BinaryAttribute.from_groups("attribute", o["mapping"][sides[0]], o["mapping"][sides[1]], *sides)
        )
    bias_groups = o["bias_groups"] or list(data.labels)
    if len(bias_groups) != 2:
        raise UsageError("--bias-groups must name two labels (required when data has more than two)")
    reference = BiasReport.from_json(Path(o["reference"]).read_text()) if o["reference"] else None
    if (o["membership"] is None) != (o["pairs"] is None):
        raise UsageError("--membership and --pairs must be given together")
    if o["membership"]:
        proto = protocol_from_files(data, embed(net, data.features), o["membership"], o["pairs"])
    else:
        proto = dataset_protocol(net, data, o["template_size"])
    groups = o["groups"] or [l for l in data.labels if data.label_mask(l).any()]
    tag = o["tag"] or Path(o["model"]).stem
    report = bias_report(proto, o["fpr"], tuple(bias_groups), reference, groups, tag)
    text = report.to_json()
    if o["out"]:
        Path(o["out"]).write_text(text)
        _sidecar(o["out"], argv)
    else:
        sys.stdout.write(text)
    if o["saliency_csv"]:
        attr = BinaryAttribute("attribute", bias_groups[0], bias_groups[1],
                               {l: (bias_groups[0] if l == bias_groups[0] else bias_groups[1]) for l in data.labels})
        write_maps_csv(group_mean_maps(net, data, attr), o["saliency_csv"])


def cmd_report(o, argv) -> None:
    report = BiasReport.from_json(Path(o["report"]).read_text())
    text = report.to_table()
    if o["out"]:
        Path(o["out"]).write_text(text)
    else:
        sys.stdout.write(text)


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train-teacher": cmd_train_teacher,
    "train-baseline": cmd_train_baseline,
    "train-dnd": cmd_pipeline(Method.DND),
    "train-dndpp": cmd_pipeline(Method.DNDPP),
    "train-osd": cmd_pipeline(Method.OSD),
    "eval": cmd_eval,
    "report": cmd_report,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 on bad flags
    try:
        options = resolve(args)
    except UsageError as exc:
        parser.exit(2, f"dnd {args.command}: error: {exc}\n")
    logging.basicConfig(level=logging.INFO if options["verbose"] else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        for key in ("out", "eval_out", "saliency_csv"):
            if options.get(key):
                Path(options[key]).parent.mkdir(parents=True, exist_ok=True)
        HANDLERS[args.command](options, argv)
    except UsageError as exc:
        print(f"dnd {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DndError, ValueError, KeyError, OSError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"dnd {args.command}: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
