"""Command-line entry point: ``tabattack <command> [flags]``.

Exit codes: 0 success, 1 usage or input error, 2 failure while running.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import __version__
from .constraints import ConstraintSyntaxError, ConstraintTypeError, CyclicConstraintError, UnknownFeatureError, parse_constraints
from .evaluation import (
    ATTACKS,
    DEFAULT_GRIDS,
    SWEEP_AXES,
    ConfigError,
    ablation_matrix,
    budget_sweep,
    evaluate,
    parse_attack_config,
)
from .features import (
    DatasetError,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    save_spec,
    scale,
    split,
)
from .model import (
    PgdConfig,
    TrainConfig,
    TrainingDivergedError,
    build_classifier,
    load_model,
    save_model,
    train_adversarial,
)

log = logging.getLogger("tabattack")

LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
TEST_FRACTION = 0.25


class UsageError(Exception):
    """Bad flags, missing files or malformed inputs (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- helpers ----------------------------------------------------------------


def _read_json(path, what: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} file not found: {path}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} file {path} is not valid JSON: {exc}") from None


def _need_file(path, flag: str) -> Path:
    if path is None:
        raise UsageError(f"{flag} is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: file not found: {path}")
    return p


def _seeds(args) -> list[int]:
    if getattr(args, "seeds", None):
        try:
            return [int(s) for s in args.seeds.split(",") if s.strip()]
        except ValueError:
            raise UsageError(f"--seeds must be a comma-separated list of integers, got {args.seeds!r}") from None
    return [args.seed]


def build_id() -> str:
    """``git describe`` of the source tree when available, else the version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


def write_manifest(out: Path, command: str, argv: list[str], args, seeds, outputs) -> Path:
    configs = {k: getattr(args, k) for k in ("data", "spec", "constraints", "model", "config") if getattr(args, k, None)}
    doc = {
        "command": command,
        "argv": list(argv),
        "config_paths": configs,
        "seeds": list(seeds),
        "output_dir": str(out.parent),
        "outputs": [str(o) for o in outputs],
        "build_id": build_id(),
    }
    path = out.parent / (out.name + ".manifest.json")
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load_data(data, spec):
    try:
        return load_dataset(_need_file(data, "--data"), _need_file(spec, "--spec"))
    except DatasetError as exc:
        raise UsageError(str(exc)) from None


def _load_constraints(path, specs):
    p = _need_file(path, "--constraints")
    try:
        return parse_constraints(p.read_text(encoding="utf-8"), specs)
    except (ConstraintSyntaxError, ConstraintTypeError, UnknownFeatureError, CyclicConstraintError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _eval_rows(args, model):
    """Critical-class rows of the held-out split the model was trained with."""
    meta = model.metadata
    data = args.data or meta.get("data")
    spec = args.spec or meta.get("spec")
    if data is None or spec is None:
        raise UsageError("the model does not record its dataset; pass --data and --spec")
    ds = _load_data(data, spec)
    if len(ds.specs) != model.n_features:
        raise UsageError(f"dataset has {len(ds.specs)} features but the model expects {model.n_features}")
    _, test = split(ds, meta.get("test_fraction", TEST_FRACTION), meta.get("split_seed", meta.get("seed", 0)))
    crit = test.critical()
    constraints = args.constraints or meta.get("constraints")
    omega = _load_constraints(constraints, ds.specs)
    return str(data), scale(crit.rows, model.scaler), crit.labels, omega


def _load_model(path):
    p = _need_file(path, "--model")
    try:
        return load_model(p)
    except (ValueError, KeyError) as exc:
        raise UsageError(f"{path}: {exc}") from None


def _write_report(report, args) -> list[Path]:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    timing = not args.no_timing
    report.write(out, timing)
    outputs = [out]
    if args.csv:
        Path(args.csv).write_text(report.to_csv(timing), encoding="utf-8")
        outputs.append(Path(args.csv))
    if args.svg:
        report.write_svg(args.svg)
        outputs.append(Path(args.svg))
    return outputs


# --- commands ---------------------------------------------------------------


def cmd_synth(args, argv):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg = SyntheticConfig(n_features=args.features, n_rows=args.rows, n_constraints=args.n_constraints)
    try:
        data, text = generate_synthetic(cfg, args.seed)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    files = [out / "data.csv", out / "spec.json", out / "constraints.txt"]
    save_dataset(files[0], data)
    save_spec(files[1], data.specs, data.critical_class)
    files[2].write_text(text, encoding="utf-8")
    write_manifest(files[0], "synth", argv, args, [args.seed], files)
    print(f"wrote {', '.join(str(f) for f in files)}")
    return 0


def _train_configs(doc: dict, adversarial: bool):
    train_keys = {"epochs", "batch_size", "learning_rate", "optimizer"}
    pgd_keys = {"epsilon", "steps", "step_size", "norm"}
    extra = {"hidden", "test_fraction"}
    allowed = train_keys | extra | (pgd_keys if adversarial else set())
    unknown = sorted(set(doc) - allowed)
    if unknown:
        raise UsageError(f"training config: unknown key(s) {unknown}; allowed {sorted(allowed)}")
    try:
        tcfg = TrainConfig(**{k: doc[k] for k in train_keys if k in doc})
        pcfg = PgdConfig(**{k: doc[k] for k in pgd_keys if k in doc}) if adversarial else None
    except (TypeError, ValueError) as exc:
        raise UsageError(f"training config: {exc}") from None
    hidden = tuple(int(h) for h in doc.get("hidden", (64, 32, 16)))
    frac = float(doc.get("test_fraction", TEST_FRACTION))
    return tcfg, pcfg, hidden, frac


def cmd_train(args, argv, adversarial=False):
    ds = _load_data(args.data, args.spec)
    tcfg, pcfg, hidden, frac = _train_configs(_read_json(args.config, "--config"), adversarial)
    tcfg = replace(tcfg, seed=args.seed)
    try:
        train_set, test_set = split(ds, frac, args.seed)
    except DatasetError as exc:
        raise UsageError(str(exc)) from None
    model = build_classifier(len(ds.specs), ds.n_classes, hidden, seed=args.seed)
    model = train_adversarial(model, train_set, tcfg, pcfg, test_set)
    model.metadata.update(
        data=str(Path(args.data).resolve()),
        spec=str(Path(args.spec).resolve()),
        test_fraction=frac,
        split_seed=args.seed,
    )
    if args.constraints:
        _load_constraints(args.constraints, ds.specs)
        model.metadata["constraints"] = str(Path(args.constraints).resolve())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    write_manifest(out, "train-adv" if adversarial else "train", argv, args, [args.seed], [out])
    print(f"clean accuracy {model.metadata['clean_accuracy']:.4f}; model written to {out}")
    return 0


def _attack_setups(args):
    doc = _read_json(args.config, "--config")
    try:
        if args.attack and "," in args.attack:
            return [parse_attack_config({}, a.strip()) for a in args.attack.split(",")]
        if "attacks" in doc:
            return [parse_attack_config(d) for d in doc["attacks"]]
        if args.attack is None and not doc:
            return [parse_attack_config({}, a) for a in ATTACKS]
        return [parse_attack_config(doc, args.attack)]
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_attack(args, argv):
    if args.attack is None and not args.config:
        raise UsageError(f"--attack is required; choose one of {', '.join(ATTACKS)}")
    return cmd_evaluate(args, argv, "attack")


def cmd_evaluate(args, argv, command="evaluate"):
    setups = _attack_setups(args)
    model = _load_model(args.model)
    dataset, X, Y, omega = _eval_rows(args, model)
    seeds = _seeds(args)
    report = evaluate(model, X, Y, omega, setups, seeds, dataset, str(args.model), args.threads, command)
    outputs = _write_report(report, args)
    write_manifest(Path(args.out), command, argv, args, seeds, outputs)
    for a in report.attacks:
        print(f"{a.name}: robust accuracy {report.robust_accuracy[a.name]:.4f}")
    return 0


def cmd_sweep(args, argv):
    doc = _read_json(args.config, "--config")
    try:
        base = parse_attack_config(doc, "caa")
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    values = None
    if args.values:
        try:
            values = [float(v) if args.axis == "epsilon" else int(v) for v in args.values.split(",")]
        except ValueError:
            raise UsageError(f"--values must be a comma-separated list of numbers, got {args.values!r}") from None
        if args.axis == "epsilon" and any(v <= 0 for v in values):
            raise UsageError("--values: epsilon must be > 0")
    model = _load_model(args.model)
    dataset, X, Y, omega = _eval_rows(args, model)
    seeds = _seeds(args)
    report = budget_sweep(
        model, X, Y, omega, args.axis, values, base, seeds, args.threads, dataset=dataset, model_file=str(args.model)
    )
    outputs = _write_report(report, args)
    write_manifest(Path(args.out), "sweep", argv, args, seeds, outputs)
    for a in report.attacks:
        print(f"{a.name}: robust accuracy {report.robust_accuracy[a.name]:.4f}")
    return 0


def cmd_ablate(args, argv):
    doc = _read_json(args.config, "--config")
    try:
        base = parse_attack_config(doc, "capgd")
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    model = _load_model(args.model)
    dataset, X, Y, omega = _eval_rows(args, model)
    seeds = _seeds(args)
    report = ablation_matrix(
        model, X, Y, omega, base.budget, seeds, base.capgd, args.threads, dataset=dataset, model_file=str(args.model)
    )
    outputs = _write_report(report, args)
    write_manifest(Path(args.out), "ablate", argv, args, seeds, outputs)
    names, M = report.coverage_matrix()
    for i, a in enumerate(names):
        print(f"{a}: robust accuracy {report.robust_accuracy[a]:.4f}, coverage by capgd {M[i, 0]:.3f}")
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tabattack", description="Constrained adversarial attacks on tabular classifiers.")
    parser.add_argument("--version", action="version", version=f"tabattack {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    def common(p, threads=False):
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        if threads:
            p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads (default: logical cores)")

    p = sub.add_parser("synth", help="write a synthetic constrained dataset")
    common(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--rows", type=int, default=1000)
    p.add_argument("--features", type=int, default=6)
    p.add_argument("--n-constraints", type=int, default=3)

    for name, help_ in (("train", "train a classifier"), ("train-adv", "train with PGD adversarial training")):
        p = sub.add_parser(name, help=help_)
        common(p, threads=True)
        p.add_argument("--data", required=True)
        p.add_argument("--spec", required=True)
        p.add_argument("--constraints", help="remembered in the model for later attacks")
        p.add_argument("--config", help="training config JSON")
        p.add_argument("--out", required=True, help="model file to write")

    def attack_flags(p, attack=True):
        common(p, threads=True)
        p.add_argument("--seeds", help="comma-separated seeds (overrides --seed)")
        p.add_argument("--model", required=True)
        p.add_argument("--data", help="defaults to the dataset recorded in the model")
        p.add_argument("--spec", help="defaults to the spec recorded in the model")
        p.add_argument("--constraints", help="defaults to the constraints recorded in the model")
        p.add_argument("--config", help="attack config JSON")
        if attack:
            p.add_argument("--attack", help="one of " + ", ".join(ATTACKS))
        p.add_argument("--out", required=True, help="report JSON to write")
        p.add_argument("--csv", help="also write the report flattened to CSV")
        p.add_argument("--svg", help="also write a robust-accuracy plot (needs matplotlib)")
        p.add_argument("--no-timing", action="store_true", help="leave durations out of the report")

    attack_flags(sub.add_parser("attack", help="run one attack on the critical-class test rows"))
    attack_flags(sub.add_parser("evaluate", help="run several attacks and compare them"))
    p = sub.add_parser("sweep", help="CAA robust accuracy across a budget grid")
    attack_flags(p, attack=False)
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--values", help="comma-separated grid (default: " + "; ".join(
        f"{k}={','.join(map(str, v))}" for k, v in DEFAULT_GRIDS.items()) + ")")
    attack_flags(sub.add_parser("ablate", help="CAPGD ablation matrix"), attack=False)
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "train-adv": lambda a, v: cmd_train(a, v, adversarial=True),
    "attack": cmd_attack,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "ablate": cmd_ablate,
}


def _setup_logging():
    level = os.environ.get("TABATTACK_LOG", "error").lower()
    if level not in LOG_LEVELS:
        raise UsageError(f"TABATTACK_LOG must be one of {', '.join(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s", force=True)


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError("a command is required: " + ", ".join(COMMANDS))
        threads = getattr(args, "threads", None)
        if threads is not None and threads < 1:
            raise UsageError("--threads must be >= 1")
        with threadpool_limits(limits=threads):
            return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDivergedError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())
