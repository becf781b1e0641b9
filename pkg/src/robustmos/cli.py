"""Command-line pipeline: generate data, train, sweep, evaluate, detect shift.

Commands (all operate inside one experiment directory given by ``--out``):

- ``gen``     write the configured splits as CSV files
- ``train``   fit the mixture model on train + id-dev, save the checkpoint
- ``sweep``   two-stage hyperparameter search (expert count, then penalty weight)
- ``eval``    accuracies per split and rule, penalty statistics, profiles
- ``detect``  shift verdicts per target split plus gated-rule accuracies
- ``report``  collate the artifacts present in the directory into one summary

Flags: ``--config <path>`` (JSON; defaults are built in), ``--out <dir>``,
``--seed <int>`` (overrides the config seed), ``--workers <n>`` (sweep
fan-out), ``--set path.to.field=value`` (repeatable config override; values
parse as JSON, falling back to strings).

Every command writes ``manifest_<command>.json`` recording the config hash,
the derived child seeds, the produced files and wall-clock timings. All
randomness descends from the single config seed via named children, so
reruns with the same config and seed reproduce every data artifact byte for
byte (timings in the manifest are the one exception).

Exit codes: 0 success; 2 invalid config; 3 missing input file; 4 output/IO
failure; 1 unexpected error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .evaluate import (
    detect_shift,
    gated_rule,
    penalty_statistic,
    split_report,
    write_expert_profile_csv,
    write_mixture_profile_csv,
    write_reports_csv,
    write_reports_json,
)
from .model import MosConfig, decide_batch, load_checkpoint, save_checkpoint
from .diversity import set_ell
from .seeding import derive_seed
from .synth import (
    GeneratorConfig,
    SplitSpec,
    load_dataset,
    make_generator,
    save_dataset,
)
from .train import TrainConfig, fit, two_stage_search

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_IO = 4

CONFIG_VERSION = 1

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "seed": 4,
    "generator": {
        "num_labels": 3,
        "num_shortcuts": 3,
        "core_dim": 10,
        "sigma_core": 0.55,
        "sigma_shortcut": 0.05,
        "splits": [
            {"name": "train", "size": 8000, "rho": 0.9},
            {"name": "id_dev", "size": 2000, "rho": 0.9},
            {"name": "ood_test", "size": 2000, "rho": 0.1},
        ],
    },
    "model": {"num_experts": 8, "hidden_dim": 32, "encoded_dim": 16},
    "train": {
        "train_split": "train",
        "dev_split": "id_dev",
        "penalty_weight": 1.0,
        "batch_size": 32,
        "epochs": 10,
        "learning_rate": 0.1,
        "drop_count": 16,
        "shuffle": True,
    },
    "sweep": {"expert_grid": [5, 10, 15], "weight_grid": [0.0, 0.5, 1.0], "num_seeds": 2},
    "eval": {
        "splits": ["train", "id_dev", "ood_test"],
        "rules": ["estimated", "uniform", "argmin"],
    },
    "detect": {"reference_split": "id_dev", "target_splits": ["ood_test"], "multiplier": 3.0},
}


class ConfigError(ValueError):
    """The experiment configuration is malformed or inconsistent."""


def _deep_merge(base: dict, override: dict) -> dict:
    merged = dict(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: str | None) -> dict:
    """Read a config file and merge it over the built-in defaults."""
    if path is None:
        return json.loads(json.dumps(DEFAULT_CONFIG))
    file = Path(path)
    if not file.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        user = json.loads(file.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _deep_merge(DEFAULT_CONFIG, user)


def apply_overrides(config: dict, assignments: list[str]) -> dict:
    """Apply ``path.to.field=value`` overrides; values parse as JSON literals."""
    for assignment in assignments:
        if "=" not in assignment:
            raise ConfigError(f"--set expects path.to.field=value, got {assignment!r}")
        dotted, raw = assignment.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = config
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not isinstance(node.get(part), dict):
                raise ConfigError(f"--set path {dotted!r} does not exist in the config")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"--set path {dotted!r} does not exist in the config")
        node[parts[-1]] = value
    return config


class Experiment:
    """A validated config plus the derived library objects."""

    def __init__(self, config: dict):
        if config.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}")
        if not isinstance(config.get("seed"), int) or config["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        self.config = config
        self.seed = config["seed"]

        gen = config["generator"]
        splits = gen.get("splits", [])
        if not splits:
            raise ConfigError("generator.splits must be nonempty")
        names = [s.get("name") for s in splits]
        if len(set(names)) != len(names):
            raise ConfigError("generator split names must be unique")
        try:
            self.split_specs = {
                s["name"]: SplitSpec(name=s["name"], size=s["size"], rho=s.get("rho"))
                for s in splits
            }
            self.generator_config = GeneratorConfig(
                num_labels=gen["num_labels"],
                num_shortcuts=gen["num_shortcuts"],
                core_dim=gen["core_dim"],
                sigma_core=gen["sigma_core"],
                sigma_shortcut=gen["sigma_shortcut"],
                seed=derive_seed(self.seed, "generator"),
                rho={s["name"]: s.get("rho", 0.5) for s in splits},
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid generator config: {exc}") from exc

        model = config["model"]
        try:
            self.model_config = MosConfig(
                num_experts=model["num_experts"],
                num_labels=gen["num_labels"],
                input_dim=self.generator_config.feature_dim,
                hidden_dim=model["hidden_dim"],
                encoded_dim=model["encoded_dim"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid model config: {exc}") from exc

        train = config["train"]
        try:
            self.train_config = TrainConfig(
                penalty_weight=train["penalty_weight"],
                drop_count=train["drop_count"],
                batch_size=train["batch_size"],
                epochs=train["epochs"],
                learning_rate=train["learning_rate"],
                seed=derive_seed(self.seed, "train"),
                shuffle=train["shuffle"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid train config: {exc}") from exc
        for key in ("train_split", "dev_split"):
            if train[key] not in self.split_specs:
                raise ConfigError(f"train.{key} {train[key]!r} is not a configured split")

        sweep = config["sweep"]
        if not sweep.get("expert_grid") or not sweep.get("weight_grid"):
            raise ConfigError("sweep grids must be nonempty")

        for split in config["eval"]["splits"]:
            if split not in self.split_specs:
                raise ConfigError(f"eval split {split!r} is not a configured split")
        for rule in config["eval"]["rules"]:
            if rule not in ("estimated", "uniform", "argmin"):
                raise ConfigError(f"unknown decision rule {rule!r}")

        detect = config["detect"]
        for split in [detect["reference_split"], *detect["target_splits"]]:
            if split not in self.split_specs:
                raise ConfigError(f"detect split {split!r} is not a configured split")

    def config_hash(self) -> str:
        canonical = json.dumps(self.config, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()

    def split_path(self, out: Path, name: str) -> Path:
        return out / f"{name}.csv"

    def load_split(self, out: Path, name: str):
        path = self.split_path(out, name)
        if not path.exists():
            raise FileNotFoundError(f"dataset file {path} is missing; run `gen` first")
        return load_dataset(path, expected_config=self.generator_config)

    def resolved_drop_count(self, num_experts: int) -> int:
        if self.train_config.drop_count is not None:
            return self.train_config.drop_count
        return set_ell(self.train_config.batch_size, num_experts)


def _write_manifest(
    out: Path, command: str, exp: Experiment, outputs: list[Path], child_seeds: dict, started: float
) -> Path:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config_hash": exp.config_hash(),
        "seed": exp.seed,
        "child_seeds": child_seeds,
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
        "timings_sec": {"total": time.monotonic() - started},
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def run_gen(exp: Experiment, out: Path) -> list[Path]:
    generator = make_generator(exp.generator_config)
    datasets = [generator.sample(spec) for spec in exp.split_specs.values()]
    outputs = []
    for data in datasets:
        path = exp.split_path(out, data.name)
        save_dataset(data, path)
        outputs.append(path)
    return outputs


def run_train(exp: Experiment, out: Path) -> list[Path]:
    train_cfg = exp.config["train"]
    train_data = exp.load_split(out, train_cfg["train_split"])
    dev_data = exp.load_split(out, train_cfg["dev_split"])
    model, history = fit(
        exp.model_config,
        exp.train_config,
        (train_data.features, train_data.labels),
        (dev_data.features, dev_data.labels),
        log=sys.stderr,
    )
    checkpoint = out / "model.json"
    save_checkpoint(model, checkpoint, seed=exp.train_config.seed)
    history_path = out / "history.json"
    history_path.write_text(json.dumps(history.to_dict(), indent=1) + "\n")
    return [checkpoint, history_path]


def run_sweep(exp: Experiment, out: Path, measure=None, workers: int = 1) -> list[Path]:
    train_cfg = exp.config["train"]
    sweep_cfg = exp.config["sweep"]
    train_data = exp.load_split(out, train_cfg["train_split"])
    dev_data = exp.load_split(out, train_cfg["dev_split"])
    result = two_stage_search(
        sweep_cfg["expert_grid"],
        sweep_cfg["weight_grid"],
        exp.model_config,
        replace(exp.train_config, seed=derive_seed(exp.seed, "sweep")),
        (train_data.features, train_data.labels),
        (dev_data.features, dev_data.labels),
        num_seeds=sweep_cfg["num_seeds"],
        measure=measure,
        workers=workers,
        log=sys.stderr,
    )
    path = out / "sweep.json"
    path.write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    return [path]


def _load_model(out: Path):
    checkpoint = out / "model.json"
    if not checkpoint.exists():
        raise FileNotFoundError(f"checkpoint {checkpoint} is missing; run `train` first")
    model, _ = load_checkpoint(checkpoint)
    return model


def run_eval(exp: Experiment, out: Path) -> list[Path]:
    model = _load_model(out)
    drop_count = exp.resolved_drop_count(model.config.num_experts)
    batch_size = exp.train_config.batch_size
    reports = []
    for name in exp.config["eval"]["splits"]:
        data = exp.load_split(out, name)
        reports.append(
            split_report(
                model,
                data,
                batch_size=batch_size,
                drop_count=drop_count,
                rules=exp.config["eval"]["rules"],
                seed=derive_seed(exp.seed, f"eval-shuffle-{name}"),
            )
        )
    outputs = [
        out / "eval_report.json",
        out / "accuracy.csv",
        out / "mixture_profile.csv",
        out / "expert_profile.csv",
    ]
    write_reports_json(reports, outputs[0])
    write_reports_csv(reports, outputs[1])
    write_mixture_profile_csv(reports, outputs[2])
    write_expert_profile_csv(reports, outputs[3])
    return outputs


def run_detect(exp: Experiment, out: Path) -> list[Path]:
    model = _load_model(out)
    detect_cfg = exp.config["detect"]
    drop_count = exp.resolved_drop_count(model.config.num_experts)
    batch_size = exp.train_config.batch_size

    def stats(name: str):
        data = exp.load_split(out, name)
        return data, penalty_statistic(
            model,
            data.features,
            batch_size,
            drop_count,
            seed=derive_seed(exp.seed, f"detect-shuffle-{name}"),
        )

    _, reference = stats(detect_cfg["reference_split"])
    entries = {}
    for name in detect_cfg["target_splits"]:
        data, target = stats(name)
        verdict = detect_shift(reference, target, multiplier=detect_cfg["multiplier"])
        rule = gated_rule(verdict)
        gated_accuracy = float(
            (np.asarray(data.labels) == decide_batch(model, data.features, rule)).mean()
        )
        entries[name] = {
            "verdict": verdict.to_dict(),
            "gated_rule": rule,
            "gated_accuracy": gated_accuracy,
        }
    payload = {
        "reference_split": detect_cfg["reference_split"],
        "reference": {"mean": reference.mean, "std": reference.std},
        "targets": entries,
    }
    path = out / "shift_report.json"
    path.write_text(json.dumps(payload, indent=1) + "\n")
    return [path]


def run_report(exp: Experiment, out: Path) -> list[Path]:
    """Collate whatever artifacts exist in the directory into one summary."""
    summary: dict = {"config_hash": exp.config_hash()}
    found = False
    for name in ("history", "sweep", "eval_report", "shift_report"):
        path = out / f"{name}.json"
        if path.exists():
            summary[name] = json.loads(path.read_text())
            found = True
    if not found:
        raise FileNotFoundError(f"no artifacts to report in {out}; run other commands first")

    json_path = out / "summary.json"
    json_path.write_text(json.dumps(summary, indent=1) + "\n")

    lines = ["section,split,rule,value"]
    for report in summary.get("eval_report", {}).get("reports", []):
        for rule, acc in report["accuracies"].items():
            lines.append(f"accuracy,{report['split']},{rule},{acc:.17g}")
        lines.append(f"penalty_mean,{report['split']},,{report['penalty_mean']:.17g}")
    for name, entry in summary.get("shift_report", {}).get("targets", {}).items():
        lines.append(f"shift_score,{name},,{entry['verdict']['score']:.17g}")
        lines.append(f"gated_accuracy,{name},{entry['gated_rule']},{entry['gated_accuracy']:.17g}")
    csv_path = out / "summary.csv"
    csv_path.write_text("\n".join(lines) + "\n")
    return [json_path, csv_path]


COMMANDS = {
    "gen": run_gen,
    "train": run_train,
    "sweep": run_sweep,
    "eval": run_eval,
    "detect": run_detect,
    "report": run_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustmos",
        description="Shortcut-robust mixture-of-softmax experiments.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="experiment config JSON")
    parser.add_argument("--out", required=True, help="experiment directory")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--workers", type=int, default=1, help="parallel sweep runs")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="FIELD=VALUE",
        help="override a config field (repeatable), e.g. --set train.epochs=3",
    )
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.monotonic()
    try:
        config = load_config(args.config)
        config = apply_overrides(config, args.overrides)
        if args.seed is not None:
            config["seed"] = args.seed
        exp = Experiment(config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT

    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"error: cannot create output directory {out}: {exc}", file=sys.stderr)
        return EXIT_IO

    child_seeds = {
        name: derive_seed(exp.seed, name) for name in ("generator", "train", "sweep")
    }
    try:
        if args.command == "sweep":
            outputs = run_sweep(exp, out, workers=args.workers)
        else:
            outputs = COMMANDS[args.command](exp, out)
        manifest = _write_manifest(out, args.command, exp, outputs, child_seeds, started)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING_INPUT
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_ERROR

    for path in [*outputs, manifest]:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
