"""Command-line pipeline: curate, split, train, eval, predict, explain, serve.

Settings resolve as flag > RXNCOND_OUT_DIR (out-dir only) > TOML config file >
documented default; unknown config keys are rejected. Batch commands run
in-process; ``predict`` and ``explain`` become thin HTTP clients when
``--server`` points at a running service. Every error is printed to stderr as
one ``rxncond: error:`` line and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import conditions, evaluation, interpret, model as model_mod
from . import tensor as tensor_mod
from .conditions import ConditionDictionary
from .errors import ConfigError, RxncondError
from .graphnet import GpnConfig

ERROR_PREFIX = "rxncond: error:"

OUT_DIR_ENV = "RXNCOND_OUT_DIR"

_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "out_dir": ".",
    "arch": "rgcn",
    "epochs": 100,
    "batch_size": 32,
    "learning_rate": 1e-3,
    "hidden_dim": 128,
    "out_dim": 128,
    "n_layers": 4,
    "mlp_hidden": 128,
    "coverage": 0.95,
    "use_temperature": False,
    "k": [1, 3],
    "host": "127.0.0.1",
    "port": 8000,
    "format": "text",
}

_PATH_KEYS = ("dataset", "roles", "aliases", "dictionary", "checkpoint")
_KNOWN_CONFIG_KEYS = set(_DEFAULTS) | set(_PATH_KEYS) | {"filter", "server"}


@dataclass
class RunConfig:
    """Resolved settings for one command invocation."""

    command: str
    values: dict[str, Any] = field(default_factory=dict)

    def __getattr__(self, key: str) -> Any:
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None


def _load_config_file(path: str | None) -> dict[str, Any]:
    if not path:
        return {}
    with open(path, "rb") as handle:
        data = tomllib.load(handle)
    unknown = sorted(set(data) - _KNOWN_CONFIG_KEYS)
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {unknown}")
    return data


def _resolve(args: argparse.Namespace) -> RunConfig:
    file_values = _load_config_file(getattr(args, "config", None))
    values: dict[str, Any] = {}
    for key in _KNOWN_CONFIG_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
        elif key == "out_dir" and os.environ.get(OUT_DIR_ENV):
            values[key] = os.environ[OUT_DIR_ENV]
        elif key in file_values:
            values[key] = file_values[key]
        elif key in _DEFAULTS:
            values[key] = _DEFAULTS[key]
        else:
            values[key] = None
    for key in ("reactant", "product"):
        values[key] = getattr(args, key, None)
    return RunConfig(command=args.command, values=values)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _require(cfg: RunConfig, *keys: str) -> None:
    missing = [k for k in keys if not cfg.values.get(k)]
    if missing:
        raise ConfigError(f"{cfg.command} requires {', '.join('--' + k.replace('_', '-') for k in missing)}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_inputs(cfg: RunConfig):
    records = conditions.load_records_csv(cfg.dataset)
    roles = conditions.load_roles(cfg.roles) if cfg.values.get("roles") else {}
    aliases = conditions.load_aliases(cfg.aliases) if cfg.values.get("aliases") else {}
    return records, roles, aliases


def _make_filter_rules(specs: Sequence[str], roles, aliases) -> list[conditions.FilterRule]:
    rules = []
    for spec in specs or ():
        name, _, arg = spec.partition("=")
        if name == "require-yield":
            rules.append(conditions.require_yield())
        elif name == "require-structures":
            rules.append(conditions.require_structures())
        elif name == "require-solvent":
            rules.append(conditions.require_solvent(roles, aliases))
        elif name == "max-reactants":
            rules.append(conditions.max_reactants(int(arg)))
        elif name == "max-reagents":
            rules.append(conditions.max_reagents(int(arg), roles, aliases))
        elif name == "max-solvents":
            rules.append(conditions.max_solvents(int(arg), roles, aliases))
        else:
            raise ConfigError(f"unknown filter rule {spec!r}")
    return rules


def cmd_curate(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "roles")
    out = _out_dir(cfg)
    records, roles, aliases = _load_inputs(cfg)
    rules = _make_filter_rules(cfg.values.get("filter"), roles, aliases)
    removed: dict[str, int] = {}
    if rules:
        records, removed = conditions.filter_records(records, rules)
    dictionary, report = conditions.build_dictionary(
        records,
        roles,
        aliases,
        coverage=cfg.coverage,
        use_temperature=cfg.use_temperature,
    )
    dictionary.save(out / "dictionary.json")

    with open(out / "curation_report.csv", "w", encoding="utf-8") as handle:
        handle.write("category,bins,coverage\n")
        for cat in dictionary.categories:
            kept = sum(b.frequency for b in cat.bins)
            dropped = sum(f for _, f in report.dropped_per_category.get(cat.name, []))
            total = kept + dropped
            cat_coverage = kept / total if total else 1.0
            handle.write(f"{cat.name},{cat.size},{cat_coverage:.4f}\n")
    with open(out / "imbalance.csv", "w", encoding="utf-8") as handle:
        handle.write("category,label,frequency\n")
        for cat in dictionary.categories:
            for b in cat.bins:
                handle.write(f"{cat.name},{b.label},{b.frequency}\n")
    with open(out / "dropped_labels.csv", "w", encoding="utf-8") as handle:
        handle.write("scope,category,label,frequency\n")
        for label, freq in report.dropped_global:
            handle.write(f"global,,{label},{freq}\n")
        for cat_name, dropped in sorted(report.dropped_per_category.items()):
            for label, freq in dropped:
                handle.write(f"category,{cat_name},{label},{freq}\n")
    _write_json(
        out / "curation_report.json",
        {
            "seed": cfg.seed,
            "coverage": cfg.coverage,
            "records": len(records),
            "removed_by_filter": removed,
            "total_label_instances": report.total_instances,
            "kept_global_labels": report.kept_global,
            "dropped_global_labels": [list(x) for x in report.dropped_global],
            "unmapped_labels": [list(x) for x in report.unmapped],
            "categories": {c.name: c.size for c in dictionary.categories},
            "dictionary_digest": dictionary.digest(),
        },
    )
    print(
        f"curated {len(records)} records into {dictionary.total_bins} bins "
        f"across {len(dictionary.categories)} categories -> {out / 'dictionary.json'}"
    )
    if report.unmapped:
        print(f"warning: {len(report.unmapped)} surviving labels had no role mapping")
    return 0


def cmd_split(cfg: RunConfig) -> int:
    _require(cfg, "dataset")
    out = _out_dir(cfg)
    records = conditions.load_records_csv(cfg.dataset)
    train, val, test = model_mod.split_dataset(records, cfg.seed)
    conditions.save_records_csv(train, out / "train.csv")
    conditions.save_records_csv(val, out / "validation.csv")
    conditions.save_records_csv(test, out / "test.csv")
    _write_json(
        out / "split.json",
        {
            "seed": cfg.seed,
            "train": len(train),
            "validation": len(val),
            "test": len(test),
        },
    )
    print(f"split {len(records)} records into {len(train)}/{len(val)}/{len(test)}")
    return 0


def _gpn_config(cfg: RunConfig) -> GpnConfig:
    return GpnConfig(
        architecture=cfg.arch,
        hidden_dim=cfg.hidden_dim,
        out_dim=cfg.out_dim,
        n_layers=cfg.n_layers,
    )


def cmd_train(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "dictionary")
    out = _out_dir(cfg)
    dictionary = ConditionDictionary.load(cfg.dictionary)
    records = conditions.load_records_csv(cfg.dataset)
    train_recs, val_recs, _ = model_mod.split_dataset(records, cfg.seed)
    train_cfg = model_mod.TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        seed=cfg.seed,
        learning_rate=cfg.learning_rate,
    )
    net = model_mod.build_model(
        _gpn_config(cfg),
        class_num=dictionary.total_bins,
        dictionary_digest=dictionary.digest(),
        seed=cfg.seed,
        mlp_hidden=cfg.mlp_hidden,
    )
    result = model_mod.train(net, train_recs, val_recs, dictionary, train_cfg)

    with open(out / "loss_trace.csv", "w", encoding="utf-8") as handle:
        handle.write("epoch,train_loss,validation_loss\n")
        for stats in result.trace:
            handle.write(
                f"{stats.epoch},{stats.train_loss!r},{stats.validation_loss!r}\n"
            )
    final_meta = {
        "seed": cfg.seed,
        "epoch": cfg.epochs,
        "validation_loss": result.trace[-1].validation_loss if result.trace else None,
        "kind": "final",
    }
    model_mod.save_checkpoint(net, out / "checkpoint_final.json", final_meta)
    best = model_mod.ReactionModel(
        gpn_config=net.gpn_config,
        class_num=net.class_num,
        mlp_hidden=net.mlp_hidden,
        dictionary_digest=net.dictionary_digest,
        params={
            name: tensor_mod.Tensor(values, requires_grad=True, name=name)
            for name, values in result.best_params.items()
        },
    )
    best_meta = {
        "seed": cfg.seed,
        "epoch": result.best_epoch,
        "validation_loss": (
            result.best_validation_loss if result.trace else None
        ),
        "kind": "best",
    }
    model_mod.save_checkpoint(best, out / "checkpoint_best.json", best_meta)
    print(
        f"trained {cfg.arch} for {cfg.epochs} epochs on {len(train_recs)} records; "
        f"checkpoints in {out}"
    )
    return 0


def cmd_eval(cfg: RunConfig) -> int:
    _require(cfg, "dataset", "dictionary")
    out = _out_dir(cfg)
    dictionary = ConditionDictionary.load(cfg.dictionary)
    records = conditions.load_records_csv(cfg.dataset)
    train_recs, _, test_recs = model_mod.split_dataset(records, cfg.seed)

    cache: dict = {}
    train_targets = [conditions.encode_targets(r, dictionary) for r in train_recs]
    dummy = evaluation.fit_dummy(train_targets, dictionary)
    pairs = [
        (model_mod.featurize_record(r, cache), conditions.encode_targets(r, dictionary))
        for r in test_recs
    ]

    net = None
    if cfg.values.get("checkpoint"):
        net, _ = model_mod.load_checkpoint(cfg.checkpoint)
        model_mod.check_digest(net, dictionary)
    reports = evaluation.evaluate(net, dummy, pairs, dictionary, ks=cfg.k)
    for report in reports:
        evaluation.write_report_csv(report, out / f"eval_top{report.k}.csv")
        evaluation.write_report_json(
            report, out / f"eval_top{report.k}.json", extra={"seed": cfg.seed}
        )
        summary = f"top-{report.k}: dummy only" if report.model_aer is None else (
            f"top-{report.k}: AER {report.model_aer:+.4f}"
            + (f" (excluded: {', '.join(report.excluded)})" if report.excluded else "")
        )
        print(summary)
    return 0


def _reaction_payload(cfg: RunConfig) -> dict:
    _require(cfg, "product")
    if not cfg.reactant:
        raise ConfigError("predict/explain require at least one --reactant")
    k = cfg.k if isinstance(cfg.k, int) else min(cfg.k)
    return {"reactants": list(cfg.reactant), "product": cfg.product, "k": k}


def _local_prediction(cfg: RunConfig, payload: dict) -> dict:
    _require(cfg, "checkpoint", "dictionary")
    net, _ = model_mod.load_checkpoint(cfg.checkpoint)
    dictionary = ConditionDictionary.load(cfg.dictionary)
    inputs = model_mod.ReactionInputs(
        reactants=[
            model_mod.FeaturizedMolecule.from_smiles(s) for s in payload["reactants"]
        ],
        product=model_mod.FeaturizedMolecule.from_smiles(payload["product"]),
    )
    ranked = model_mod.predict(net, inputs, dictionary)
    return {
        "categories": [
            {
                "category": c.name,
                "labels": [
                    {"label": label, "score": score}
                    for label, score in c.ranked[: payload["k"]]
                ],
            }
            for c in ranked.categories
        ]
    }


def _server_post(server: str, route: str, payload: dict) -> dict:
    import httpx

    response = httpx.post(server.rstrip("/") + route, json=payload, timeout=120.0)
    if response.status_code != 200:
        raise ConfigError(f"server returned {response.status_code}: {response.text}")
    return response.json()


def _print_prediction(result: dict, fmt: str, seed: int) -> None:
    if fmt == "json":
        print(json.dumps({**result, "seed": seed}, indent=2, sort_keys=True))
        return
    for entry in result["categories"]:
        ranked = ", ".join(
            f"{item['label']} ({item['score']:.4f})" for item in entry["labels"]
        )
        print(f"{entry['category']}: {ranked}")


def cmd_predict(cfg: RunConfig) -> int:
    payload = _reaction_payload(cfg)
    if cfg.values.get("server"):
        result = _server_post(cfg.server, "/predict", payload)
    else:
        result = _local_prediction(cfg, payload)
    _print_prediction(result, cfg.format, cfg.seed)
    return 0


def cmd_explain(cfg: RunConfig) -> int:
    payload = _reaction_payload(cfg)
    out = _out_dir(cfg)
    if cfg.values.get("server"):
        result = _server_post(cfg.server, "/explain", payload)
        molecules = result["molecules"]
        top1 = result["top1"]
        svg_sources = [m["svg"] for m in molecules]
        sidecar = {
            "format_version": interpret.SIDECAR_FORMAT_VERSION,
            "molecules": [
                {k: m[k] for k in ("role", "smiles", "scores")} for m in molecules
            ],
            "seed": cfg.seed,
        }
    else:
        _require(cfg, "checkpoint", "dictionary")
        net, _ = model_mod.load_checkpoint(cfg.checkpoint)
        dictionary = ConditionDictionary.load(cfg.dictionary)
        inputs = model_mod.ReactionInputs(
            reactants=[
                model_mod.FeaturizedMolecule.from_smiles(s) for s in payload["reactants"]
            ],
            product=model_mod.FeaturizedMolecule.from_smiles(payload["product"]),
        )
        ranked = model_mod.predict(net, inputs, dictionary)
        top1 = {c.name: c.ranked[0][0] for c in ranked.categories}
        activation_map = interpret.activations(net, inputs)
        graphs = [m.graph for _, m in inputs.molecules()]
        svg_sources = [
            interpret.render_svg(graph, mol.scores)
            for graph, mol in zip(graphs, activation_map.molecules)
        ]
        sidecar = interpret.sidecar_dict(activation_map, graphs)
        sidecar["seed"] = cfg.seed
        molecules = sidecar["molecules"]

    for index, (entry, svg) in enumerate(zip(molecules, svg_sources)):
        name = f"molecule{index}_{entry['role']}.svg"
        (out / name).write_text(svg, encoding="utf-8")
    _write_json(out / "activations.json", sidecar)
    for category, label in top1.items():
        print(f"{category}: {label}")
    print(f"wrote {len(svg_sources)} SVG file(s) to {out}")
    return 0


def cmd_serve(cfg: RunConfig) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(cfg.values.get("checkpoint"), cfg.values.get("dictionary"))
    uvicorn.run(app, host=cfg.host, port=cfg.port)
    return 0


_COMMANDS = {
    "curate": cmd_curate,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "explain": cmd_explain,
    "serve": cmd_serve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rxncond",
        description="Predict categorized reaction conditions from molecular graphs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="TOML config file; flags override it")
        p.add_argument("--seed", type=int, help="seed for all randomness (default 0)")
        p.add_argument("--out-dir", dest="out_dir", help="output directory")

    p = sub.add_parser("curate", help="build the condition dictionary from a CSV")
    common(p)
    p.add_argument("--dataset", help="reaction CSV file")
    p.add_argument("--roles", help="label<TAB>category[,category...] role map")
    p.add_argument("--aliases", help="variant<TAB>canonical alias map")
    p.add_argument("--coverage", type=float, help="cumulative coverage (default 0.95)")
    p.add_argument(
        "--use-temperature",
        dest="use_temperature",
        action="store_const",
        const=True,
        help="bin record temperatures as labels",
    )
    p.add_argument(
        "--filter",
        action="append",
        help="record filter, e.g. require-yield or max-reactants=2 (repeatable)",
    )

    p = sub.add_parser("split", help="write seeded train/validation/test CSVs")
    common(p)
    p.add_argument("--dataset", help="reaction CSV file")

    p = sub.add_parser("train", help="train a model against a curated dictionary")
    common(p)
    p.add_argument("--dataset", help="reaction CSV file")
    p.add_argument("--dictionary", help="dictionary JSON from curate")
    p.add_argument("--arch", choices=("nfp", "ggnn", "rgcn", "rsgcn"))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--out-dim", dest="out_dim", type=int)
    p.add_argument("--n-layers", dest="n_layers", type=int)
    p.add_argument("--mlp-hidden", dest="mlp_hidden", type=int)

    p = sub.add_parser("eval", help="score a checkpoint (or the dummy alone)")
    common(p)
    p.add_argument("--dataset", help="reaction CSV file")
    p.add_argument("--dictionary", help="dictionary JSON from curate")
    p.add_argument("--checkpoint", help="checkpoint JSON; omit for dummy-only")
    p.add_argument("--k", action="append", type=int, help="top-k values (repeatable)")

    p = sub.add_parser("predict", help="rank conditions for one reaction")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dictionary")
    p.add_argument("--reactant", action="append", help="reactant SMILES (repeatable)")
    p.add_argument("--product", help="product SMILES")
    p.add_argument("--k", type=int, help="labels per category")
    p.add_argument("--format", choices=("text", "json"))
    p.add_argument("--server", help="use a running service instead of local files")

    p = sub.add_parser("explain", help="render atom activations for one reaction")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dictionary")
    p.add_argument("--reactant", action="append")
    p.add_argument("--product")
    p.add_argument("--k", type=int)
    p.add_argument("--server")

    p = sub.add_parser("serve", help="start the HTTP service")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--dictionary")
    p.add_argument("--host")
    p.add_argument("--port", type=int)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _resolve(args)
        return _COMMANDS[args.command](cfg)
    except RxncondError as exc:
        print(f"{ERROR_PREFIX} {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"{ERROR_PREFIX} OSError: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
