"""Command-line interface.

Subcommands: ``synth`` (write a synthetic dataset), ``train`` (dataset ->
model file + metrics), ``eval`` (model + dataset -> metrics), ``embed``
(model + dataset -> embedding export), ``sweep`` (k-sweep table).

Training configuration comes from an optional JSON file mirroring
TrainConfig field-for-field; every field can be overridden with a
``--<field> value`` flag. The metrics file is deterministic for a fixed
(config, seed, input): the measured runtime goes to stderr, not the file.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .data import generate_synthetic, load_flows, save_flows, synthetic_preset
from .errors import ConfigError, DataError, DimensionError, NumericError
from .metrics import MetricsReport, evaluate
from .pipeline import (
    TrainConfig,
    export_embeddings,
    k_sweep,
    load_model,
    predict,
    run_pipeline,
    save_model,
    write_sweep_table,
)

_PRESETS = ("blobs3", "cse_like", "unsw_like")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One override flag per TrainConfig field (e.g. --lr-encoder 1e-3)."""
    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("int", int):
            parser.add_argument(flag, dest=f.name, type=int, default=None)
        elif f.type in ("float", float):
            parser.add_argument(flag, dest=f.name, type=float, default=None)
        else:
            parser.add_argument(flag, dest=f.name, type=str, default=None)


def _build_config(args: argparse.Namespace, require_seed: bool) -> TrainConfig:
    values: dict = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                values = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(values, dict):
            raise ConfigError("config file must hold a JSON object")
    for f in dataclasses.fields(TrainConfig):
        override = getattr(args, f.name, None)
        if override is not None:
            values[f.name] = override
    if require_seed and "seed" not in values:
        raise ConfigError("--seed is required for this command")
    return TrainConfig.from_dict(values)


def _add_source_args(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--data", help="flow file (CSV with header)")
    group.add_argument("--preset", choices=_PRESETS, help="built-in synthetic dataset")
    parser.add_argument(
        "--preset-flows", type=int, default=None, help="flow count for --preset"
    )
    parser.add_argument(
        "--preset-seed", type=int, default=None,
        help="generator seed for --preset (defaults to the training seed)",
    )


def _resolve_source(args: argparse.Namespace, cfg: TrainConfig):
    if args.data is not None:
        return args.data
    seed = args.preset_seed if args.preset_seed is not None else cfg.seed
    return synthetic_preset(args.preset, seed=seed, n_flows=args.preset_flows)


def _write_metrics(metrics: MetricsReport, path: str | None) -> None:
    doc = json.dumps(metrics.to_dict(include_runtime=False), sort_keys=True, indent=1) + "\n"
    if path:
        with open(path, "w") as fh:
            fh.write(doc)
    else:
        sys.stdout.write(doc)


def _cmd_synth(args: argparse.Namespace) -> int:
    cfg = synthetic_preset(args.preset, seed=args.seed, n_flows=args.n_flows)
    if args.attack_fraction is not None:
        cfg = dataclasses.replace(cfg, attack_fraction=args.attack_fraction)
    if args.n_hosts is not None:
        cfg = dataclasses.replace(cfg, n_hosts=args.n_hosts)
    ds = generate_synthetic(cfg)
    save_flows(ds, args.out)
    print(f"wrote {len(ds)} flows ({int(ds.labels.sum())} attacks) to {args.out}", file=sys.stderr)
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args, require_seed=True)
    source = _resolve_source(args, cfg)
    result = run_pipeline(cfg, source)
    if args.model_out:
        save_model(result.model, args.model_out)
    _write_metrics(result.metrics, args.metrics_out)
    if args.embeddings_out:
        mask = result.selection.mal_mask(result.g_train.num_edges)
        export_embeddings(
            result.h_train, result.g_train.labels, args.embeddings_out, fewshot_mask=mask
        )
    print(f"runtime: {result.metrics.runtime_seconds:.2f}s", file=sys.stderr)
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    ds = load_flows(args.data)
    g, _h, _probs, preds = predict(model, ds)
    metrics = evaluate(preds, g.labels)
    _write_metrics(metrics, args.metrics_out)
    return 0


def _cmd_embed(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    ds = load_flows(args.data)
    g, h, _probs, _preds = predict(model, ds)
    export_embeddings(h, g.labels, args.out)
    print(f"wrote {h.shape[0]} embeddings to {args.out}", file=sys.stderr)
    return 0


def _cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _build_config(args, require_seed=True)
    source = _resolve_source(args, cfg)
    try:
        k_values = [int(v) for v in args.k_values.split(",") if v != ""]
    except ValueError:
        raise ConfigError(f"--k-values must be comma-separated integers, got {args.k_values!r}")
    if not k_values:
        raise ConfigError("--k-values is empty")
    rows = k_sweep(cfg, k_values, source)
    write_sweep_table(rows, args.out)
    for row in rows:
        print(
            f"k={row['k']}: macro_f1={row['macro_f1']:.4f} "
            f"attack_precision={row['attack_precision']:.4f}",
            file=sys.stderr,
        )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flowshot",
        description="few-shot GNN detection of malicious flows in a host graph",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic flow dataset")
    p.add_argument("--preset", choices=_PRESETS, default="blobs3")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-flows", type=int, default=None)
    p.add_argument("--n-hosts", type=int, default=None)
    p.add_argument("--attack-fraction", type=float, default=None)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("train", help="train a model and report test metrics")
    _add_source_args(p)
    p.add_argument("--config", help="JSON config mirroring TrainConfig")
    p.add_argument("--model-out", help="where to write the trained model")
    p.add_argument("--metrics-out", help="metrics JSON (default: stdout)")
    p.add_argument("--embeddings-out", help="optional train-embedding export")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="score a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metrics-out", help="metrics JSON (default: stdout)")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("embed", help="export edge embeddings for a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_embed)

    p = sub.add_parser("sweep", help="run the pipeline across several k values")
    _add_source_args(p)
    p.add_argument("--config", help="JSON config mirroring TrainConfig")
    p.add_argument("--k-values", required=True, help="comma-separated, e.g. 0,1,2,4")
    p.add_argument("--out", required=True, help="CSV table destination")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
