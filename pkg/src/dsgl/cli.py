"""Command-line interface: data generation, splitting, training, evaluation,
ablation sweeps and graph inspection.

Configuration is layered: built-in defaults, then the DSGL_PRECISION
environment variable, then a flat key=value config file (--config), then
explicit flags. The effective configuration is echoed verbatim into the
output directory so a run can be reproduced from the echo alone.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import tensor as T
from .data import (EventLog, InteractionEvent, ParseError, SynthConfig, load_events,
                   negative_sample, synth_generate, temporal_split, write_events)
from .graphs import DsgSpec, batch_dsgs, build_index
from .metrics import UndefinedMetricError, auc as auc_metric, logloss as logloss_metric
from .model import (ABLATIONS, CheckpointError, ModelConfig, load_checkpoint,
                    save_checkpoint)
from .training import (PopularityModel, TrainConfig, TrainingDivergedError,
                       evaluate, train)

# name -> (parser, default, help); parsers turn config-file strings into values
_FIELDS: dict[str, tuple] = {
    "depth": (int, 3, "user-rooted graph depth (item side is one level less)"),
    "user_fanouts": ("ints", (100, 5, 5), "per-level truncation of the user tree"),
    "item_fanouts": ("ints", (50, 5), "per-level truncation of the item tree"),
    "d_user": (int, 64, "user id embedding width"),
    "d_item": (int, 32, "item id embedding width"),
    "d_cat": (int, 32, "category id embedding width"),
    "d_time": (int, 32, "time-decay embedding width"),
    "hidden": (int, 64, "encoder/attention width"),
    "heads": (int, 4, "attention heads"),
    "mlp_hidden": ("ints", (256, 128), "prediction head hidden widths"),
    "time_base": (float, 2.0, "base of the time-decay bucket bounds"),
    "time_buckets": (int, 40, "number of time-decay buckets"),
    "attn_scale_outside": ("bool", False, "apply 1/sqrt(d) after the softmax"),
    "loss_reduction": (str, "mean", "mean or sum over the batch"),
    "batch_size": (int, 128, "mini-batch size"),
    "lr": (float, 0.001, "Adam learning rate"),
    "max_steps": (int, 5000, "training step budget"),
    "eval_every": (int, 100, "steps between validation evaluations"),
    "patience": (int, 10, "evaluations without AUC improvement before stopping"),
    "seed": (int, 0, "global seed"),
    "train_frac": (float, 0.85, "leading fraction of events used for training"),
    "valid_frac": (float, 0.10, "trailing fraction of the training span held out"),
    "index_scope": (str, "train_only", "history index at evaluation: train_only|causal_all"),
    "precision": (str, "f64", "f32 or f64 (env DSGL_PRECISION sets the default)"),
}

ABLATE_VARIANTS = ("full", "no_time", "no_seq_enc", "no_tase", "no_att",
                   "no_taatt", "no_paatt", "no_lc", "layer1", "layer2", "layer3")


def _parse_value(name: str, raw: str):
    kind = _FIELDS[name][0]
    if kind == "ints":
        return tuple(int(x) for x in raw.split(",")) if raw not in ("", "-") else ()
    if kind == "bool":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return kind(raw)


def _read_config_file(path) -> dict:
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {line!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "ablate":
                out.setdefault("ablate", [])
                out["ablate"].extend(x for x in value.split(",") if x)
            elif key in _FIELDS:
                out[key] = _parse_value(key, value)
            else:
                raise ValueError(f"{path}:{line_no}: unknown config key {key!r}")
    return out


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    for name, (kind, default, help_text) in _FIELDS.items():
        flag = "--" + name.replace("_", "-")
        if kind == "ints":
            p.add_argument(flag, type=str, default=None, help=help_text, metavar="N,N,...")
        elif kind == "bool":
            p.add_argument(flag, action="store_const", const=True, default=None,
                           help=help_text)
        else:
            p.add_argument(flag, type=kind, default=None, help=help_text)
    p.add_argument("--ablate", action="append", default=None, choices=ABLATIONS,
                   help="disable one component (repeatable)")
    p.add_argument("--config", default=None, help="flat key=value config file")


def _effective_config(args) -> dict:
    cfg = {name: default for name, (_, default, _) in _FIELDS.items()}
    cfg["ablate"] = []
    env_precision = os.environ.get("DSGL_PRECISION")
    if env_precision:
        if env_precision not in ("f32", "f64"):
            raise ValueError(f"DSGL_PRECISION must be f32 or f64, got {env_precision!r}")
        cfg["precision"] = env_precision
    if getattr(args, "config", None):
        cfg.update(_read_config_file(args.config))
    for name, (kind, _, _) in _FIELDS.items():
        given = getattr(args, name, None)
        if given is not None:
            cfg[name] = _parse_value(name, given) if kind == "ints" else given
    if getattr(args, "ablate", None):
        cfg["ablate"] = list(dict.fromkeys(list(cfg["ablate"]) + list(args.ablate)))
    return cfg


def _echo_lines(command: str, cfg: dict, extra: dict) -> list[str]:
    lines = [f"command={command}"]
    for k, v in extra.items():
        lines.append(f"{k}={v}")
    for name in sorted(_FIELDS):
        v = cfg[name]
        if isinstance(v, tuple):
            v = ",".join(map(str, v)) or "-"
        elif isinstance(v, bool):
            v = int(v)
        lines.append(f"{name}={v}")
    lines.append("ablate=" + (",".join(cfg["ablate"]) or "-"))
    return lines


def _model_config(cfg: dict, log: EventLog, *, depth=None, ablations=None) -> ModelConfig:
    depth = cfg["depth"] if depth is None else depth
    spec = DsgSpec(depth, cfg["user_fanouts"], cfg["item_fanouts"])
    return ModelConfig(
        num_users=log.num_users, num_items=log.num_items,
        num_categories=log.num_categories,
        d_user=cfg["d_user"], d_item=cfg["d_item"], d_cat=cfg["d_cat"],
        d_time=cfg["d_time"], hidden=cfg["hidden"], heads=cfg["heads"],
        mlp_hidden=cfg["mlp_hidden"], time_base=cfg["time_base"],
        time_buckets=cfg["time_buckets"], spec=spec,
        ablations=tuple(cfg["ablate"]) if ablations is None else tuple(ablations),
        attn_scale_outside=cfg["attn_scale_outside"],
        loss_reduction=cfg["loss_reduction"],
    )


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(batch_size=cfg["batch_size"], lr=cfg["lr"],
                       max_steps=cfg["max_steps"], eval_every=cfg["eval_every"],
                       patience=cfg["patience"], seed=cfg["seed"],
                       precision=cfg["precision"], index_scope=cfg["index_scope"])


def _prepare_data(cfg: dict, data_path):
    log = load_events(data_path)
    train_log, valid_log, test_log = temporal_split(log, cfg["train_frac"], cfg["valid_frac"])
    seed = cfg["seed"]
    train_samples = negative_sample(train_log, log, seed=seed)
    valid_samples = negative_sample(valid_log, log, seed=seed + 1)
    test_samples = negative_sample(test_log, log, seed=seed + 2)
    train_index = build_index(train_log)
    eval_index = build_index(log) if cfg["index_scope"] == "causal_all" else train_index
    return log, train_samples, valid_samples, test_samples, train_index, eval_index


def cmd_gen(args) -> int:
    synth = SynthConfig(num_users=args.users, num_items=args.items,
                        num_clusters=args.clusters, num_events=args.events,
                        drift_prob=args.drift_prob, noise_prob=args.noise_prob,
                        seed=args.seed)
    log = synth_generate(synth)
    write_events(args.out, log)
    print(f"wrote {len(log)} events to {args.out}")
    return 0


def cmd_split(args) -> int:
    cfg = _effective_config(args)
    log = load_events(args.data)
    parts = temporal_split(log, cfg["train_frac"], cfg["valid_frac"])
    os.makedirs(args.out, exist_ok=True)
    for name, part in zip(("train", "valid", "test"), parts):
        path = os.path.join(args.out, f"{name}.txt")
        write_events(path, part)
        print(f"{name}: {len(part)} events -> {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _effective_config(args)
    log, train_samples, valid_samples, _test, train_index, _eval = \
        _prepare_data(cfg, args.data)
    model_cfg = _model_config(cfg, log)
    tcfg = _train_config(cfg)
    os.makedirs(args.out, exist_ok=True)
    echo = _echo_lines("train", cfg, {"data": args.data, "out": args.out})
    with open(os.path.join(args.out, "config.echo"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(echo) + "\n")
    params, report = train(model_cfg, train_samples, valid_samples, train_index, tcfg)
    report.write(os.path.join(args.out, "report.log"))
    save_checkpoint(os.path.join(args.out, "checkpoint.bin"), params,
                    step=report.best_step)
    print(f"best_step={report.best_step} best_valid_auc={report.best_valid_auc:.6f} "
          f"reason={report.stopped_reason}")
    return 0


def cmd_eval(args) -> int:
    cfg = _effective_config(args)
    params, _step = load_checkpoint(args.checkpoint)
    log = load_events(args.data)
    train_log, _valid_log, test_log = temporal_split(log, cfg["train_frac"],
                                                     cfg["valid_frac"])
    index = build_index(log) if cfg["index_scope"] == "causal_all" \
        else build_index(train_log)
    samples = negative_sample(test_log, log, seed=cfg["seed"] + 2)
    if not samples:
        raise ValueError("test split is empty; nothing to evaluate")
    with T.using_dtype(params.dtype):
        auc, ll = evaluate(params, params.config, samples, index)
    print(f"auc={auc:.6f} logloss={ll:.6f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _effective_config(args)
    log, train_samples, valid_samples, test_samples, train_index, eval_index = \
        _prepare_data(cfg, args.data)
    os.makedirs(args.out, exist_ok=True)
    echo = _echo_lines("ablate", cfg, {"data": args.data, "out": args.out})
    with open(os.path.join(args.out, "config.echo"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(echo) + "\n")
    tcfg = _train_config(cfg)
    rows = []
    for variant in ABLATE_VARIANTS:
        try:
            extra_ablations = list(cfg["ablate"])
            depth = None
            if variant.startswith("layer"):
                depth = int(variant[-1])
            elif variant != "full":
                extra_ablations.append(variant)
            model_cfg = _model_config(cfg, log, depth=depth,
                                      ablations=tuple(dict.fromkeys(extra_ablations)))
            params, _report = train(model_cfg, train_samples, valid_samples,
                                    train_index, tcfg)
            with T.using_dtype(params.dtype):
                auc, ll = evaluate(params, model_cfg, test_samples, eval_index)
            rows.append((variant, f"{auc:.6f}", f"{ll:.6f}"))
        except (ValueError, TrainingDivergedError, UndefinedMetricError) as exc:
            rows.append((variant, "error", str(exc)))
    tsv_path = os.path.join(args.out, "ablate.tsv")
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write("variant\tauc\tlogloss\n")
        for row in rows:
            fh.write("\t".join(row) + "\n")
    width = max(len(r[0]) for r in rows)
    print(f"{'variant'.ljust(width)}  {'auc':>10}  logloss")
    for variant, a, ll in rows:
        print(f"{variant.ljust(width)}  {a:>10}  {ll}")
    return 0


def cmd_inspect_dsg(args) -> int:
    cfg = _effective_config(args)
    log = load_events(args.data)
    index = build_index(log)
    t = args.time if args.time is not None else (log.events[-1].timestamp + 1 if len(log) else 1)
    item_id = args.item if args.item is not None else 0
    cats = {e.item_id: e.category_id for e in log.events}
    sample = InteractionEvent(args.user, item_id, cats.get(item_id, 0), t, 0)
    depth = cfg["depth"]
    spec = DsgSpec(depth, cfg["user_fanouts"], cfg["item_fanouts"])
    batch = batch_dsgs(index, [sample], spec)
    print(f"query: user={args.user} item={item_id} t={t} "
          f"(depth {spec.user_depth}/{spec.item_depth})")
    for tree, levels in (("user", batch.user_levels), ("item", batch.item_levels)):
        print(f"{tree}-rooted tree:")
        if not levels:
            print("  (no levels)")
        for k, lv in enumerate(levels, start=1):
            print(f"  level {k} ({lv.side} nodes), shape {lv.node_ids.shape[1:]}:")
            print(f"    ids:    {lv.node_ids[0].tolist()}")
            if lv.category_ids is not None:
                print(f"    cats:   {lv.category_ids[0].tolist()}")
            print(f"    deltas: {lv.time_decays[0].tolist()}")
            print(f"    mask:   {lv.valid_mask[0].tolist()}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dsgl",
        description="dynamic sequential graph learning for click prediction")
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("gen", help="generate a synthetic event file")
    p_gen.add_argument("--users", type=int, default=100)
    p_gen.add_argument("--items", type=int, default=50)
    p_gen.add_argument("--clusters", type=int, default=2)
    p_gen.add_argument("--events", type=int, default=10000)
    p_gen.add_argument("--drift-prob", type=float, default=0.01)
    p_gen.add_argument("--noise-prob", type=float, default=0.2)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", required=True, help="event file to write")
    p_gen.set_defaults(func=cmd_gen)

    p_split = sub.add_parser("split", help="temporal train/valid/test split")
    p_split.add_argument("--data", required=True)
    p_split.add_argument("--out", required=True, help="directory for the split files")
    _add_model_flags(p_split)
    p_split.set_defaults(func=cmd_split)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--data", required=True)
    p_train.add_argument("--out", required=True, help="output directory")
    _add_model_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on the test split")
    p_eval.add_argument("--data", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    _add_model_flags(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="train and score every model variant")
    p_ablate.add_argument("--data", required=True)
    p_ablate.add_argument("--out", required=True)
    _add_model_flags(p_ablate)
    p_ablate.set_defaults(func=cmd_ablate)

    p_inspect = sub.add_parser("inspect-dsg", help="print one query's graph levels")
    p_inspect.add_argument("--data", required=True)
    p_inspect.add_argument("--user", type=int, required=True)
    p_inspect.add_argument("--item", type=int, default=None)
    p_inspect.add_argument("--time", type=int, default=None)
    _add_model_flags(p_inspect)
    p_inspect.set_defaults(func=cmd_inspect_dsg)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, CheckpointError, UndefinedMetricError, TrainingDivergedError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
