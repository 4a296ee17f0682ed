"""Command-line interface: training, evaluation, diagnostics, and exports.

Configuration is a flat JSON object whose keys mirror the preset tables
(``lr``, ``dropout``, ``hidden``, ``lambda0``, ``lambda1``, ``alpha``,
``prop_step``, ...).  Precedence: built-in defaults, then ``--preset``, then
``--config``, then repeated ``--set key=value`` overrides, then explicit
flags such as ``--seed``.  Unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from importlib import resources

import numpy as np

from .autodiff import Tape, check_gradients, format_report
from .data import SyntheticSpec, generate_synthetic, load_dataset, make_splits, save_dataset
from .energy import EnergyParams
from .hypergraph import build_expansion_operators, load_hypergraph
from .linalg import write_matrix_market
from .model import (
    ModelConfig,
    build_taped_logits,
    descent_trace,
    init_model,
    load_checkpoint,
    save_checkpoint,
    step_bound_general,
    step_bound_simple,
)
from .train import TrainConfig, evaluate, train

CONFIG_DEFAULTS = {
    "dataset": None,
    "variant": "simple",
    "lr": 0.01,
    "dropout": 0.0,
    "hidden": 64,
    "lambda0": 1.0,
    "lambda1": 1.0,
    "alpha": 0.1,
    "prop_step": 16,
    "relu_mode": "every_step",
    "strict_alpha": False,
    "epochs": 200,
    "weight_decay": 0.0,
    "optimizer": "adam",
    "seed": 0,
    "patience": 100,
    "dropout_inputs": True,
    "dropout_features": True,
    "resplit": False,
}


def _reject_unknown(keys, origin: str) -> None:
    unknown = sorted(set(keys) - set(CONFIG_DEFAULTS))
    if unknown:
        raise ValueError(f"{origin}: unknown config keys {unknown}")


def load_preset(name: str) -> dict:
    base = resources.files("phenomnn").joinpath("presets")
    path = base.joinpath(f"{name}.json")
    if not path.is_file():
        available = sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))
        raise ValueError(f"unknown preset {name!r}; available: {', '.join(available)}")
    return json.loads(path.read_text(encoding="utf-8"))


def resolve_config(args) -> dict:
    cfg = dict(CONFIG_DEFAULTS)
    if getattr(args, "preset", None):
        preset = load_preset(args.preset)
        _reject_unknown(preset, f"preset {args.preset}")
        cfg.update(preset)
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as f:
            user = json.load(f)
        _reject_unknown(user, args.config)
        cfg.update(user)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ValueError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        _reject_unknown([key], "--set")
        try:
            cfg[key] = json.loads(raw)
        except json.JSONDecodeError:
            cfg[key] = raw
    if getattr(args, "seed", None) is not None:
        cfg["seed"] = args.seed
    if getattr(args, "data", None):
        cfg["dataset"] = args.data
    return cfg


def model_config(cfg: dict) -> ModelConfig:
    return ModelConfig(
        variant=cfg["variant"],
        t_layers=int(cfg["prop_step"]),
        d=int(cfg["hidden"]),
        alpha=float(cfg["alpha"]),
        lambda0=float(cfg["lambda0"]),
        lambda1=float(cfg["lambda1"]),
        relu_mode=cfg["relu_mode"],
        strict_alpha=bool(cfg["strict_alpha"]),
    )


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(
        lr=float(cfg["lr"]),
        dropout=float(cfg["dropout"]),
        epochs=int(cfg["epochs"]),
        weight_decay=float(cfg["weight_decay"]),
        optimizer=cfg["optimizer"],
        seed=int(cfg["seed"]),
        early_stop_patience=int(cfg["patience"]),
        dropout_inputs=bool(cfg["dropout_inputs"]),
        dropout_features=bool(cfg["dropout_features"]),
    )


def _need_dataset(cfg: dict):
    if not cfg["dataset"]:
        raise ValueError("no dataset given (use --data, or 'dataset' in the config)")
    return load_dataset(cfg["dataset"])


def _out_dir(args) -> str:
    out = getattr(args, "out", None) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _single_run(cfg: dict, seed: int, resplit: bool):
    dataset = _need_dataset(cfg)
    if resplit:
        dataset.splits = make_splits(dataset.hypergraph.n, seed=seed)
        dataset.validate()
    run_cfg = dict(cfg)
    run_cfg["seed"] = seed
    model, metrics = train(dataset, model_config(run_cfg), train_config(run_cfg))
    return model, metrics


def _worker(payload):
    cfg, seed, resplit = payload
    _, metrics = _single_run(cfg, seed, resplit)
    return {"seed": seed, **{k: v for k, v in metrics.summary().items() if k != "energy_trace"}}


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(args)
    repeats = args.repeats or 1
    if repeats == 1:
        model, metrics = _single_run(cfg, int(cfg["seed"]), bool(cfg["resplit"]))
        metrics.write(out)
        save_checkpoint(model, os.path.join(out, "checkpoint.json"))
        print(
            f"trained {cfg['variant']} variant: best val acc {metrics.best_val_acc:.4f}, "
            f"test acc {metrics.final_test_acc:.4f} (epoch {metrics.best_epoch})"
        )
        return 0
    payloads = [(cfg, int(cfg["seed"]) + i, bool(cfg["resplit"])) for i in range(repeats)]
    if args.parallel:
        import multiprocessing as mp

        workers = min(repeats, int(os.environ.get("PHENOMNN_THREADS", os.cpu_count() or 1)))
        with mp.Pool(workers) as pool:
            results = pool.map(_worker, payloads)
    else:
        results = [_worker(p) for p in payloads]
    accs = np.array([r["final_test_acc"] for r in results])
    summary = {
        "repeats": repeats,
        "mean_test_acc": float(accs.mean()),
        "std_test_acc": float(accs.std()),
        "runs": results,
    }
    with open(os.path.join(out, "summary.json"), "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    print(f"{repeats} runs: test acc {accs.mean():.4f} +/- {accs.std():.4f}")
    return 0


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    dataset = _need_dataset(cfg)
    model = load_checkpoint(args.checkpoint)
    acc = evaluate(model, dataset, args.split)
    print(f"{args.split} accuracy: {acc:.4f}")
    return 0


def cmd_energy_trace(args) -> int:
    cfg = resolve_config(args)
    dataset = _need_dataset(cfg)
    mc = model_config(cfg)
    ops = build_expansion_operators(dataset.hypergraph, mc.lambda0, mc.lambda1)
    model = init_model(mc, dataset.features.shape[1], dataset.n_classes, seed=int(cfg["seed"]))
    fx = model.predictor.apply(dataset.features)
    rows = descent_trace(
        fx,
        fx,
        ops,
        model.params,
        dataset.hypergraph,
        steps=args.steps or mc.t_layers,
        variant=mc.variant,
        relu=mc.relu_mode == "every_step",
    )
    lines = ["iteration,energy,feasible,grad_norm"]
    lines += [f"{t},{e!r},{int(feas)},{g!r}" for t, e, feas, g in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = _out_dir(args)
        with open(os.path.join(out, "energy_trace.csv"), "w", encoding="utf-8") as f:
            f.write(text)
        print(f"wrote {len(rows)} trace rows to {os.path.join(out, 'energy_trace.csv')}")
    else:
        sys.stdout.write(text)
    return 0


def cmd_check_gradients(args) -> int:
    cfg = resolve_config(args)
    if cfg["dataset"]:
        dataset = _need_dataset(cfg)
    else:
        dataset = generate_synthetic(
            SyntheticSpec(nodes_per_community=12, num_edges=10, feature_dim=5, seed=int(cfg["seed"]))
        )
    mc = model_config(cfg)
    ops = build_expansion_operators(dataset.hypergraph, mc.lambda0, mc.lambda1)
    model = init_model(mc, dataset.features.shape[1], dataset.n_classes, seed=int(cfg["seed"]))
    base = model.parameters()
    rows = dataset.split_indices("train")
    labels = dataset.labels[rows]

    def build(params):
        for name, arr in params.items():
            live = base[name]
            if arr is not live:
                live[...] = arr
        tape = Tape()
        logits = build_taped_logits(tape, model, ops, dataset.features)
        loss = tape.softmax_cross_entropy(logits, labels, rows)
        return tape, loss

    report = check_gradients(build, base, samples=args.samples, step=args.step, seed=int(cfg["seed"]))
    text = format_report(report)
    if args.out:
        out = _out_dir(args)
        with open(os.path.join(out, "gradient_report.json"), "w", encoding="utf-8") as f:
            f.write(text + "\n")
    print(text)
    return 0 if report["passed"] else 1


def cmd_step_bound(args) -> int:
    cfg = resolve_config(args)
    if cfg["dataset"]:
        hg = load_dataset(cfg["dataset"]).hypergraph
    elif args.hypergraph:
        hg = load_hypergraph(args.hypergraph)
    else:
        raise ValueError("step-bound needs --data or --hypergraph")
    mc = model_config(cfg)
    ops = build_expansion_operators(hg, mc.lambda0, mc.lambda1)
    if mc.variant == "simple":
        bound = step_bound_simple(ops)
    else:
        bound = step_bound_general(ops, EnergyParams.identity(mc.d, mc.lambda0, mc.lambda1, mc.alpha))
    status = "converged" if bound.eig.converged else f"NOT converged (residual {bound.eig.residual:.3g})"
    print(f"step bound ({mc.variant}): {bound.value:.10g}  [sigma={bound.sigma:.6g}, {status}]")
    if mc.alpha >= bound.value:
        print(f"configured alpha={mc.alpha} exceeds the bound")
    return 0


def cmd_expand(args) -> int:
    cfg = resolve_config(args)
    if cfg["dataset"]:
        hg = load_dataset(cfg["dataset"]).hypergraph
    elif args.hypergraph:
        hg = load_hypergraph(args.hypergraph)
    else:
        raise ValueError("expand needs --data or --hypergraph")
    out = _out_dir(args)
    ops = build_expansion_operators(hg, cfg["lambda0"], cfg["lambda1"])
    clique_path = os.path.join(out, "clique_adjacency.mtx")
    star_path = os.path.join(out, "star_normalized.mtx")
    write_matrix_market(ops.a_c, clique_path)
    write_matrix_market(ops.a_s_bar, star_path)
    print(f"n={hg.n} m={hg.m} nnz(A_C)={ops.a_c.nnz} nnz(A_S_bar)={ops.a_s_bar.nnz}")
    if hg.collapsed_duplicates:
        print(f"warning: collapsed {hg.collapsed_duplicates} duplicate node ids within hyperedges")
    print(f"wrote {clique_path} and {star_path}")
    return 0


def cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec(
        communities=args.communities,
        nodes_per_community=args.nodes_per_community,
        num_edges=args.edges,
        edge_size_min=args.edge_size_min,
        edge_size_max=args.edge_size_max,
        p_intra=args.p_intra,
        feature_dim=args.feature_dim,
        noise_std=args.noise_std,
        seed=args.seed if args.seed is not None else 0,
    )
    ds = generate_synthetic(spec)
    out = _out_dir(args)
    save_dataset(out, ds)
    print(f"wrote synthetic dataset to {out}: n={ds.hypergraph.n} m={ds.hypergraph.m} c={ds.n_classes}")
    return 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a JSON run config")
    p.add_argument("--preset", help="name of a shipped preset")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="seed for all randomness")
    p.add_argument("--out", help="output directory")
    p.add_argument("--data", help="dataset directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="phenomnn",
        description="Hypergraph node classification via unrolled energy descent layers",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write metrics + checkpoint")
    _add_common(p)
    p.add_argument("--repeats", type=int, default=1, help="number of seeded runs")
    p.add_argument("--parallel", action="store_true", help="run repeats in parallel processes")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("energy-trace", help="emit the descent energy trace as CSV")
    _add_common(p)
    p.add_argument("--steps", type=int, help="number of descent steps (default: prop_step)")
    p.set_defaults(func=cmd_energy_trace)

    p = sub.add_parser("check-gradients", help="compare tape gradients against finite differences")
    _add_common(p)
    p.add_argument("--samples", type=int, default=128)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_check_gradients)

    p = sub.add_parser("step-bound", help="print the convergence step-size bound")
    _add_common(p)
    p.add_argument("--hypergraph", help="hypergraph file (alternative to --data)")
    p.set_defaults(func=cmd_step_bound)

    p = sub.add_parser("expand", help="export expansion operators in Matrix Market format")
    _add_common(p)
    p.add_argument("--hypergraph", help="hypergraph file (alternative to --data)")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("gen-synthetic", help="generate a synthetic community dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--communities", type=int, default=2)
    p.add_argument("--nodes-per-community", type=int, default=100)
    p.add_argument("--edges", type=int, default=60)
    p.add_argument("--edge-size-min", type=int, default=4)
    p.add_argument("--edge-size-max", type=int, default=8)
    p.add_argument("--p-intra", type=float, default=1.0)
    p.add_argument("--feature-dim", type=int, default=8)
    p.add_argument("--noise-std", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_synthetic)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
