"""Command-line interface: dataset generation and conversion, noise
calibration, training, evaluation/inference, and the membership-inference
audit, with JSONL metrics and JSON run manifests.

Exit codes: 0 ok, 2 usage/config error, 3 infeasible budget, 4 I/O error,
5 internal invariant violation.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

from privgnn import __version__, aggregation, graphs, pipeline
from privgnn.accounting import (
    DEFAULT_ALPHA_GRID,
    InfeasibleBudgetError,
    PrivacyBudget,
    SampledGaussianParams,
    calibrate_sigma,
    compose,
    dense_alpha_grid,
    rdp_to_dp,
    sampled_gaussian_rdp,
)
from privgnn.aggregation import PmaConfig, derive_seed, pma_rdp_curve
from privgnn.attack import AttackConfig, run_membership_attack
from privgnn.graphs import GraphFormatError
from privgnn.pipeline import GapConfig

ACCOUNTING_ASSUMPTION = "poisson-subsampled DP-Adam accounting"


class ConfigError(Exception):
    """Bad or missing configuration (exit code 2)."""


# ---------------------------------------------------------------------------
# Config files: flat `section.key = value` lines, or the same schema as JSON.
# ---------------------------------------------------------------------------

_REQUIRED = object()


def _coerce(text):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    for parse in (int, float):
        try:
            return parse(text)
        except ValueError:
            continue
    return text


def parse_config_text(text):
    text_stripped = text.lstrip()
    if text_stripped.startswith("{"):
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
    cfg = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        node = cfg
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"config line {lineno}: key conflict at {part}")
        node[parts[-1]] = _coerce(value)
    return cfg


def load_config(path):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text)


def config_get(cfg, dotted, default=_REQUIRED):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            if default is _REQUIRED:
                raise ConfigError(f"missing required key `{dotted}`")
            return default
        node = node[part]
    return node


def build_gap_config(cfg, seed_override=None):
    level = config_get(cfg, "privacy.level")
    if level not in ("none", "edge", "node"):
        raise ConfigError("privacy.level must be none, edge, or node")
    budget = None
    if level != "none":
        budget = PrivacyBudget(
            epsilon=float(config_get(cfg, "privacy.epsilon")),
            delta=float(config_get(cfg, "privacy.delta")),
            level=level,
        )
    seed = config_get(cfg, "train.seed", 0)
    env_seed = os.environ.get("GAP_SEED")
    if env_seed is not None:
        seed = int(env_seed)
    if seed_override is not None:
        seed = seed_override
    gap_cfg = GapConfig(
        hops=config_get(cfg, "model.hops", 2),
        hidden_dim=config_get(cfg, "model.hidden_dim", 16),
        encoder_layers=config_get(cfg, "model.encoder_layers", 2),
        base_layers=config_get(cfg, "model.base_layers", 1),
        head_layers=config_get(cfg, "model.head_layers", 1),
        combine=config_get(cfg, "model.combine", "concat"),
        privacy=level,
        budget=budget,
        max_degree=config_get(cfg, "privacy.max_degree", None),
        epochs=config_get(cfg, "train.epochs", 100),
        batch_size=config_get(cfg, "train.batch_size", 0),
        learning_rate=config_get(cfg, "train.learning_rate", 0.01),
        clip_norm=config_get(cfg, "train.clip_norm", 1.0),
        patience=config_get(cfg, "train.patience", 20),
        seed=seed,
    )
    try:
        gap_cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return gap_cfg


# ---------------------------------------------------------------------------
# Metrics and manifests
# ---------------------------------------------------------------------------


def _jsonable(value):
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if math.isnan(value):
            return "nan"
    return value


def privacy_context(cfg: GapConfig):
    return {
        "level": cfg.privacy,
        "epsilon": _jsonable(cfg.budget.epsilon if cfg.budget else math.inf),
        "delta": _jsonable(cfg.budget.delta if cfg.budget else math.nan),
    }


def write_metrics(path, run_id, stage, values, cfg: GapConfig, seed, extra=None):
    with open(path, "a") as fh:
        for name, value in values.items():
            line = {
                "run_id": run_id,
                "stage": stage,
                "metric": name,
                "value": _jsonable(value),
                "privacy": privacy_context(cfg),
                "seed": seed,
            }
            if extra:
                line.update(extra)
            fh.write(json.dumps(line, sort_keys=True) + "\n")


def _git_describe():
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            cwd=Path(__file__).parent,
            timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return f"privgnn-{__version__}"


def _dataset_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()[:16]


def make_run_id(config_dict, dataset_digest, seed):
    blob = json.dumps(
        {"config": config_dict, "dataset": dataset_digest, "seed": seed},
        sort_keys=True,
        default=str,
    )
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def bootstrap_ci(samples, resamples=1000, level=0.95, seed=0):
    """Percentile bootstrap confidence interval for the mean.

    Returns (mean, lo, hi); deterministic for a fixed seed.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("empty sample list")
    rng = np.random.default_rng(seed)
    draws = rng.choice(samples, size=(resamples, samples.size), replace=True)
    means = draws.mean(axis=1)
    tail = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [tail, 1.0 - tail])
    return float(samples.mean()), float(lo), float(hi)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _load_dataset(path):
    try:
        return graphs.load_binary(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"dataset not found: {path}") from exc


def _train_single(g, gap_cfg, config_dict, dataset_digest, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    run_id = make_run_id(config_dict, dataset_digest, gap_cfg.seed)
    started = time.perf_counter()
    model, (eps, delta), metrics = pipeline.full_pipeline(g, gap_cfg)
    wall = time.perf_counter() - started

    pipeline.save_checkpoint(model, out_dir / "checkpoint.gapm")
    aggregation.save_cache(model.cache, out_dir / "cache.gapc")
    manifest = {
        "run_id": run_id,
        "config": config_dict,
        "dataset_digest": dataset_digest,
        "seeds": {"master": gap_cfg.seed},
        "calibrated": {
            "sigma": model.sigma,
            "noise_multiplier": model.noise_multiplier,
        },
        "ledger": pipeline.ledger_table(model.curves),
        "achieved": {"epsilon": _jsonable(eps), "delta": _jsonable(delta)},
        "metrics": {k: _jsonable(v) for k, v in metrics.items()},
        "accounting": ACCOUNTING_ASSUMPTION,
        "wall_clock_sec": wall,
        "build": _git_describe(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))
    write_metrics(
        out_dir / "metrics.jsonl",
        run_id,
        "train",
        {
            "test_accuracy": metrics["test_accuracy"],
            "val_accuracy": metrics["val_accuracy"],
            "train_accuracy": metrics["train_accuracy"],
            "epsilon_achieved": eps,
            "sigma": model.sigma,
        },
        gap_cfg,
        gap_cfg.seed,
        extra={"accounting": ACCOUNTING_ASSUMPTION},
    )
    return run_id, metrics, eps


def _train_job(payload):
    dataset_path, config_dict, seed, out_dir = payload
    g = graphs.load_binary(dataset_path)
    gap_cfg = build_gap_config(config_dict, seed_override=seed)
    digest = _dataset_digest(dataset_path)
    _, metrics, _ = _train_single(g, gap_cfg, config_dict, digest, out_dir)
    return seed, metrics["test_accuracy"]


def cmd_train(args):
    config_dict = load_config(args.config)
    if "config" in config_dict and isinstance(config_dict.get("config"), dict):
        config_dict = config_dict["config"]  # accept a manifest as config
    dataset_path = args.dataset or config_get(config_dict, "dataset.path")
    g = _load_dataset(dataset_path)
    digest = _dataset_digest(dataset_path)
    gap_cfg = build_gap_config(config_dict)

    if args.repeats <= 1:
        run_id, metrics, eps = _train_single(
            g, gap_cfg, config_dict, digest, args.out
        )
        print(
            json.dumps(
                {
                    "run_id": run_id,
                    "test_accuracy": metrics["test_accuracy"],
                    "epsilon_achieved": _jsonable(eps),
                }
            )
        )
        return 0

    seeds = [derive_seed(gap_cfg.seed, rep) for rep in range(args.repeats)]
    jobs = [
        (dataset_path, config_dict, seed, Path(args.out) / f"run_{i:03d}")
        for i, seed in enumerate(seeds)
    ]
    if args.parallel > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=args.parallel) as pool:
            results = list(pool.map(_train_job, jobs))
    else:
        results = [_train_job(job) for job in jobs]
    accs = [acc for _, acc in results]
    mean, lo, hi = bootstrap_ci(accs, seed=gap_cfg.seed)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    write_metrics(
        Path(args.out) / "metrics.jsonl",
        make_run_id(config_dict, digest, gap_cfg.seed),
        "sweep",
        {"test_accuracy_mean": mean, "test_accuracy_lo": lo, "test_accuracy_hi": hi},
        gap_cfg,
        gap_cfg.seed,
    )
    print(json.dumps({"repeats": args.repeats, "mean": mean, "lo": lo, "hi": hi}))
    return 0


def _load_model_with_cache(checkpoint_path, cache_path=None):
    model = pipeline.load_checkpoint(checkpoint_path)
    if cache_path is None:
        cache_path = Path(checkpoint_path).parent / "cache.gapc"
    if Path(cache_path).exists():
        model.cache = aggregation.load_cache(cache_path)
    return model


def cmd_eval(args):
    model = _load_model_with_cache(args.checkpoint, args.cache)
    g = _load_dataset(args.dataset)
    if args.inductive:
        new_graph = _load_dataset(args.inductive)
        if model.config.privacy == "node":
            new_graph = graphs.bound_degree(
                new_graph, model.config.max_degree,
                derive_seed(model.config.seed, 99),
            )
        preds, _, _ = pipeline.infer_inductive(model, new_graph)
        labels = (
            new_graph.base.labels
            if isinstance(new_graph, graphs.DegreeBoundedView)
            else new_graph.labels
        )
        split = (
            new_graph.base.split
            if isinstance(new_graph, graphs.DegreeBoundedView)
            else new_graph.split
        )
    else:
        if model.cache is None:
            raise ConfigError("no aggregation cache found next to the checkpoint")
        if model.cache.num_nodes != g.num_nodes:
            raise ConfigError("checkpoint/dataset shape mismatch")
        preds, _ = pipeline.infer_transductive(model, np.arange(g.num_nodes))
        labels, split = g.labels, g.split
    out = {"mode": "inductive" if args.inductive else "transductive"}
    for name, tag in (("train", graphs.SPLIT_TRAIN), ("val", graphs.SPLIT_VAL),
                      ("test", graphs.SPLIT_TEST)):
        idx = np.flatnonzero(split == tag)
        if idx.size:
            out[f"{name}_accuracy"] = float(np.mean(preds[idx] == labels[idx]))
    print(json.dumps(out, sort_keys=True))
    return 0


def cmd_infer(args):
    model = _load_model_with_cache(args.checkpoint, args.cache)
    if model.cache is None:
        raise ConfigError("no aggregation cache found next to the checkpoint")
    try:
        node_ids = [int(tok) for tok in args.nodes.split(",") if tok]
    except ValueError:
        raise ConfigError("--nodes must be a comma-separated id list") from None
    try:
        preds, posteriors = pipeline.infer_transductive(model, node_ids)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for node, pred, post in zip(node_ids, preds, posteriors):
        print(
            json.dumps(
                {
                    "node": node,
                    "label": int(pred),
                    "posterior": [float(p) for p in post],
                }
            )
        )
    return 0


def cmd_calibrate(args):
    budget = PrivacyBudget(epsilon=args.epsilon, delta=args.delta, level=args.level)
    if args.level == "edge":
        grid = dense_alpha_grid()
        sigma = calibrate_sigma(
            budget,
            lambda s: pma_rdp_curve(PmaConfig(hops=args.hops, sigma=s, level="edge")),
            grid,
        )
        curve = pma_rdp_curve(PmaConfig(hops=args.hops, sigma=sigma, level="edge"))
        eps, alpha = rdp_to_dp(curve, args.delta, grid)
        print(f"sigma = {sigma:.6g}")
        print(f"achieved_epsilon = {eps:.6g} at alpha = {alpha:.6g}")
        return 0
    # node level
    if args.max_degree is None:
        raise ConfigError("node level requires --max-degree")
    if args.sampling_rate is None or args.steps is None:
        raise ConfigError("node level requires --sampling-rate and --steps")

    def builder(s):
        sgm = sampled_gaussian_rdp(
            SampledGaussianParams(
                noise_multiplier=s, sampling_rate=args.sampling_rate, steps=args.steps
            )
        )
        curves = [sgm, sgm]
        if args.hops > 0:
            curves.append(
                pma_rdp_curve(
                    PmaConfig(
                        hops=args.hops, sigma=s, level="node",
                        max_degree=args.max_degree,
                    )
                )
            )
        return compose(curves)

    sigma = calibrate_sigma(budget, builder, DEFAULT_ALPHA_GRID)
    eps, alpha = rdp_to_dp(builder(sigma), args.delta, DEFAULT_ALPHA_GRID)
    print(f"sigma = {sigma:.6g}")
    print(f"dp_adam_noise_multiplier = {sigma:.6g}")
    print(f"achieved_epsilon = {eps:.6g} at alpha = {alpha:.6g}")
    return 0


def cmd_attack(args):
    config_dict = load_config(args.config)
    g = _load_dataset(args.dataset)
    target_cfg = build_gap_config(config_dict)
    model = _load_model_with_cache(args.checkpoint, args.cache)
    if model.cache is None:
        raise ConfigError("no aggregation cache found next to the checkpoint")
    attack_cfg = AttackConfig(
        shadow_nodes_per_class=config_get(config_dict, "attack.shadow_nodes_per_class"),
        target_config=target_cfg,
        attack_hidden=config_get(config_dict, "attack.hidden", 64),
        attack_layers=config_get(config_dict, "attack.layers", 3),
        attack_epochs=config_get(config_dict, "attack.epochs", 300),
        repetitions=args.repetitions
        if args.repetitions is not None
        else config_get(config_dict, "attack.repetitions", 10),
        eval_size=config_get(config_dict, "attack.eval_size", None),
        seed=config_get(config_dict, "attack.seed", target_cfg.seed),
    )
    runs = run_membership_attack(model, g, attack_cfg)
    aucs = [r.auc for r in runs]
    run_id = make_run_id(config_dict, _dataset_digest(args.dataset), attack_cfg.seed)
    out_path = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_path.mkdir(parents=True, exist_ok=True)
    metrics_path = out_path / "metrics.jsonl"
    for r in runs:
        write_metrics(
            metrics_path, run_id, "attack", {"attack_auc": r.auc},
            target_cfg, attack_cfg.seed, extra={"run_index": r.run_index},
        )
    mean, lo, hi = bootstrap_ci(aucs, seed=attack_cfg.seed)
    print(json.dumps({"mean_auc": mean, "lo": lo, "hi": hi, "runs": len(aucs)}))
    return 0


def cmd_gen_sbm(args):
    g = graphs.generate_sbm(
        num_nodes=args.nodes,
        num_classes=args.classes,
        p_in=args.p_in,
        p_out=args.p_out,
        feature_dim=args.feature_dim,
        feature_signal=args.feature_signal,
        seed=args.seed,
    )
    graphs.save_binary(g, args.out)
    print(
        json.dumps(
            {"nodes": g.num_nodes, "edges": g.num_edges, "classes": g.num_classes}
        )
    )
    return 0


def cmd_convert(args):
    g = graphs.load_csv(args.nodes, args.edges, splits_path=args.splits)
    graphs.save_binary(g, args.out)
    print(json.dumps({"nodes": g.num_nodes, "edges": g.num_edges}))
    return 0


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="privgnn",
        description="Differentially private graph neural networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write run artifacts")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", default=None, help="GAPD dataset path")
    p.add_argument("--out", required=True)
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--parallel", type=int, default=1)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--inductive", default=None, metavar="GRAPH")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("infer", help="posteriors for specific nodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--nodes", required=True, help="comma-separated node ids")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("calibrate", help="calibrate noise for a budget")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--level", choices=["edge", "node"], required=True)
    p.add_argument("--hops", type=int, required=True)
    p.add_argument("--max-degree", type=int, default=None)
    p.add_argument("--sampling-rate", type=float, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(fn=cmd_calibrate)

    p = sub.add_parser("attack", help="membership inference audit")
    p.add_argument("--config", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--cache", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--repetitions", type=int, default=None)
    p.set_defaults(fn=cmd_attack)

    p = sub.add_parser("gen-sbm", help="generate a synthetic dataset")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--p-in", type=float, required=True)
    p.add_argument("--p-out", type=float, required=True)
    p.add_argument("--feature-dim", type=int, required=True)
    p.add_argument("--feature-signal", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen_sbm)

    p = sub.add_parser("convert", help="convert CSV files to the binary format")
    p.add_argument("--nodes", required=True)
    p.add_argument("--edges", required=True)
    p.add_argument("--splits", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_convert)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InfeasibleBudgetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (OSError, GraphFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except AssertionError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
