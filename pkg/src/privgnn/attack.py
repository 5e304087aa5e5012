"""Empirical privacy audit: node membership inference with a shadow model.

Protocol (train-on-subgraph, test-on-full-graph): a shadow model with the
target's architecture and hyperparameters is trained on an induced random
subgraph; an attack MLP learns to separate the shadow model's posteriors on
its own train vs. held-out nodes; the attack is then scored against the
target model on the full graph's train/test nodes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from privgnn import nn
from privgnn.aggregation import derive_seed
from privgnn.graphs import SPLIT_TEST, SPLIT_TRAIN, GraphDataset
from privgnn.pipeline import GapConfig, _fit, full_pipeline, infer_transductive

MEMBER, NONMEMBER, EXCLUDED = 1, 0, -1

# Shadow split: balanced member/non-member halves. No validation slice: the
# shadow must train exactly as long as configured so its posterior profile
# mirrors the target's.
_SHADOW_TRAIN_RATIO = 0.5


@dataclass
class AttackConfig:
    shadow_nodes_per_class: int
    target_config: GapConfig
    attack_hidden: int = 64
    attack_layers: int = 3
    attack_epochs: int = 300
    attack_learning_rate: float = 0.01
    repetitions: int = 10
    eval_size: int | None = None  # per-side cap; defaults to all available
    seed: int = 0


def build_shadow(g: GraphDataset, cfg: AttackConfig, seed=None):
    """Sample a per-class shadow node set and induce its subgraph.

    Returns (shadow dataset, membership labels over shadow nodes, original
    node ids). Membership is 1 for shadow-train, 0 for shadow-test, -1 for
    the shadow validation slice.
    """
    if seed is None:
        seed = cfg.seed
    rng = np.random.default_rng(seed)
    per_class = cfg.shadow_nodes_per_class
    picked = []
    for c in range(g.num_classes):
        members = np.flatnonzero(g.labels == c)
        if members.size < per_class:
            raise ValueError(
                f"class {c} has {members.size} nodes, needs {per_class}"
            )
        picked.append(rng.choice(members, size=per_class, replace=False))
    orig_ids = np.sort(np.concatenate(picked))
    remap = {int(o): i for i, o in enumerate(orig_ids)}

    edges = g.edge_array()
    keep = np.isin(edges[:, 0], orig_ids) & np.isin(edges[:, 1], orig_ids)
    sub_edges = np.array(
        [[remap[int(s)], remap[int(t)]] for s, t in edges[keep]], dtype=np.int64
    ).reshape(-1, 2)

    n = orig_ids.size
    n_train = round(_SHADOW_TRAIN_RATIO * n)
    split = np.full(n, SPLIT_TEST, dtype=np.uint8)
    perm = rng.permutation(n)
    split[perm[:n_train]] = SPLIT_TRAIN

    shadow = GraphDataset.from_edges(
        g.features[orig_ids],
        g.labels[orig_ids],
        split,
        sub_edges,
        num_classes=g.num_classes,
    )
    membership = np.full(n, EXCLUDED, dtype=np.int64)
    membership[split == SPLIT_TRAIN] = MEMBER
    membership[split == SPLIT_TEST] = NONMEMBER
    return shadow, membership, orig_ids


def attack_features(posteriors):
    """Attack inputs: the posterior vector sorted in descending order."""
    posteriors = np.asarray(posteriors, dtype=np.float64)
    return -np.sort(-posteriors, axis=1)


def train_attack(shadow_posteriors, membership, cfg: AttackConfig, seed=None):
    """Fit the attack MLP on shadow posteriors and membership ground truth."""
    if seed is None:
        seed = cfg.seed
    posteriors = np.asarray(shadow_posteriors, dtype=np.float64)
    if not np.allclose(posteriors.sum(axis=1), 1.0, atol=1e-6):
        raise ValueError("posterior rows must sum to 1")
    membership = np.asarray(membership)
    used = membership != EXCLUDED
    x = attack_features(posteriors[used])
    y = membership[used].astype(np.int64)
    if np.unique(y).size < 2:
        raise ValueError("membership labels are single-class")
    dims = [x.shape[1]] + [cfg.attack_hidden] * (cfg.attack_layers - 1) + [2]
    model = nn.MlpModel(
        dims,
        activations=["selu"] * (cfg.attack_layers - 1) + ["none"],
        seed=derive_seed(seed, 41),
    )
    _fit(
        model, x, y, np.arange(len(y)), np.zeros(0, dtype=np.int64),
        epochs=cfg.attack_epochs, batch_size=0,
        learning_rate=cfg.attack_learning_rate, clip_norm=math.inf,
        noise_multiplier=0.0, dp=False, patience=cfg.attack_epochs,
        seed=derive_seed(seed, 42),
    )
    return model


def rank_auc(pos_scores, neg_scores):
    """Rank-based AUC with ties counted at half weight (midranks)."""
    pos_scores = np.asarray(pos_scores, dtype=np.float64)
    neg_scores = np.asarray(neg_scores, dtype=np.float64)
    if pos_scores.size == 0 or neg_scores.size == 0:
        raise ValueError("empty evaluation set")
    scores = np.concatenate([pos_scores, neg_scores])
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty_like(scores)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[: pos_scores.size].sum()
    n_pos, n_neg = pos_scores.size, neg_scores.size
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def membership_scores(attack_model, posteriors):
    """Attack score: probability assigned to the member class."""
    logits, _ = attack_model.forward(attack_features(posteriors), training=False)
    return nn.softmax(logits)[:, MEMBER]


def attack_auc(target_model, g, attack_model, eval_members, eval_nonmembers):
    """AUC of the attack against a trained target on disjoint node sets."""
    eval_members = np.asarray(eval_members, dtype=np.int64)
    eval_nonmembers = np.asarray(eval_nonmembers, dtype=np.int64)
    if np.intersect1d(eval_members, eval_nonmembers).size:
        raise ValueError("member and non-member sets must be disjoint")
    _, post_m = infer_transductive(target_model, eval_members)
    _, post_n = infer_transductive(target_model, eval_nonmembers)
    return rank_auc(
        membership_scores(attack_model, post_m),
        membership_scores(attack_model, post_n),
    )


@dataclass
class AttackRun:
    run_index: int
    auc: float
    shadow_test_accuracy: float


def run_membership_attack(target_model, g: GraphDataset, cfg: AttackConfig):
    """Full audit: repeated shadow training, attack fitting, and AUC scoring.

    Every repetition draws a fresh shadow set and seeds; evaluation uses
    equal-size member/non-member samples disjoint from the shadow nodes.
    """
    runs = []
    rng = np.random.default_rng(derive_seed(cfg.seed, 43))
    for rep in range(cfg.repetitions):
        rep_seed = derive_seed(cfg.seed, 44, rep)
        shadow, membership, orig_ids = build_shadow(g, cfg, seed=rep_seed)
        shadow_cfg = replace(cfg.target_config, seed=derive_seed(rep_seed, 1))
        shadow_model, _, shadow_metrics = full_pipeline(shadow, shadow_cfg)

        used = membership != EXCLUDED
        _, shadow_post = infer_transductive(shadow_model, np.flatnonzero(used))
        attack_model = train_attack(
            shadow_post, membership[used], cfg, seed=derive_seed(rep_seed, 2)
        )

        member_pool = np.setdiff1d(np.flatnonzero(g.split == SPLIT_TRAIN), orig_ids)
        nonmember_pool = np.setdiff1d(np.flatnonzero(g.split == SPLIT_TEST), orig_ids)
        size = min(member_pool.size, nonmember_pool.size)
        if cfg.eval_size is not None:
            size = min(size, cfg.eval_size)
        if size == 0:
            raise ValueError("no evaluation nodes left outside the shadow set")
        members = rng.choice(member_pool, size=size, replace=False)
        nonmembers = rng.choice(nonmember_pool, size=size, replace=False)
        auc = attack_auc(target_model, g, attack_model, members, nonmembers)
        runs.append(
            AttackRun(
                run_index=rep,
                auc=auc,
                shadow_test_accuracy=shadow_metrics["test_accuracy"],
            )
        )
    return runs
