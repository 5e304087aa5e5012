"""End-to-end training and inference for the three-stage private GNN:
feature encoder, cached noisy multi-hop aggregation, and a hop-wise
classifier that never touches the adjacency again.

Stage privacy curves are kept in a per-run ledger; transductive inference is
a pure function of (cache, classifier) and leaves the ledger untouched.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from privgnn.accounting import (  # noqa: F401 (PrivacyBudget re-exported)
    DEFAULT_ALPHA_GRID,
    PrivacyBudget,
    RdpCurve,
    SampledGaussianParams,
    compose,
    calibrate_sigma,
    dense_alpha_grid,
    node_level_total,
    rdp_to_dp,
    sampled_gaussian_rdp,
)
from privgnn.aggregation import (
    AggregationCache,
    PmaConfig,
    derive_seed,
    pma_rdp_curve,
    run_pma,
)
from privgnn.graphs import (
    SPLIT_TEST,
    SPLIT_TRAIN,
    SPLIT_VAL,
    DegreeBoundedView,
    GraphFormatError,
    bound_degree,
)
from privgnn import nn

CHECKPOINT_MAGIC = b"GAPM"
CHECKPOINT_VERSION = 1

_EDGE_GRID = dense_alpha_grid()


@dataclass(frozen=True)
class GapConfig:
    hops: int = 2
    hidden_dim: int = 16
    encoder_layers: int = 2
    base_layers: int = 1
    head_layers: int = 1
    combine: str = "concat"
    privacy: str = "none"  # 'none' | 'edge' | 'node'
    budget: PrivacyBudget | None = None
    max_degree: int | None = None
    epochs: int = 100
    batch_size: int = 0  # 0 = full-sized batches
    learning_rate: float = 0.01
    clip_norm: float = 1.0
    patience: int = 20
    seed: int = 0

    def validate(self):
        if self.privacy not in ("none", "edge", "node"):
            raise ValueError("privacy must be none, edge, or node")
        if self.combine != "concat":
            raise ValueError("only concatenation combine is supported")
        if self.hops < 0 or self.hidden_dim < 1 or self.epochs < 1:
            raise ValueError("invalid architecture or training sizes")
        if min(self.encoder_layers, self.base_layers, self.head_layers) < 1:
            raise ValueError("layer counts must be >= 1")
        if self.privacy in ("edge", "node"):
            if self.budget is None:
                raise ValueError(f"{self.privacy}-level privacy requires a budget")
            if self.budget.level != self.privacy:
                raise ValueError("budget level does not match privacy level")
        if self.privacy == "node" and (self.max_degree is None or self.max_degree < 1):
            raise ValueError("node-level privacy requires max_degree >= 1")


class EncoderModel:
    """Feature encoder: an MLP followed by a bias-free linear softmax head.

    The head exists only for pre-training; downstream stages consume the MLP
    output via encode(). The head weight is still checkpointed so runs are
    reproducible from their artifacts.
    """

    def __init__(self, in_dim, hidden_dim, num_classes, num_layers=2,
                 use_batch_norm=False, seed=0):
        self.mlp = nn.MlpModel(
            [in_dim] + [hidden_dim] * num_layers,
            activations=["selu"] * num_layers,
            use_batch_norm=use_batch_norm,
            seed=derive_seed(seed, 11),
        )
        rng = np.random.default_rng(derive_seed(seed, 12))
        bound = math.sqrt(6.0 / hidden_dim)
        self.softmax_weight = rng.uniform(-bound, bound, size=(hidden_dim, num_classes))

    @property
    def has_batch_norm(self):
        return self.mlp.has_batch_norm

    def parameters(self):
        return self.mlp.parameters() + [self.softmax_weight]

    def snapshot(self):
        return self.mlp.snapshot() + [self.softmax_weight.copy()]

    def restore(self, snap):
        self.mlp.restore(snap[:-1])
        self.softmax_weight[...] = snap[-1]

    def forward(self, x, training=False):
        hidden, mlp_tape = self.mlp.forward(x, training)
        logits = hidden @ self.softmax_weight
        return logits, {"mlp": mlp_tape, "hidden": hidden, "out": logits}

    def backward(self, tape, grad_logits):
        grad_w = tape["hidden"].T @ grad_logits
        grad_hidden = grad_logits @ self.softmax_weight.T
        mlp_grads, grad_x = self.mlp.backward(tape["mlp"], grad_hidden)
        return mlp_grads + [grad_w], grad_x

    def encode(self, x):
        """Encoded features (softmax head discarded), inference mode."""
        return self.mlp.forward(np.asarray(x, dtype=np.float64), training=False)[0]


class HopClassifier:
    """Per-hop base MLPs, concatenation combine, and a head MLP.

    Consumes only cached aggregation matrices; its input is a stacked
    (num_hops+1, batch, width) array, never a graph.
    """

    def __init__(self, num_hops, width, hidden_dim, num_classes, base_layers=1,
                 head_layers=1, use_batch_norm=False, seed=0):
        self.bases = [
            nn.MlpModel(
                [width] + [hidden_dim] * base_layers,
                activations=["selu"] * base_layers,
                use_batch_norm=use_batch_norm,
                seed=derive_seed(seed, 21, k),
            )
            for k in range(num_hops + 1)
        ]
        head_dims = [hidden_dim * (num_hops + 1)] + [hidden_dim] * (head_layers - 1) + [num_classes]
        self.head = nn.MlpModel(
            head_dims,
            activations=["selu"] * (head_layers - 1) + ["none"],
            use_batch_norm=use_batch_norm,
            seed=derive_seed(seed, 22),
        )

    @property
    def has_batch_norm(self):
        return any(b.has_batch_norm for b in self.bases) or self.head.has_batch_norm

    def parameters(self):
        params = []
        for base in self.bases:
            params.extend(base.parameters())
        params.extend(self.head.parameters())
        return params

    def snapshot(self):
        snaps = [b.snapshot() for b in self.bases] + [self.head.snapshot()]
        return snaps

    def restore(self, snaps):
        for base, snap in zip(self.bases, snaps[:-1]):
            base.restore(snap)
        self.head.restore(snaps[-1])

    def forward(self, xs, training=False):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 3 or xs.shape[0] != len(self.bases):
            raise ValueError("expected input of shape (num_hops+1, batch, width)")
        hidden, base_tapes = [], []
        for base, x in zip(self.bases, xs):
            h, tape = base.forward(x, training)
            hidden.append(h)
            base_tapes.append(tape)
        combined = np.concatenate(hidden, axis=1)
        logits, head_tape = self.head.forward(combined, training)
        return logits, {
            "bases": base_tapes,
            "head": head_tape,
            "widths": [h.shape[1] for h in hidden],
            "out": logits,
        }

    def backward(self, tape, grad_logits):
        head_grads, grad_combined = self.head.backward(tape["head"], grad_logits)
        grads = []
        offset = 0
        for base, base_tape, width in zip(self.bases, tape["bases"], tape["widths"]):
            piece = grad_combined[:, offset : offset + width]
            base_grads, _ = base.backward(base_tape, piece)
            grads.extend(base_grads)
            offset += width
        grads.extend(head_grads)
        return grads, None


def _accuracy(model, inputs, labels, idx):
    if len(idx) == 0:
        return math.nan
    logits, _ = model.forward(np.take(inputs, idx, axis=-2), training=False)
    return float(np.mean(logits.argmax(axis=1) == labels[idx]))


@dataclass
class FitInfo:
    steps_run: int
    epochs_run: int
    best_val_accuracy: float


def _fit(model, inputs, labels, train_idx, val_idx, *, epochs, batch_size,
         learning_rate, clip_norm, noise_multiplier, dp, patience, seed):
    """Shared training loop: plain Adam or DP-Adam with per-sample clipping.

    Keeps the parameters of the best validation-accuracy epoch. Deterministic
    for a fixed seed.
    """
    n = len(train_idx)
    batch = batch_size if batch_size > 0 else n
    opt_cfg = nn.DpOptimizerConfig(
        learning_rate=learning_rate,
        clip_norm=clip_norm if dp else math.inf,
        noise_multiplier=noise_multiplier if dp else 0.0,
        batch_size=batch,
    )
    state = nn.init_adam_state(model.parameters())
    shuffle_rng = np.random.default_rng(derive_seed(seed, 31))
    best_snap, best_acc, best_epoch = None, -math.inf, -1
    steps = 0
    epoch = 0
    for epoch in range(1, epochs + 1):
        order = shuffle_rng.permutation(n) if batch < n else np.arange(n)
        for start in range(0, n, batch):
            idx = train_idx[order[start : start + batch]]
            if dp:
                tapes = []
                for i in idx:
                    _, tape = model.forward(
                        np.take(inputs, [i], axis=-2), training=True
                    )
                    tapes.append(tape)
                nn.dp_adam_step(
                    model, tapes, labels[idx], opt_cfg,
                    derive_seed(seed, 32, steps), state, dataset_size=n,
                )
            else:
                xb = np.take(inputs, idx, axis=-2)
                logits, tape = model.forward(xb, training=True)
                _, grad_logits = nn.softmax_cross_entropy(logits, labels[idx])
                grads, _ = model.backward(tape, grad_logits)
                nn.adam_step(model.parameters(), grads, state, opt_cfg)
            steps += 1
        if len(val_idx):
            acc = _accuracy(model, inputs, labels, val_idx)
            if acc > best_acc:
                best_acc, best_snap, best_epoch = acc, model.snapshot(), epoch
            elif epoch - best_epoch >= patience:
                break
    if best_snap is not None:
        model.restore(best_snap)
    return FitInfo(steps_run=steps, epochs_run=epoch, best_val_accuracy=best_acc)


def _planned_sgm_params(cfg: GapConfig, train_size, noise_multiplier):
    batch = cfg.batch_size if cfg.batch_size > 0 else train_size
    steps = cfg.epochs * math.ceil(train_size / batch)
    return SampledGaussianParams(
        noise_multiplier=noise_multiplier,
        sampling_rate=min(1.0, batch / train_size),
        steps=steps,
    )


def pretrain_encoder(g, cfg: GapConfig, noise_multiplier=0.0):
    """Pre-train the encoder on features and labels only (no adjacency).

    Returns the encoder and its privacy curve: zero for none/edge levels,
    the subsampled-Gaussian DP training curve for node level.
    """
    train_idx = np.flatnonzero(g.split == SPLIT_TRAIN)
    val_idx = np.flatnonzero(g.split == SPLIT_VAL)
    if train_idx.size == 0:
        raise ValueError("empty train split")
    dp = cfg.privacy == "node"
    encoder = EncoderModel(
        g.num_features,
        cfg.hidden_dim,
        g.num_classes,
        num_layers=cfg.encoder_layers,
        use_batch_norm=not dp,
        seed=derive_seed(cfg.seed, 1),
    )
    features = np.asarray(g.features, dtype=np.float64)
    info = _fit(
        encoder, features, g.labels, train_idx, val_idx,
        epochs=cfg.epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, clip_norm=cfg.clip_norm,
        noise_multiplier=noise_multiplier, dp=dp, patience=cfg.patience,
        seed=derive_seed(cfg.seed, 2),
    )
    if dp:
        curve = sampled_gaussian_rdp(
            _planned_sgm_params(cfg, train_idx.size, noise_multiplier)
        )
    else:
        curve = RdpCurve.zero()
    return encoder, curve, info


def build_cache(g, encoder: EncoderModel, cfg: GapConfig, sigma) -> AggregationCache:
    """Encode features, normalize, and run the noisy multi-hop aggregation.

    At node level the graph is first in-degree-bounded with a derived seed.
    """
    x0 = encoder.encode(np.asarray(g.features, dtype=np.float64))
    if cfg.privacy == "node":
        target = g if isinstance(g, DegreeBoundedView) else bound_degree(
            g, cfg.max_degree, derive_seed(cfg.seed, 3)
        )
    else:
        target = g
    pma_cfg = PmaConfig(
        hops=cfg.hops,
        sigma=sigma,
        level="node" if cfg.privacy == "node" else "edge",
        max_degree=cfg.max_degree if cfg.privacy == "node" else None,
        seed=derive_seed(cfg.seed, 4),
    )
    return run_pma(target, x0, pma_cfg)


def train_classifier(cache: AggregationCache, labels, split, cfg: GapConfig,
                     noise_multiplier=0.0):
    """Train the hop-wise classifier on the cached aggregations.

    Adjacency data is not an admissible input here; everything the classifier
    sees comes from the cache.
    """
    if cache.num_nodes != len(labels):
        raise ValueError("cache and label row counts differ")
    train_idx = np.flatnonzero(split == SPLIT_TRAIN)
    val_idx = np.flatnonzero(split == SPLIT_VAL)
    if train_idx.size == 0:
        raise ValueError("empty train split")
    dp = cfg.privacy == "node"
    num_classes = int(np.max(labels)) + 1
    classifier = HopClassifier(
        cache.hops, cache.width, cfg.hidden_dim, num_classes,
        base_layers=cfg.base_layers, head_layers=cfg.head_layers,
        use_batch_norm=not dp, seed=derive_seed(cfg.seed, 5),
    )
    xs = cache.stacked()
    info = _fit(
        classifier, xs, np.asarray(labels), train_idx, val_idx,
        epochs=cfg.epochs, batch_size=cfg.batch_size,
        learning_rate=cfg.learning_rate, clip_norm=cfg.clip_norm,
        noise_multiplier=noise_multiplier, dp=dp, patience=cfg.patience,
        seed=derive_seed(cfg.seed, 6),
    )
    if dp:
        curve = sampled_gaussian_rdp(
            _planned_sgm_params(cfg, train_idx.size, noise_multiplier)
        )
    else:
        curve = RdpCurve.zero()
    return classifier, curve, info


@dataclass
class GapModel:
    """Trained model: encoder, classifier, cache, and the privacy ledger."""

    config: GapConfig
    encoder: EncoderModel
    classifier: HopClassifier
    cache: AggregationCache | None
    sigma: float
    noise_multiplier: float
    num_classes: int
    curves: dict = field(default_factory=dict)
    sgm_params: dict = field(default_factory=dict)  # stage -> (q, steps)


def ledger_table(curves, alpha_grid=DEFAULT_ALPHA_GRID):
    """Evaluate each stage curve on the grid (skipping undefined orders)."""
    table = {}
    for stage in sorted(curves):
        points = {}
        for alpha in alpha_grid:
            try:
                points[f"{alpha:g}"] = curves[stage].evaluate(alpha)
            except ValueError:
                continue
        table[stage] = points
    return table


def _entity_count(g, level):
    return g.num_edges if level == "edge" else g.num_nodes


def _check_budget(g, cfg: GapConfig):
    if cfg.privacy == "none":
        return
    entities = _entity_count(g, cfg.privacy)
    if entities and cfg.budget.delta >= 1.0 / entities:
        raise ValueError(
            f"delta must be smaller than 1/{entities} "
            f"(inverse number of private {cfg.privacy} entities)"
        )


def resolve_noise(g, cfg: GapConfig):
    """Calibrate the shared noise scale for the configured budget.

    Edge level: only the aggregation mechanism spends budget. Node level:
    one scale is shared by the aggregation noise and both DP-Adam trainings.
    """
    if cfg.privacy == "none" or cfg.hops == 0 and cfg.privacy == "edge":
        return 0.0, 0.0
    if cfg.privacy == "edge":
        sigma = calibrate_sigma(
            cfg.budget,
            lambda s: pma_rdp_curve(PmaConfig(hops=cfg.hops, sigma=s, level="edge")),
            _EDGE_GRID,
        )
        return sigma, 0.0
    train_size = int(np.sum(g.split == SPLIT_TRAIN))
    if train_size == 0:
        raise ValueError("empty train split")

    def builder(s):
        curves = [
            sampled_gaussian_rdp(_planned_sgm_params(cfg, train_size, s)),
            sampled_gaussian_rdp(_planned_sgm_params(cfg, train_size, s)),
        ]
        if cfg.hops > 0:
            curves.append(
                pma_rdp_curve(
                    PmaConfig(
                        hops=cfg.hops, sigma=s, level="node", max_degree=cfg.max_degree
                    )
                )
            )
        return compose(curves)

    sigma = calibrate_sigma(cfg.budget, builder, DEFAULT_ALPHA_GRID)
    return sigma, sigma


def achieved_budget(model_curves, cfg: GapConfig):
    """Convert the run's composed ledger to (epsilon, best_alpha)."""
    if cfg.privacy == "none":
        return math.inf, None
    if cfg.privacy == "edge":
        if cfg.hops == 0:
            return 0.0, None  # the adjacency is never read
        return rdp_to_dp(model_curves["aggregation"], cfg.budget.delta, _EDGE_GRID)
    return node_level_total(
        model_curves["aggregation"],
        model_curves["encoder"],
        model_curves["classifier"],
        cfg.budget.delta,
        DEFAULT_ALPHA_GRID,
    )


def full_pipeline(g, cfg: GapConfig):
    """Calibrate, train all stages, and evaluate.

    Returns (model, (achieved_epsilon, delta), metrics). The achieved epsilon
    never exceeds the target.
    """
    cfg.validate()
    _check_budget(g, cfg)
    sigma, noise_multiplier = resolve_noise(g, cfg)

    encoder, enc_curve, enc_info = pretrain_encoder(g, cfg, noise_multiplier)
    cache = build_cache(g, encoder, cfg, sigma)
    if cfg.privacy != "none" and cfg.hops > 0:
        agg_curve = pma_rdp_curve(
            PmaConfig(
                hops=cfg.hops,
                sigma=sigma,
                level=cfg.privacy,
                max_degree=cfg.max_degree if cfg.privacy == "node" else None,
            )
        )
    else:
        agg_curve = RdpCurve.zero()
    classifier, clf_curve, clf_info = train_classifier(
        cache, g.labels, g.split, cfg, noise_multiplier
    )
    curves = {"encoder": enc_curve, "aggregation": agg_curve, "classifier": clf_curve}

    eps, best_alpha = achieved_budget(curves, cfg)
    delta = cfg.budget.delta if cfg.budget else math.nan
    if cfg.budget is not None and eps > cfg.budget.epsilon:
        raise AssertionError(
            f"achieved epsilon {eps} exceeds target {cfg.budget.epsilon}"
        )

    model = GapModel(
        config=cfg,
        encoder=encoder,
        classifier=classifier,
        cache=cache,
        sigma=sigma,
        noise_multiplier=noise_multiplier,
        num_classes=g.num_classes,
        curves=curves,
    )
    if cfg.privacy == "node":
        train_size = int(np.sum(g.split == SPLIT_TRAIN))
        params = _planned_sgm_params(cfg, train_size, max(noise_multiplier, 1e-12))
        model.sgm_params = {
            "sampling_rate": params.sampling_rate,
            "steps": params.steps,
        }

    xs = cache.stacked()
    labels = np.asarray(g.labels)
    metrics = {
        "train_accuracy": _accuracy(classifier, xs, labels, np.flatnonzero(g.split == SPLIT_TRAIN)),
        "val_accuracy": _accuracy(classifier, xs, labels, np.flatnonzero(g.split == SPLIT_VAL)),
        "test_accuracy": _accuracy(classifier, xs, labels, np.flatnonzero(g.split == SPLIT_TEST)),
        "encoder_epochs": enc_info.epochs_run,
        "classifier_epochs": clf_info.epochs_run,
        "best_alpha": best_alpha,
    }
    return model, (eps, delta), metrics


def infer_transductive(model: GapModel, node_ids):
    """Predictions for nodes of the training graph from the cached rows.

    Pure function of (cache, classifier parameters); performs no graph reads
    and leaves the privacy ledger untouched.
    """
    if model.cache is None:
        raise ValueError("model has no aggregation cache attached")
    node_ids = np.asarray(node_ids, dtype=np.int64)
    if node_ids.size and (
        node_ids.min() < 0 or node_ids.max() >= model.cache.num_nodes
    ):
        raise ValueError("unknown node id")
    xs = np.stack([m[node_ids] for m in model.cache.matrices])
    logits, _ = model.classifier.forward(xs, training=False)
    posteriors = nn.softmax(logits)
    return posteriors.argmax(axis=1), posteriors


@dataclass
class InductiveReport:
    """Privacy note for one inductive call: the aggregation cost on the new
    graph parallel-composes with training and is reported, not added."""

    curve: RdpCurve | None
    seed: int


def _content_seed(g):
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<QQ", g.num_nodes, g.num_edges))
    h.update(np.ascontiguousarray(g.in_indptr).tobytes())
    h.update(np.ascontiguousarray(g.in_indices).tobytes())
    return int.from_bytes(h.digest(), "little")


def infer_inductive(model: GapModel, g_new, seed=None):
    """Predictions for a disjoint graph: encode, aggregate with the training
    noise scale under a fresh seed, classify.

    Node-level models require g_new to already be degree-bounded by the
    model's max_degree.
    """
    cfg = model.config
    if cfg.privacy == "node":
        if not isinstance(g_new, DegreeBoundedView) or g_new.max_degree != cfg.max_degree:
            raise ValueError(
                "node-level inductive inference requires a DegreeBoundedView "
                "with the model's max_degree"
            )
    if seed is None:
        seed = _content_seed(g_new)
    features = g_new.base.features if isinstance(g_new, DegreeBoundedView) else g_new.features
    x0 = model.encoder.encode(np.asarray(features, dtype=np.float64))
    pma_cfg = PmaConfig(
        hops=cfg.hops,
        sigma=model.sigma,
        level="node" if cfg.privacy == "node" else "edge",
        max_degree=cfg.max_degree if cfg.privacy == "node" else None,
        seed=seed,
    )
    cache = run_pma(g_new, x0, pma_cfg)
    logits, _ = model.classifier.forward(cache.stacked(), training=False)
    posteriors = nn.softmax(logits)
    if cfg.privacy != "none" and cfg.hops > 0:
        curve = pma_rdp_curve(pma_cfg)
    else:
        curve = None
    return posteriors.argmax(axis=1), posteriors, InductiveReport(curve=curve, seed=seed)


# ---------------------------------------------------------------------------
# Checkpointing (GAPM container)
# ---------------------------------------------------------------------------


def _budget_to_dict(budget):
    if budget is None:
        return None
    return {"epsilon": budget.epsilon, "delta": budget.delta, "level": budget.level}


def _budget_from_dict(d):
    return None if d is None else PrivacyBudget(**d)


def save_checkpoint(model: GapModel, path):
    cfg = model.config
    meta = {
        "hops": cfg.hops,
        "hidden_dim": cfg.hidden_dim,
        "encoder_layers": cfg.encoder_layers,
        "base_layers": cfg.base_layers,
        "head_layers": cfg.head_layers,
        "combine": cfg.combine,
        "privacy": cfg.privacy,
        "budget": _budget_to_dict(cfg.budget),
        "max_degree": cfg.max_degree,
        "epochs": cfg.epochs,
        "batch_size": cfg.batch_size,
        "learning_rate": cfg.learning_rate,
        "clip_norm": cfg.clip_norm,
        "patience": cfg.patience,
        "seed": cfg.seed,
        "sigma": model.sigma,
        "noise_multiplier": model.noise_multiplier,
        "num_classes": model.num_classes,
        "sgm_params": model.sgm_params,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<H", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        w = model.encoder.softmax_weight
        fh.write(struct.pack("<II", w.shape[0], w.shape[1]))
        fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
        nn.write_mlp(fh, model.encoder.mlp)
        fh.write(struct.pack("<I", len(model.classifier.bases)))
        for base in model.classifier.bases:
            nn.write_mlp(fh, base)
        nn.write_mlp(fh, model.classifier.head)


def _rebuild_curves(cfg: GapConfig, sigma, noise_multiplier, sgm_params):
    curves = {"encoder": RdpCurve.zero(), "classifier": RdpCurve.zero()}
    if cfg.privacy != "none" and cfg.hops > 0:
        curves["aggregation"] = pma_rdp_curve(
            PmaConfig(
                hops=cfg.hops, sigma=sigma, level=cfg.privacy,
                max_degree=cfg.max_degree if cfg.privacy == "node" else None,
            )
        )
    else:
        curves["aggregation"] = RdpCurve.zero()
    if cfg.privacy == "node" and sgm_params:
        params = SampledGaussianParams(
            noise_multiplier=noise_multiplier,
            sampling_rate=sgm_params["sampling_rate"],
            steps=sgm_params["steps"],
        )
        curves["encoder"] = sampled_gaussian_rdp(params)
        curves["classifier"] = sampled_gaussian_rdp(params)
    return curves


def load_checkpoint(path) -> GapModel:
    """Load a GAPM checkpoint; the aggregation cache is attached separately."""
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise GraphFormatError("bad magic")
        (version,) = struct.unpack("<H", fh.read(2))
        if version != CHECKPOINT_VERSION:
            raise GraphFormatError(f"unsupported version {version}")
        (blob_len,) = struct.unpack("<I", fh.read(4))
        meta = json.loads(fh.read(blob_len).decode())
        rows, cols = struct.unpack("<II", fh.read(8))
        buf = fh.read(8 * rows * cols)
        if len(buf) != 8 * rows * cols:
            raise GraphFormatError("truncated payload")
        softmax_weight = np.frombuffer(buf, dtype="<f8").reshape(rows, cols).copy()
        encoder_mlp = nn.read_mlp(fh)
        (n_bases,) = struct.unpack("<I", fh.read(4))
        bases = [nn.read_mlp(fh) for _ in range(n_bases)]
        head = nn.read_mlp(fh)

    cfg = GapConfig(
        hops=meta["hops"], hidden_dim=meta["hidden_dim"],
        encoder_layers=meta["encoder_layers"], base_layers=meta["base_layers"],
        head_layers=meta["head_layers"], combine=meta["combine"],
        privacy=meta["privacy"], budget=_budget_from_dict(meta["budget"]),
        max_degree=meta["max_degree"], epochs=meta["epochs"],
        batch_size=meta["batch_size"], learning_rate=meta["learning_rate"],
        clip_norm=meta["clip_norm"], patience=meta["patience"], seed=meta["seed"],
    )
    encoder = EncoderModel.__new__(EncoderModel)
    encoder.mlp = encoder_mlp
    encoder.softmax_weight = softmax_weight
    classifier = HopClassifier.__new__(HopClassifier)
    classifier.bases = bases
    classifier.head = head
    return GapModel(
        config=cfg,
        encoder=encoder,
        classifier=classifier,
        cache=None,
        sigma=meta["sigma"],
        noise_multiplier=meta["noise_multiplier"],
        num_classes=meta["num_classes"],
        curves=_rebuild_curves(
            cfg, meta["sigma"], meta["noise_multiplier"], meta["sgm_params"]
        ),
        sgm_params=meta["sgm_params"],
    )
