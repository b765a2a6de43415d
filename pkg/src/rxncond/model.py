"""Joint reaction model: shared GPN over reaction components + MLP head.

A reaction is embedded slot-wise (reactant 1, reactant 2, product) by one
shared graph network; a missing second reactant contributes a zero vector.
The concatenated reaction vector feeds a two-layer MLP whose sigmoid outputs
are per-bin probabilities over the condition dictionary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .conditions import ConditionDictionary, RawRecord, encode_targets
from .errors import ConfigError, TrainingError, ValidationError
from .graphnet import FeaturizedMolecule, GpnConfig, embed_molecule, init_gpn_params

CHECKPOINT_FORMAT_VERSION = 1

REACTANT_SLOTS = 2


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings; the two 10% splits yield 81/9/10 overall."""

    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    learning_rate: float = 1e-3
    test_fraction: float = 0.10
    validation_fraction: float = 0.10

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 < self.test_fraction < 1.0 or not 0.0 < self.validation_fraction < 1.0:
            raise ConfigError("split fractions must lie in (0, 1)")

    @property
    def overall_fractions(self) -> tuple[float, float, float]:
        """(train, validation, test) fractions of the full dataset; sums to 1."""
        test = self.test_fraction
        val = (1.0 - test) * self.validation_fraction
        return (1.0 - test - val, val, test)


@dataclass
class ReactionInputs:
    """Featurized reaction components (1-2 reactants, exactly 1 product)."""

    reactants: list[FeaturizedMolecule]
    product: FeaturizedMolecule

    def __post_init__(self):
        if not 1 <= len(self.reactants) <= REACTANT_SLOTS:
            raise ValidationError(
                f"expected 1-{REACTANT_SLOTS} reactants, got {len(self.reactants)}"
            )

    def molecules(self) -> list[tuple[str, FeaturizedMolecule]]:
        out = [("reactant", m) for m in self.reactants]
        out.append(("product", self.product))
        return out


def featurize_record(
    record: RawRecord, cache: dict[str, FeaturizedMolecule] | None = None
) -> ReactionInputs:
    """Parse and featurize a record's molecules, reusing ``cache`` entries."""

    def lookup(smiles: str) -> FeaturizedMolecule:
        if cache is None:
            return FeaturizedMolecule.from_smiles(smiles)
        if smiles not in cache:
            cache[smiles] = FeaturizedMolecule.from_smiles(smiles)
        return cache[smiles]

    if not record.product:
        raise ValidationError("record has no product structure")
    return ReactionInputs(
        reactants=[lookup(s) for s in record.reactants],
        product=lookup(record.product),
    )


@dataclass
class ReactionModel:
    gpn_config: GpnConfig
    class_num: int
    mlp_hidden: int
    dictionary_digest: str
    params: dict[str, T.Tensor]

    def gpn_params(self) -> dict[str, T.Tensor]:
        return {k[len("gpn.") :]: v for k, v in self.params.items() if k.startswith("gpn.")}


def build_model(
    gpn_config: GpnConfig,
    class_num: int,
    dictionary_digest: str,
    seed: int = 0,
    mlp_hidden: int = 128,
) -> ReactionModel:
    if class_num < 1:
        raise ConfigError("class_num must be >= 1")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    params: dict[str, T.Tensor] = {
        f"gpn.{name}": tensor for name, tensor in init_gpn_params(gpn_config, rng).items()
    }
    in_width = (REACTANT_SLOTS + 1) * gpn_config.out_dim
    params["mlp.dense0.w"] = T.Tensor(
        T.uniform_init(rng, (in_width, mlp_hidden)), requires_grad=True, name="mlp.dense0.w"
    )
    params["mlp.dense0.b"] = T.Tensor(
        np.zeros((1, mlp_hidden)), requires_grad=True, name="mlp.dense0.b"
    )
    params["mlp.dense1.w"] = T.Tensor(
        T.uniform_init(rng, (mlp_hidden, class_num)), requires_grad=True, name="mlp.dense1.w"
    )
    params["mlp.dense1.b"] = T.Tensor(
        np.zeros((1, class_num)), requires_grad=True, name="mlp.dense1.b"
    )
    return ReactionModel(
        gpn_config=gpn_config,
        class_num=class_num,
        mlp_hidden=mlp_hidden,
        dictionary_digest=dictionary_digest,
        params=params,
    )


def forward_logits(model: ReactionModel, inputs: ReactionInputs) -> T.Tensor:
    """Logits over all dictionary bins; records on the active tape, if any."""
    gpn = model.gpn_params()
    slots: list[T.Tensor] = []
    for k in range(REACTANT_SLOTS):
        if k < len(inputs.reactants):
            slots.append(embed_molecule(inputs.reactants[k], gpn, model.gpn_config))
        else:
            slots.append(T.constant(np.zeros((1, model.gpn_config.out_dim))))
    slots.append(embed_molecule(inputs.product, gpn, model.gpn_config))
    vec = T.concat(slots, axis=1)
    hidden = T.relu(T.add(T.matmul(vec, model.params["mlp.dense0.w"]), model.params["mlp.dense0.b"]))
    return T.add(T.matmul(hidden, model.params["mlp.dense1.w"]), model.params["mlp.dense1.b"])


def forward(model: ReactionModel, inputs: ReactionInputs) -> np.ndarray:
    """Per-bin probabilities (sigmoid of the logits), as a flat array."""
    logits = forward_logits(model, inputs)
    return T.sigmoid(logits).data.reshape(-1)


def split_dataset(
    records: Sequence,
    seed: int,
    test_fraction: float = 0.10,
    validation_fraction: float = 0.10,
) -> tuple[list, list, list]:
    """Two-stage seeded split: 90/10 train-pool/test, then 90/10 train/val."""
    n = len(records)
    if n < 10:
        raise ValidationError(f"need at least 10 records to split, got {n}")
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    order = rng.permutation(n)
    n_test = int(n * test_fraction)
    pool, test_idx = order[: n - n_test], order[n - n_test :]
    n_val = int(len(pool) * validation_fraction)
    train_idx, val_idx = pool[: len(pool) - n_val], pool[len(pool) - n_val :]
    pick = lambda idx: [records[i] for i in idx]
    return pick(train_idx), pick(val_idx), pick(test_idx)


@dataclass
class EpochStats:
    epoch: int
    train_loss: float
    validation_loss: float


@dataclass
class TrainResult:
    trace: list[EpochStats] = field(default_factory=list)
    best_epoch: int = 0
    best_validation_loss: float = float("inf")
    best_params: dict[str, np.ndarray] = field(default_factory=dict)


def _record_loss(model: ReactionModel, inputs: ReactionInputs, target: np.ndarray) -> T.Tensor:
    logits = forward_logits(model, inputs)
    return T.sigmoid_cross_entropy(logits, T.constant(target.reshape(logits.shape)))


def train(
    model: ReactionModel,
    train_records: Sequence[RawRecord],
    val_records: Sequence[RawRecord],
    dictionary: ConditionDictionary,
    cfg: TrainConfig,
) -> TrainResult:
    """Mini-batch Adam over shuffled batches; retains the best-validation state.

    Epoch shuffling is reseeded from (seed, epoch), so a run is reproducible
    end to end given the config.
    """
    if dictionary.total_bins != model.class_num:
        raise ConfigError(
            f"dictionary has {dictionary.total_bins} bins but model expects {model.class_num}"
        )
    cache: dict[str, FeaturizedMolecule] = {}
    train_pairs = [
        (featurize_record(r, cache), encode_targets(r, dictionary)) for r in train_records
    ]
    val_pairs = [
        (featurize_record(r, cache), encode_targets(r, dictionary)) for r in val_records
    ]
    if not train_pairs:
        raise ValidationError("training set is empty")

    state = T.AdamState(learning_rate=cfg.learning_rate)
    result = TrainResult()
    for epoch in range(1, cfg.epochs + 1):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, epoch])))
        order = rng.permutation(len(train_pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            T.zero_grads(model.params)
            with T.Tape() as tape:
                total = None
                for i in batch:
                    loss_i = _record_loss(model, *train_pairs[i])
                    total = loss_i if total is None else T.add(total, loss_i)
                loss = T.scale(total, 1.0 / len(batch))
            if not np.isfinite(loss.item()):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            T.backward(tape, loss)
            T.adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state)
            epoch_loss += loss.item() * len(batch)
        train_loss = epoch_loss / len(train_pairs)
        if val_pairs:
            val_loss = float(
                np.mean([_record_loss(model, *pair).item() for pair in val_pairs])
            )
        else:
            val_loss = float("nan")
        result.trace.append(EpochStats(epoch, train_loss, val_loss))
        tracked = val_loss if val_pairs else train_loss
        if tracked < result.best_validation_loss:
            result.best_validation_loss = tracked
            result.best_epoch = epoch
            result.best_params = {k: p.data.copy() for k, p in model.params.items()}
    if not result.best_params:
        result.best_params = {k: p.data.copy() for k, p in model.params.items()}
    return result


@dataclass(frozen=True)
class CategoryRanking:
    name: str
    ranked: tuple[tuple[str, float], ...]  # (label, score), descending score

    def labels(self) -> list[str]:
        return [label for label, _ in self.ranked]


@dataclass(frozen=True)
class RankedPrediction:
    categories: tuple[CategoryRanking, ...]

    def top(self, k: int) -> dict[str, list[str]]:
        return {c.name: c.labels()[:k] for c in self.categories}


def rank_probabilities(
    probabilities: np.ndarray, dictionary: ConditionDictionary
) -> RankedPrediction:
    """Slice the flat probability vector per category and sort each slice.

    Ties break by bin order, so a uniform vector ranks in dictionary order.
    """
    if probabilities.shape != (dictionary.total_bins,):
        raise ConfigError(
            f"probability vector has {probabilities.shape} entries, "
            f"dictionary has {dictionary.total_bins} bins"
        )
    rankings = []
    for name, window in dictionary.slices().items():
        scores = probabilities[window]
        labels = dictionary.category(name).labels()
        order = np.argsort(-scores, kind="stable")
        rankings.append(
            CategoryRanking(
                name=name,
                ranked=tuple((labels[i], float(scores[i])) for i in order),
            )
        )
    return RankedPrediction(categories=tuple(rankings))


def predict(
    model: ReactionModel, inputs: ReactionInputs, dictionary: ConditionDictionary
) -> RankedPrediction:
    check_digest(model, dictionary)
    return rank_probabilities(forward(model, inputs), dictionary)


def check_digest(model: ReactionModel, dictionary: ConditionDictionary) -> None:
    digest = dictionary.digest()
    if model.dictionary_digest != digest:
        raise ConfigError(
            f"dictionary digest {digest[:12]}... does not match the checkpoint's "
            f"{model.dictionary_digest[:12]}..."
        )
    if model.class_num != dictionary.total_bins:
        raise ConfigError(
            f"model predicts {model.class_num} bins, dictionary has {dictionary.total_bins}"
        )


# ---------------------------------------------------------------------------
# Checkpoints


def checkpoint_payload(model: ReactionModel, metadata: Mapping) -> dict:
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "gpn_config": {
            "architecture": model.gpn_config.architecture,
            "hidden_dim": model.gpn_config.hidden_dim,
            "out_dim": model.gpn_config.out_dim,
            "n_layers": model.gpn_config.n_layers,
            "n_atom_types": model.gpn_config.n_atom_types,
            "num_edge_type": model.gpn_config.num_edge_type,
            "weight_tying": model.gpn_config.weight_tying,
            "max_degree": model.gpn_config.max_degree,
            "concat_hidden": model.gpn_config.concat_hidden,
        },
        "class_num": model.class_num,
        "mlp_hidden": model.mlp_hidden,
        "dictionary_digest": model.dictionary_digest,
        "metadata": dict(metadata),
        "params": {
            name: {"shape": list(p.data.shape), "values": p.data.reshape(-1).tolist()}
            for name, p in sorted(model.params.items())
        },
    }


def save_checkpoint(model: ReactionModel, path: str | Path, metadata: Mapping) -> None:
    """Write the parameter payload as named flat arrays in deterministic JSON."""
    payload = checkpoint_payload(model, metadata)
    Path(path).write_text(
        json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n",
        encoding="utf-8",
    )


def load_checkpoint(path: str | Path) -> tuple[ReactionModel, dict]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ConfigError(
            f"unsupported checkpoint format version {payload.get('format_version')!r}"
        )
    params = {
        name: T.Tensor(
            np.asarray(entry["values"]).reshape(entry["shape"]),
            requires_grad=True,
            name=name,
        )
        for name, entry in payload["params"].items()
    }
    model = ReactionModel(
        gpn_config=GpnConfig(**payload["gpn_config"]),
        class_num=int(payload["class_num"]),
        mlp_hidden=int(payload["mlp_hidden"]),
        dictionary_digest=payload["dictionary_digest"],
        params=params,
    )
    return model, dict(payload.get("metadata", {}))
