"""Shared test utilities: gradient checking, corpus generators, table data."""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np

from rxncond import tensor as T
from rxncond.conditions import RawRecord

FD_EPS = 1e-5
FD_TOL = 1e-4


def relative_error(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def finite_difference_check(
    params: Mapping[str, T.Tensor],
    build_loss: Callable[[], T.Tensor],
    eps: float = FD_EPS,
    tol: float = FD_TOL,
) -> float:
    """Compare taped gradients against central differences, entry by entry.

    ``build_loss`` must rebuild the scalar loss from the current parameter
    values. Returns the worst relative error; raises AssertionError naming
    the first offending parameter entry.
    """
    T.zero_grads(params)
    with T.Tape() as tape:
        loss = build_loss()
    T.backward(tape, loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        grad_flat = analytic[name].reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + eps
            up = build_loss().item()
            flat[idx] = original - eps
            down = build_loss().item()
            flat[idx] = original
            numeric = (up - down) / (2.0 * eps)
            err = relative_error(grad_flat[idx], numeric)
            worst = max(worst, err)
            assert err < tol, (
                f"gradient mismatch for {name}[{idx}]: "
                f"analytic={grad_flat[idx]:.10g} numeric={numeric:.10g} err={err:.3g}"
            )
    return worst


# ---------------------------------------------------------------------------
# Random molecule generator (always grammatically valid for the parser)

_SEEDS = (
    "c1ccccc1",
    "C1CCCCC1",
    "C1CC1",
    "c1ccoc1",
    "c1ccsc1",
    "c1ccncc1",
    "CC",
    "CCO",
    "C=C",
    "C#N",
    "CC(C)C",
    "C1CCOC1",
)

_TAILS = (
    "C",
    "CC",
    "N",
    "O",
    "Cl",
    "Br",
    "F",
    "I",
    "(C)",
    "(CC)",
    "(N)",
    "(O)",
    "(=O)",
    "C=C",
    "C#N",
    "[NH3+]",
    "[O-]",
    "S",
    "P",
)


def random_smiles(rng: np.random.Generator) -> str:
    text = _SEEDS[rng.integers(0, len(_SEEDS))]
    for _ in range(int(rng.integers(0, 4))):
        text += _TAILS[rng.integers(0, len(_TAILS))]
    return text


# ---------------------------------------------------------------------------
# Structural-rule corpus: every category label is a pure function of a motif.

HALIDE_TO_BASE = {"F": "NaOH", "Cl": "K2CO3", "Br": "Et3N", "I": "CsF"}
HETERO_TO_METAL = {"N": "Pd(PPh3)4", "O": "NiCl2", "S": "CuI"}
RINGS_TO_SOLVENT = {0: "THF", 1: "toluene", 2: "DMF"}

CORPUS_ROLES: dict[str, list[str]] = {
    **{label: ["base"] for label in HALIDE_TO_BASE.values()},
    **{label: ["metal"] for label in HETERO_TO_METAL.values()},
    **{label: ["solvent"] for label in RINGS_TO_SOLVENT.values()},
}

_RING_TEMPLATES = {0: "CCC", 1: "C1CCC1", 2: "C1CC1C1CC1"}


def structural_rule_record(index: int) -> RawRecord:
    """Deterministic reaction #index: halide->base, heteroatom->metal,
    product ring count->solvent."""
    halide = list(HALIDE_TO_BASE)[index % 4]
    hetero = list(HETERO_TO_METAL)[(index // 4) % 3]
    rings = (index // 12) % 3
    a = (index // 36) % 3 + 1  # reactant-1 chain length
    b = (index // 108) % 3 + 1  # reactant-2 chain length
    c = (index // 324) % 2  # product tail length
    reactant_1 = "C" * a + halide
    reactant_2 = "C" * b + hetero
    product = _RING_TEMPLATES[rings] + "C" * c
    return RawRecord(
        reactants=[reactant_1, reactant_2],
        product=product,
        conditions=[
            HALIDE_TO_BASE[halide],
            HETERO_TO_METAL[hetero],
            RINGS_TO_SOLVENT[rings],
        ],
        yield_percent=80.0,
    )


def structural_rule_corpus(n: int) -> list[RawRecord]:
    return [structural_rule_record(i) for i in range(n)]


def true_labels(record: RawRecord) -> dict[str, str]:
    base, metal, solvent = record.conditions
    return {"base": base, "metal": metal, "solvent": solvent}


# ---------------------------------------------------------------------------
# Published per-category top-1 / top-3 accuracies and AER summaries.
# Layout: reaction -> (categories, dummy row, {architecture: (row, AER)}).

PUBLISHED_TOP1 = {
    "suzuki": {
        "categories": ["metal", "ligand", "base", "solvent", "additive"],
        "dummy": [0.3777, 0.8722, 0.3361, 0.6377, 0.9511],
        "models": {
            "NFP": ([0.5763, 0.8847, 0.4637, 0.6656, 0.9560], 0.1572),
            "GGNN": ([0.5291, 0.8811, 0.4377, 0.6656, 0.9563], 0.1297),
            "MPNN": ([0.4513, 0.8722, 0.3494, 0.6377, 0.9507], 0.0259),
            "Weave": ([0.4759, 0.8724, 0.3640, 0.6381, 0.9507], 0.0388),
            "R-GAT": ([0.4891, 0.8770, 0.4167, 0.6506, 0.9524], 0.0801),
            "R-GCN": ([0.6306, 0.9036, 0.5455, 0.7049, 0.9624], 0.2767),
            "RS-GCN": ([0.4987, 0.8752, 0.4052, 0.6495, 0.9521], 0.0750),
        },
    },
    "cn": {
        "categories": ["metal", "ligand", "base", "solvent", "additive"],
        "dummy": [0.2452, 0.5219, 0.2479, 0.3219, 0.8904],
        "models": {
            "NFP": ([0.5485, 0.6395, 0.5340, 0.4792, 0.8934], 0.2575),
            "GGNN": ([0.5847, 0.6789, 0.5710, 0.5348, 0.8978], 0.3178),
            "MPNN": ([0.3304, 0.5197, 0.3227, 0.3345, 0.8904], 0.0453),
            "Weave": ([0.4261, 0.5327, 0.3909, 0.3690, 0.8907], 0.1048),
            "R-GAT": ([0.5082, 0.6019, 0.4753, 0.4345, 0.8912], 0.1983),
            "R-GCN": ([0.5989, 0.6981, 0.5932, 0.5647, 0.8984], 0.3453),
            "RS-GCN": ([0.4792, 0.5737, 0.4721, 0.4351, 0.8934], 0.1821),
        },
    },
    "negishi": {
        "categories": ["metal", "ligand", "temperature", "solvent", "additive"],
        "dummy": [0.2887, 0.7879, 0.3317, 0.6938, 0.8309],
        "models": {
            "NFP": ([0.5470, 0.8485, 0.4864, 0.8596, 0.8501], 0.3071),
            "GGNN": ([0.6715, 0.8708, 0.6459, 0.8852, 0.8820], 0.4652),
            "MPNN": ([0.2887, 0.7879, 0.3732, 0.8150, 0.8309], 0.0916),
            "Weave": ([0.3254, 0.7879, 0.4163, 0.7911, 0.8309], 0.0992),
            "R-GAT": ([0.4067, 0.7974, 0.4035, 0.8262, 0.8341], 0.1539),
            "R-GCN": ([0.6555, 0.8724, 0.6188, 0.8868, 0.8724], 0.4439),
            "RS-GCN": ([0.4833, 0.8102, 0.4864, 0.8278, 0.8421], 0.2228),
        },
    },
    "pkr": {
        "categories": [
            "metal", "ligand", "temperature", "solvent",
            "activator", "CO (g)", "additive", "pressure",
        ],
        "dummy": [0.4302, 0.8792, 0.2830, 0.3321, 0.6906, 0.7245, 0.9057, 0.6528],
        "models": {
            "NFP": ([0.6340, 0.8981, 0.4415, 0.5358, 0.7774, 0.7849, 0.8943, 0.8264], 0.2400),
            "GGNN": ([0.7094, 0.9094, 0.6642, 0.7396, 0.8679, 0.8642, 0.8981, 0.8679], 0.4377),
            "MPNN": ([0.4302, 0.8792, 0.3358, 0.3887, 0.6906, 0.4755, 0.9057, 0.8302], -0.0294),
            "Weave": ([0.4943, 0.8868, 0.4000, 0.3774, 0.7094, 0.6906, 0.9132, 0.8415], 0.1209),
            "R-GAT": ([0.4566, 0.8792, 0.3283, 0.4000, 0.6755, 0.7208, 0.9057, 0.8302], 0.0825),
            "R-GCN": ([0.7132, 0.9057, 0.6528, 0.6792, 0.8415, 0.8717, 0.8906, 0.8491], 0.3973),
            "RS-GCN": ([0.5774, 0.9019, 0.4755, 0.5472, 0.7660, 0.7434, 0.8981, 0.8415], 0.2265),
        },
    },
}

PUBLISHED_TOP3 = {
    "suzuki": {
        "categories": ["metal", "ligand", "base", "solvent", "additive"],
        "dummy": [0.6744, 0.9269, 0.7344, 0.8013, 0.9771],
        "models": {
            "NFP": ([0.8198, 0.9542, 0.7795, 0.8484, 0.9904], 0.3615),
            "GGNN": ([0.7935, 0.9555, 0.7693, 0.8430, 0.9919], 0.3491),
            "MPNN": ([0.7298, 0.9292, 0.7337, 0.7948, 0.9784], 0.0451),
            "Weave": ([0.7388, 0.9351, 0.7366, 0.8055, 0.9790], 0.0847),
            "R-GAT": ([0.7792, 0.9474, 0.7603, 0.8265, 0.9884], 0.2641),
            "R-GCN": ([0.8482, 0.9644, 0.8123, 0.8836, 0.9934], 0.4936),
            "RS-GCN": ([0.7701, 0.9524, 0.7564, 0.8169, 0.9899], 0.2732),
        },
    },
    "cn": {
        "categories": ["metal", "ligand", "base", "solvent", "additive"],
        "dummy": [0.6526, 0.6647, 0.6400, 0.5677, 0.9156],
        "models": {
            "NFP": ([0.8170, 0.8222, 0.8142, 0.7532, 0.9537], 0.4615),
            "GGNN": ([0.8392, 0.8532, 0.8326, 0.7847, 0.9564], 0.5240),
            "MPNN": ([0.6795, 0.6934, 0.6827, 0.5885, 0.9151], 0.0647),
            "Weave": ([0.7393, 0.7203, 0.7360, 0.6538, 0.9288], 0.2077),
            "R-GAT": ([0.7981, 0.7970, 0.7858, 0.7211, 0.9433], 0.3802),
            "R-GCN": ([0.8479, 0.8605, 0.8452, 0.7973, 0.9534], 0.5391),
            "RS-GCN": ([0.7734, 0.7992, 0.7964, 0.7129, 0.9471], 0.3785),
        },
    },
    "negishi": {
        "categories": ["metal", "ligand", "temperature", "solvent", "additive"],
        "dummy": [0.5008, 0.8549, 0.5885, 0.8788, 0.9043],
        "models": {
            "NFP": ([0.8054, 0.9601, 0.8262, 0.9522, 0.9745], 0.6503),
            "GGNN": ([0.8485, 0.9506, 0.8740, 0.9569, 0.9681], 0.6722),
            "MPNN": ([0.5072, 0.8724, 0.6619, 0.8852, 0.9123], 0.0896),
            "Weave": ([0.6045, 0.8947, 0.7624, 0.9059, 0.9203], 0.2590),
            "R-GAT": ([0.6715, 0.9187, 0.7608, 0.9171, 0.9314], 0.3598),
            "R-GCN": ([0.8086, 0.9522, 0.8517, 0.9537, 0.9761], 0.6590),
            "RS-GCN": ([0.7512, 0.9474, 0.8086, 0.9394, 0.9426], 0.5148),
        },
    },
    "pkr": {
        "categories": [
            "metal", "ligand", "temperature", "solvent",
            "activator", "CO (g)", "additive", "pressure",
        ],
        "dummy": [0.7132, 0.9019, 0.5962, 0.5925, 0.8830, 1.0000, 0.9321, 0.9623],
        "models": {
            "NFP": ([0.8604, 0.9887, 0.8038, 0.8340, 0.9660, 1.0000, 0.9698, 0.9774], 0.5957),
            "GGNN": ([0.8717, 0.9849, 0.8792, 0.8981, 0.9698, 1.0000, 0.9736, 0.9849], 0.6861),
            "MPNN": ([0.7849, 0.9811, 0.6415, 0.6981, 0.8755, 1.0000, 0.9472, 0.9736], 0.2695),
            "Weave": ([0.8302, 0.9736, 0.6981, 0.7472, 0.8906, 1.0000, 0.9660, 0.9623], 0.3336),
            "R-GAT": ([0.8189, 0.9736, 0.6604, 0.6981, 0.8792, 1.0000, 0.9509, 0.9736], 0.2947),
            "R-GCN": ([0.9057, 0.9849, 0.8528, 0.8679, 0.9774, 1.0000, 0.9698, 0.9849], 0.6844),
            "RS-GCN": ([0.8604, 0.9887, 0.7509, 0.8226, 0.9283, 1.0000, 0.9736, 0.9698], 0.5063),
        },
    },
}


def accuracy_row(table: dict, reaction: str, architecture: str) -> tuple[dict, dict, float]:
    """(model accuracies, dummy accuracies, published AER) for one table row."""
    block = table[reaction]
    accs, published = block["models"][architecture]
    model = dict(zip(block["categories"], accs))
    dummy = dict(zip(block["categories"], block["dummy"]))
    return model, dummy, published
