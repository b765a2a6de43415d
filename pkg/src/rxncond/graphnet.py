"""The four graph processing networks mapping molecules to fixed-width embeddings.

All four share an atom-type embedding table and a sum-style readout so the
embedding is invariant to atom relabeling. Message passing differs:

* ``rsgcn``  - spectral convolution over the renormalized, edge-type-collapsed
  adjacency: H <- relu(A_hat H W).
* ``rgcn``   - relational convolution with a self term and one weight per edge
  type over degree-scaled planes.
* ``ggnn``   - per-edge-type linear messages fed to a GRU state update, with a
  gated readout; weight tying shares one parameter set across layers.
* ``nfp``    - neighborhood sums pushed through degree-specific weights, with
  a softmax fingerprint accumulated across layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .smiles import NUM_EDGE_TYPES, MolGraph, featurize, normalized_adjacency, parse_smiles

ARCHITECTURES = ("nfp", "ggnn", "rgcn", "rsgcn")


@dataclass(frozen=True)
class GpnConfig:
    """Shape and wiring of one graph processing network."""

    architecture: str
    hidden_dim: int = 128
    out_dim: int = 128
    n_layers: int = 4
    n_atom_types: int = 117
    num_edge_type: int = 4
    weight_tying: bool = True
    max_degree: int = 6
    concat_hidden: bool = False

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ConfigError(
                f"unknown architecture {self.architecture!r}; expected one of {ARCHITECTURES}"
            )
        for name in ("hidden_dim", "out_dim", "n_layers", "n_atom_types"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.max_degree < 1:
            raise ConfigError("max_degree must be >= 1")
        if self.num_edge_type != NUM_EDGE_TYPES:
            raise ConfigError(f"num_edge_type is fixed at {NUM_EDGE_TYPES}")
        if self.concat_hidden:
            raise ConfigError("concat_hidden readouts are not supported")


class FeaturizedMolecule:
    """Parsed molecule with cached adjacency views for the architectures."""

    __slots__ = ("graph", "indices", "stack", "_cache")

    def __init__(self, graph: MolGraph):
        self.graph = graph
        self.indices, self.stack = featurize(graph)
        self._cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_smiles(cls, text: str) -> "FeaturizedMolecule":
        return cls(parse_smiles(text))

    @property
    def n_atoms(self) -> int:
        return self.graph.n_atoms

    @property
    def collapsed(self) -> np.ndarray:
        if "collapsed" not in self._cache:
            self._cache["collapsed"] = (self.stack.sum(axis=0) > 0).astype(np.float64)
        return self._cache["collapsed"]

    @property
    def renormalized(self) -> np.ndarray:
        if "renormalized" not in self._cache:
            self._cache["renormalized"] = normalized_adjacency(self.graph, "renormalized")
        return self._cache["renormalized"]

    @property
    def per_type_scaled(self) -> np.ndarray:
        if "per_type_scaled" not in self._cache:
            self._cache["per_type_scaled"] = normalized_adjacency(
                self.graph, "per_type_scaled"
            )
        return self._cache["per_type_scaled"]

    def degree_mask(self, bucket: int, max_degree: int) -> np.ndarray:
        """Column vector selecting atoms whose clamped degree equals ``bucket``.

        Degrees are clamped into [1, max_degree]: isolated atoms share the
        degree-1 weights, crowded atoms the top bucket.
        """
        key = f"degmask:{bucket}:{max_degree}"
        if key not in self._cache:
            degrees = self.collapsed.sum(axis=1).astype(int)
            clamped = np.clip(degrees, 1, max_degree)
            self._cache[key] = (clamped == bucket).astype(np.float64)[:, None]
        return self._cache[key]


def init_gpn_params(cfg: GpnConfig, rng: np.random.Generator) -> dict[str, T.Tensor]:
    """Fresh GPN parameters, drawn in a fixed order for reproducibility."""
    h, out = cfg.hidden_dim, cfg.out_dim

    def weight(name: str, shape: tuple[int, ...]) -> T.Tensor:
        return T.Tensor(T.uniform_init(rng, shape), requires_grad=True, name=name)

    def bias(name: str, width: int) -> T.Tensor:
        return T.Tensor(np.zeros((1, width)), requires_grad=True, name=name)

    params: dict[str, T.Tensor] = {"embed": weight("embed", (cfg.n_atom_types, h))}

    if cfg.architecture == "rsgcn":
        for layer in range(cfg.n_layers):
            params[f"conv{layer}.w"] = weight(f"conv{layer}.w", (h, h))
        params["readout.w"] = weight("readout.w", (h, out))
    elif cfg.architecture == "rgcn":
        for layer in range(cfg.n_layers):
            params[f"conv{layer}.self.w"] = weight(f"conv{layer}.self.w", (h, h))
            for r in range(cfg.num_edge_type):
                params[f"conv{layer}.rel{r}.w"] = weight(f"conv{layer}.rel{r}.w", (h, h))
        params["readout.w"] = weight("readout.w", (h, out))
    elif cfg.architecture == "ggnn":
        blocks = 1 if cfg.weight_tying else cfg.n_layers
        for block in range(blocks):
            prefix = "tied" if cfg.weight_tying else f"layer{block}"
            for r in range(cfg.num_edge_type):
                params[f"{prefix}.msg.rel{r}.w"] = weight(
                    f"{prefix}.msg.rel{r}.w", (h, h)
                )
            for gate in ("z", "r", "h"):
                params[f"{prefix}.gru.w_{gate}"] = weight(f"{prefix}.gru.w_{gate}", (h, h))
                params[f"{prefix}.gru.u_{gate}"] = weight(f"{prefix}.gru.u_{gate}", (h, h))
                params[f"{prefix}.gru.b_{gate}"] = bias(f"{prefix}.gru.b_{gate}", h)
        params["readout.gate.w"] = weight("readout.gate.w", (2 * h, out))
        params["readout.gate.b"] = bias("readout.gate.b", out)
        params["readout.emit.w"] = weight("readout.emit.w", (h, out))
        params["readout.emit.b"] = bias("readout.emit.b", out)
    elif cfg.architecture == "nfp":
        for degree in range(1, cfg.max_degree + 1):
            params[f"deg{degree}.w"] = weight(f"deg{degree}.w", (h, h))
        params["readout.w"] = weight("readout.w", (h, out))
    return params


def embed_molecule(
    molecule: FeaturizedMolecule,
    params: dict[str, T.Tensor],
    cfg: GpnConfig,
    capture_atom_states: bool = False,
):
    """Embed one molecule; optionally also return final-layer atom states.

    Returns the ``[1, out_dim]`` embedding tensor, or a tuple
    ``(embedding, atom_states)`` where ``atom_states`` is the pre-readout
    ``[n, hidden]`` value array.
    """
    fn = {
        "rsgcn": _embed_rsgcn,
        "rgcn": _embed_rgcn,
        "ggnn": _embed_ggnn,
        "nfp": _embed_nfp,
    }[cfg.architecture]
    embedding, states = fn(molecule, params, cfg)
    if capture_atom_states:
        return embedding, states.data.copy()
    return embedding


def _embed_rsgcn(molecule, params, cfg):
    a_hat = T.constant(molecule.renormalized)
    h = T.gather_rows(params["embed"], molecule.indices)
    for layer in range(cfg.n_layers):
        h = T.relu(T.matmul(T.matmul(a_hat, h), params[f"conv{layer}.w"]))
    out = T.tsum(T.matmul(h, params["readout.w"]), axis=0, keepdims=True)
    return out, h


def _embed_rgcn(molecule, params, cfg):
    planes = [T.constant(p) for p in molecule.per_type_scaled]
    h = T.gather_rows(params["embed"], molecule.indices)
    for layer in range(cfg.n_layers):
        acc = T.matmul(h, params[f"conv{layer}.self.w"])
        for r in range(cfg.num_edge_type):
            acc = T.add(acc, T.matmul(T.matmul(planes[r], h), params[f"conv{layer}.rel{r}.w"]))
        h = T.relu(acc)
    out = T.tsum(T.matmul(h, params["readout.w"]), axis=0, keepdims=True)
    return out, h


def _embed_ggnn(molecule, params, cfg):
    planes = [T.constant(p) for p in molecule.stack]
    h0 = T.gather_rows(params["embed"], molecule.indices)
    h = h0
    for layer in range(cfg.n_layers):
        prefix = "tied" if cfg.weight_tying else f"layer{layer}"
        message = None
        for r in range(cfg.num_edge_type):
            term = T.matmul(planes[r], T.matmul(h, params[f"{prefix}.msg.rel{r}.w"]))
            message = term if message is None else T.add(message, term)
        gru_params = {
            key: params[f"{prefix}.gru.{key}"]
            for key in ("w_z", "u_z", "b_z", "w_r", "u_r", "b_r", "w_h", "u_h", "b_h")
        }
        h = T.gru_cell(message, h, gru_params)
    gate = T.sigmoid(
        T.add(T.matmul(T.concat([h, h0], axis=1), params["readout.gate.w"]), params["readout.gate.b"])
    )
    emit = T.add(T.matmul(h, params["readout.emit.w"]), params["readout.emit.b"])
    out = T.tsum(T.mul(gate, emit), axis=0, keepdims=True)
    return out, h


def _embed_nfp(molecule, params, cfg):
    neighbor_sum = T.constant(molecule.collapsed)
    masks = [
        (d, T.constant(molecule.degree_mask(d, cfg.max_degree)))
        for d in range(1, cfg.max_degree + 1)
        if molecule.degree_mask(d, cfg.max_degree).any()
    ]
    h = T.gather_rows(params["embed"], molecule.indices)
    fingerprint = None
    for _ in range(cfg.n_layers):
        pooled = T.add(h, T.matmul(neighbor_sum, h))
        mixed = None
        for degree, mask in masks:
            term = T.mul(mask, T.matmul(pooled, params[f"deg{degree}.w"]))
            mixed = term if mixed is None else T.add(mixed, term)
        h = T.sigmoid(mixed)
        contribution = T.tsum(
            T.row_softmax(T.matmul(h, params["readout.w"])), axis=0, keepdims=True
        )
        fingerprint = (
            contribution if fingerprint is None else T.add(fingerprint, contribution)
        )
    return fingerprint, h
