"""Per-atom activation maps and their SVG/JSON rendering.

Activation is the L2 norm of each atom's final-layer GPN state, min-max
normalized across every atom of the reaction so reactants and product share
one shading scale. Rendering is deterministic and force-free: rings are laid
as regular polygons, everything else placed breadth-first on hexagonal
directions.
"""

from __future__ import annotations

import cmath
import json
import math
from collections import deque
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .graphnet import embed_molecule
from .model import ReactionInputs, ReactionModel
from .smiles import EdgeType, MolGraph

SIDECAR_FORMAT_VERSION = 1


@dataclass
class MoleculeActivations:
    role: str  # "reactant" or "product"
    smiles: str
    raw_norms: list[float]
    scores: list[float]


@dataclass
class AtomActivationMap:
    molecules: list[MoleculeActivations]


def activations(model: ReactionModel, inputs: ReactionInputs) -> AtomActivationMap:
    """Final-layer atom-state norms, min-max normalized across the reaction."""
    gpn = model.gpn_params()
    collected: list[tuple[str, str, np.ndarray]] = []
    for role, molecule in inputs.molecules():
        _, states = embed_molecule(molecule, gpn, model.gpn_config, capture_atom_states=True)
        norms = np.linalg.norm(states, axis=1)
        collected.append((role, molecule.graph.source, norms))

    all_norms = np.concatenate([norms for _, _, norms in collected])
    low, high = all_norms.min(), all_norms.max()
    span = high - low
    molecules = []
    for role, smiles, norms in collected:
        if span > 0:
            scores = (norms - low) / span
        else:
            scores = np.zeros_like(norms)  # degenerate: all equal -> all zero
        molecules.append(
            MoleculeActivations(
                role=role,
                smiles=smiles,
                raw_norms=[float(x) for x in norms],
                scores=[float(x) for x in scores],
            )
        )
    return AtomActivationMap(molecules=molecules)


def sidecar_dict(activation_map: AtomActivationMap, graphs: Sequence[MolGraph]) -> dict:
    """JSON sidecar: one entry per molecule, one (index, element, score) per atom."""
    molecules = []
    for mol, graph in zip(activation_map.molecules, graphs):
        molecules.append(
            {
                "role": mol.role,
                "smiles": mol.smiles,
                "raw_norms": mol.raw_norms,
                "scores": mol.scores,
                "atoms": [
                    {"index": i, "element": atom.element, "score": mol.scores[i]}
                    for i, atom in enumerate(graph.atoms)
                ],
            }
        )
    return {"format_version": SIDECAR_FORMAT_VERSION, "molecules": molecules}


def map_from_sidecar(payload: dict) -> AtomActivationMap:
    if payload.get("format_version") != SIDECAR_FORMAT_VERSION:
        raise ValidationError(
            f"unsupported sidecar format version {payload.get('format_version')!r}"
        )
    return AtomActivationMap(
        molecules=[
            MoleculeActivations(
                role=m["role"],
                smiles=m["smiles"],
                raw_norms=[float(x) for x in m["raw_norms"]],
                scores=[float(x) for x in m["scores"]],
            )
            for m in payload["molecules"]
        ]
    )


def sidecar_json(activation_map: AtomActivationMap, graphs: Sequence[MolGraph]) -> str:
    return json.dumps(sidecar_dict(activation_map, graphs), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# Deterministic 2-D layout


def _neighbor_lists(graph: MolGraph) -> list[list[int]]:
    neighbors: list[list[int]] = [[] for _ in range(graph.n_atoms)]
    for bond in graph.bonds:
        neighbors[bond.i].append(bond.j)
        neighbors[bond.j].append(bond.i)
    return [sorted(ns) for ns in neighbors]


def _cycle_basis(graph: MolGraph, neighbors: list[list[int]]) -> list[list[int]]:
    """BFS spanning-forest cycle basis; each cycle listed in ring-walk order."""
    n = graph.n_atoms
    parent: list[int | None] = [None] * n
    seen = [False] * n
    tree_edges: set[tuple[int, int]] = set()
    for root in range(n):
        if seen[root]:
            continue
        seen[root] = True
        queue = deque([root])
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    parent[v] = u
                    tree_edges.add((min(u, v), max(u, v)))
                    queue.append(v)

    cycles: list[list[int]] = []
    for bond in graph.bonds:
        u, v = bond.i, bond.j
        if (u, v) in tree_edges:
            continue
        up_path = [u]
        node = u
        while parent[node] is not None:
            node = parent[node]
            up_path.append(node)
        ancestors = {a: i for i, a in enumerate(up_path)}
        right: list[int] = []
        node = v
        while node not in ancestors:  # both endpoints share a BFS root
            right.append(node)
            node = parent[node]
        cycle = up_path[: ancestors[node] + 1] + right[::-1]
        if len(cycle) >= 3:
            cycles.append(cycle)
    return cycles


def _components(graph: MolGraph, neighbors: list[list[int]]) -> list[list[int]]:
    seen = [False] * graph.n_atoms
    components = []
    for start in range(graph.n_atoms):
        if seen[start]:
            continue
        queue = deque([start])
        seen[start] = True
        members = [start]
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if not seen[v]:
                    seen[v] = True
                    members.append(v)
                    queue.append(v)
        components.append(sorted(members))
    return components


_HEX_SLOTS = [k * math.pi / 3.0 for k in range(6)]


def _free_direction(occupied: list[float]) -> float:
    if not occupied:
        return 0.0
    best_slot, best_gap = 0.0, -1.0
    for slot in _HEX_SLOTS:
        gap = min(
            min(abs(slot - a), 2 * math.pi - abs(slot - a)) for a in occupied
        )
        if gap > best_gap + 1e-12:
            best_gap = gap
            best_slot = slot
    return best_slot


def layout(graph: MolGraph) -> list[tuple[float, float]]:
    """Unit-bond coordinates; rings are regular polygons, chains zig-zag free."""
    n = graph.n_atoms
    neighbors = _neighbor_lists(graph)
    rings = _cycle_basis(graph, neighbors)
    ring_by_edge: dict[frozenset[int], int] = {}
    for idx, ring in enumerate(rings):
        edges = list(zip(ring, ring[1:] + ring[:1]))
        for a, b in edges:
            ring_by_edge.setdefault(frozenset((a, b)), idx)

    pos: dict[int, complex] = {}
    laid_rings: set[int] = set()

    def place_ring(idx: int, anchor: int, queue: deque) -> None:
        ring = rings[idx]
        m = len(ring)
        radius = 0.5 / math.sin(math.pi / m)
        start = ring.index(anchor)
        ordered = ring[start:] + ring[:start]
        placed_nb = [pos[w] for w in neighbors[anchor] if w in pos]
        if placed_nb:
            away = pos[anchor] - sum(placed_nb) / len(placed_nb)
            direction = away / abs(away) if abs(away) > 1e-9 else 1 + 0j
        else:
            direction = 1 + 0j
        center = pos[anchor] + direction * radius
        base = cmath.phase(pos[anchor] - center)
        for k, atom in enumerate(ordered):
            if atom in pos:
                continue
            pos[atom] = center + radius * cmath.exp(1j * (base + 2 * math.pi * k / m))
            queue.append(atom)
        laid_rings.add(idx)

    component_spans: list[tuple[list[int], float, float]] = []
    for members in _components(graph, neighbors):
        start = members[0]
        pos[start] = 0j
        queue = deque([start])
        start_ring = next(
            (i for i, ring in enumerate(rings) if start in ring and i not in laid_rings),
            None,
        )
        if start_ring is not None:
            place_ring(start_ring, start, queue)
        while queue:
            u = queue.popleft()
            for v in neighbors[u]:
                if v in pos:
                    continue
                ring_idx = ring_by_edge.get(frozenset((u, v)))
                if ring_idx is not None and ring_idx not in laid_rings:
                    place_ring(ring_idx, u, queue)
                    if v in pos:
                        continue
                occupied = [
                    cmath.phase(pos[w] - pos[u]) for w in neighbors[u] if w in pos
                ]
                angle = _free_direction(occupied)
                pos[v] = pos[u] + cmath.exp(1j * angle)
                queue.append(v)
        xs = [pos[a].real for a in members]
        component_spans.append((members, min(xs), max(xs)))

    # Shift disconnected components so they sit side by side.
    cursor = 0.0
    for members, lo, hi in component_spans:
        shift = cursor - lo
        for a in members:
            pos[a] += shift
        cursor += (hi - lo) + 1.5

    return [(pos[a].real, pos[a].imag) for a in range(n)]


# ---------------------------------------------------------------------------
# SVG emission

_SCALE = 42.0
_MARGIN = 40.0
_ATOM_RADIUS = 13.0


def _charge_suffix(charge: int) -> str:
    if charge == 0:
        return ""
    sign = "+" if charge > 0 else "-"
    return sign if abs(charge) == 1 else f"{abs(charge)}{sign}"


def render_svg(graph: MolGraph, scores: Sequence[float]) -> str:
    """Shaded molecular depiction; identical inputs yield identical bytes."""
    if len(scores) != graph.n_atoms:
        raise ValidationError(
            f"{len(scores)} scores for a {graph.n_atoms}-atom graph"
        )
    coords = layout(graph)
    xs = [c[0] for c in coords]
    ys = [c[1] for c in coords]
    width = (max(xs) - min(xs)) * _SCALE + 2 * _MARGIN
    height = (max(ys) - min(ys)) * _SCALE + 2 * _MARGIN

    def to_px(point: tuple[float, float]) -> tuple[float, float]:
        x, y = point
        return (
            (x - min(xs)) * _SCALE + _MARGIN,
            (max(ys) - y) * _SCALE + _MARGIN,
        )

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.2f}" '
        f'height="{height:.2f}" viewBox="0 0 {width:.2f} {height:.2f}">',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for bond in sorted(graph.bonds, key=lambda b: (b.i, b.j)):
        (x1, y1), (x2, y2) = to_px(coords[bond.i]), to_px(coords[bond.j])
        dx, dy = x2 - x1, y2 - y1
        length = math.hypot(dx, dy) or 1.0
        nx, ny = -dy / length, dx / length
        if bond.edge_type == EdgeType.SINGLE:
            offsets, dash = [0.0], None
        elif bond.edge_type == EdgeType.DOUBLE:
            offsets, dash = [-2.4, 2.4], None
        elif bond.edge_type == EdgeType.TRIPLE:
            offsets, dash = [-4.0, 0.0, 4.0], None
        else:
            offsets, dash = [0.0], "6,4"
        for off in offsets:
            dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
            parts.append(
                f'<line x1="{x1 + nx * off:.2f}" y1="{y1 + ny * off:.2f}" '
                f'x2="{x2 + nx * off:.2f}" y2="{y2 + ny * off:.2f}" '
                f'stroke="black" stroke-width="1.6"{dash_attr}/>'
            )
    for index, atom in enumerate(graph.atoms):
        x, y = to_px(coords[index])
        score = float(scores[index])
        shade = int(round(255 * (1.0 - score)))
        text_fill = "white" if score > 0.55 else "black"
        label = atom.element + _charge_suffix(atom.formal_charge)
        parts.append(
            f'<circle data-atom="{index}" data-score="{score:.6f}" cx="{x:.2f}" '
            f'cy="{y:.2f}" r="{_ATOM_RADIUS:.1f}" fill="rgb({shade},{shade},{shade})" '
            f'stroke="black" stroke-width="1.0"/>'
        )
        parts.append(
            f'<text x="{x:.2f}" y="{y + 4.5:.2f}" font-family="sans-serif" '
            f'font-size="12" text-anchor="middle" fill="{text_fill}">{label}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
