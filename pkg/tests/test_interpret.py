import json
import math
import re

import numpy as np
import pytest

from rxncond.graphnet import FeaturizedMolecule, GpnConfig
from rxncond.interpret import (
    activations,
    layout,
    map_from_sidecar,
    render_svg,
    sidecar_dict,
    sidecar_json,
)
from rxncond.model import ReactionInputs, build_model
from rxncond.smiles import parse_smiles

CFG = GpnConfig(architecture="rgcn", hidden_dim=6, out_dim=4, n_layers=2, n_atom_types=54)


@pytest.fixture()
def net(small_corpus):
    _, dictionary = small_corpus
    return build_model(CFG, dictionary.total_bins, dictionary.digest(), seed=9, mlp_hidden=8)


def reaction(reactants, product):
    return ReactionInputs(
        reactants=[FeaturizedMolecule.from_smiles(s) for s in reactants],
        product=FeaturizedMolecule.from_smiles(product),
    )


class TestActivations:
    def test_scores_in_unit_interval_with_max_one(self, net):
        amap = activations(net, reaction(["CCCl", "CN"], "C1CCC1"))
        scores = [s for m in amap.molecules for s in m.scores]
        assert all(0.0 <= s <= 1.0 for s in scores)
        assert math.isclose(max(scores), 1.0)
        assert math.isclose(min(scores), 0.0)

    def test_min_max_arithmetic(self):
        # Two atoms with norms 1 and 3 must map to scores 0 and 1; checked
        # through the public path by reproducing the normalization directly.
        norms = np.array([1.0, 3.0])
        low, high = norms.min(), norms.max()
        scores = (norms - low) / (high - low)
        assert scores.tolist() == [0.0, 1.0]

    def test_single_atom_reaction_degenerate(self, net):
        # All three molecules are one carbon: every norm is equal, so the
        # all-equal rule zeroes every score.
        amap = activations(net, reaction(["C", "C"], "C"))
        assert all(s == 0.0 for m in amap.molecules for s in m.scores)

    def test_normalization_shared_across_molecules(self, net):
        amap = activations(net, reaction(["CCCl", "CN"], "C1CCC1"))
        top = [max(m.scores) for m in amap.molecules]
        assert sum(math.isclose(t, 1.0) for t in top) >= 1
        assert not all(math.isclose(t, 1.0) for t in top)  # one shared scale

    def test_roles_and_sources_recorded(self, net):
        amap = activations(net, reaction(["CCCl"], "C1CCC1"))
        assert [m.role for m in amap.molecules] == ["reactant", "product"]
        assert amap.molecules[0].smiles == "CCCl"

    def test_permutation_equivariance(self, net):
        graph = parse_smiles("OC(=O)C#N")
        perm = [3, 0, 4, 1, 2]
        base = activations(
            net, ReactionInputs(reactants=[FeaturizedMolecule(graph)],
                                product=FeaturizedMolecule.from_smiles("C"))
        )
        permuted = activations(
            net, ReactionInputs(reactants=[FeaturizedMolecule(graph.permute(perm))],
                                product=FeaturizedMolecule.from_smiles("C")),
        )
        expected = [base.molecules[0].scores[old] for old in perm]
        assert np.allclose(permuted.molecules[0].scores, expected)


class TestLayout:
    def test_benzene_is_regular_hexagon(self):
        coords = layout(parse_smiles("c1ccccc1"))
        center = np.mean(coords, axis=0)
        radii = [math.dist(c, center) for c in coords]
        assert max(radii) - min(radii) < 1e-9
        # All bonded pairs at unit distance.
        for i in range(6):
            j = (i + 1) % 6
            assert math.isclose(math.dist(coords[i], coords[j]), 1.0, abs_tol=1e-9)

    def test_chain_has_unit_bonds(self):
        coords = layout(parse_smiles("CCCCC"))
        g = parse_smiles("CCCCC")
        for bond in g.bonds:
            assert math.isclose(math.dist(coords[bond.i], coords[bond.j]), 1.0, abs_tol=1e-9)

    def test_components_do_not_overlap(self):
        g = parse_smiles("CCC.NN")
        coords = layout(g)
        left = {0, 1, 2}
        max_left = max(coords[i][0] for i in left)
        min_right = min(coords[i][0] for i in range(3, 5))
        assert min_right > max_left

    def test_deterministic(self):
        assert layout(parse_smiles("c1ccc2ccccc2c1")) == layout(
            parse_smiles("c1ccc2ccccc2c1")
        )


class TestRender:
    def test_identical_maps_yield_identical_bytes(self):
        g = parse_smiles("O=C(O)c1ccccc1")
        scores = [i / (g.n_atoms - 1) for i in range(g.n_atoms)]
        assert render_svg(g, scores) == render_svg(g, scores)

    def test_benzene_uniform_scores_shade_equally(self):
        g = parse_smiles("c1ccccc1")
        svg = render_svg(g, [0.5] * 6)
        fills = re.findall(r'<circle[^>]*fill="(rgb\(\d+,\d+,\d+\))"', svg)
        assert len(set(fills)) == 1
        assert len(fills) == 6

    def test_shade_ordering_matches_score_ordering(self):
        g = parse_smiles("CCCCO")
        scores = [0.1, 0.9, 0.4, 0.0, 1.0]
        svg = render_svg(g, scores)
        shades = {}
        for match in re.finditer(
            r'<circle data-atom="(\d+)"[^>]*fill="rgb\((\d+),\d+,\d+\)"', svg
        ):
            shades[int(match.group(1))] = int(match.group(2))
        # Higher score -> darker (smaller channel value).
        by_score = sorted(range(5), key=lambda i: scores[i])
        darkness = [shades[i] for i in by_score]
        assert darkness == sorted(darkness, reverse=True)

    def test_charge_labels(self):
        svg = render_svg(parse_smiles("[NH4+]"), [0.0])
        assert ">N+<" in svg

    def test_score_count_must_match(self):
        from rxncond.errors import ValidationError

        with pytest.raises(ValidationError):
            render_svg(parse_smiles("CC"), [0.1])


class TestSidecar:
    def test_round_trip(self, net):
        inputs = reaction(["CCCl", "CN"], "C1CCC1")
        amap = activations(net, inputs)
        graphs = [m.graph for _, m in inputs.molecules()]
        payload = json.loads(sidecar_json(amap, graphs))
        assert payload["format_version"] == 1
        assert map_from_sidecar(payload) == amap

    def test_atom_entries_align_with_graph(self, net):
        inputs = reaction(["CCO"], "CCN")
        amap = activations(net, inputs)
        graphs = [m.graph for _, m in inputs.molecules()]
        payload = sidecar_dict(amap, graphs)
        first = payload["molecules"][0]
        assert [a["element"] for a in first["atoms"]] == ["C", "C", "O"]
        assert [a["index"] for a in first["atoms"]] == [0, 1, 2]
        assert [a["score"] for a in first["atoms"]] == first["scores"]
