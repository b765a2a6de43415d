"""SMILES parsing into typed molecular graphs, plus graph featurization.

The grammar covered here is the practical organic subset: bare atoms
B/C/N/O/P/S/F/Cl/Br/I, lowercase aromatics b/c/n/o/p/s, bracket atoms with
isotope, charge and explicit H counts, branches, ring closures (digits and
%nn), bond symbols ``-``/``=``/``#``, dot-separated components, and stereo
markers ``/`` ``\\`` ``@`` which are read and discarded. Implicit hydrogens
are never materialized: graphs contain heavy atoms only.

Parse errors carry the byte offset of the offending token.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import ParseError, ValidationError

# Atom-type vocabulary size shared with the graph networks: feature index is
# the atomic number, clamped into [0, ATOM_VOCAB_SIZE).
ATOM_VOCAB_SIZE = 117

NUM_EDGE_TYPES = 4


class EdgeType(enum.IntEnum):
    SINGLE = 0
    DOUBLE = 1
    TRIPLE = 2
    AROMATIC = 3


# Atomic numbers for every element symbol accepted inside brackets.
ATOMIC_NUMBERS: dict[str, int] = {
    "H": 1, "He": 2, "Li": 3, "Be": 4, "B": 5, "C": 6, "N": 7, "O": 8,
    "F": 9, "Ne": 10, "Na": 11, "Mg": 12, "Al": 13, "Si": 14, "P": 15,
    "S": 16, "Cl": 17, "Ar": 18, "K": 19, "Ca": 20, "Sc": 21, "Ti": 22,
    "V": 23, "Cr": 24, "Mn": 25, "Fe": 26, "Co": 27, "Ni": 28, "Cu": 29,
    "Zn": 30, "Ga": 31, "Ge": 32, "As": 33, "Se": 34, "Br": 35, "Kr": 36,
    "Rb": 37, "Sr": 38, "Y": 39, "Zr": 40, "Nb": 41, "Mo": 42, "Tc": 43,
    "Ru": 44, "Rh": 45, "Pd": 46, "Ag": 47, "Cd": 48, "In": 49, "Sn": 50,
    "Sb": 51, "Te": 52, "I": 53, "Xe": 54, "Cs": 55, "Ba": 56, "La": 57,
    "Ce": 58, "Pr": 59, "Nd": 60, "Pm": 61, "Sm": 62, "Eu": 63, "Gd": 64,
    "Tb": 65, "Dy": 66, "Ho": 67, "Er": 68, "Tm": 69, "Yb": 70, "Lu": 71,
    "Hf": 72, "Ta": 73, "W": 74, "Re": 75, "Os": 76, "Ir": 77, "Pt": 78,
    "Au": 79, "Hg": 80, "Tl": 81, "Pb": 82, "Bi": 83, "Po": 84, "At": 85,
    "Rn": 86, "Fr": 87, "Ra": 88, "Ac": 89, "Th": 90, "Pa": 91, "U": 92,
    "Np": 93, "Pu": 94, "Am": 95, "Cm": 96, "Bk": 97, "Cf": 98, "Es": 99,
    "Fm": 100, "Md": 101, "No": 102, "Lr": 103, "Rf": 104, "Db": 105,
    "Sg": 106, "Bh": 107, "Hs": 108, "Mt": 109, "Ds": 110, "Rg": 111,
    "Cn": 112, "Nh": 113, "Fl": 114, "Mc": 115, "Lv": 116, "Ts": 117,
    "Og": 118,
}

_ORGANIC_TWO = ("Cl", "Br")
_ORGANIC_ONE = set("BCNOPSFI")
_AROMATIC_ONE = set("bcnops")

_BOND_SYMBOLS = {"-": EdgeType.SINGLE, "=": EdgeType.DOUBLE, "#": EdgeType.TRIPLE}


@dataclass(frozen=True)
class AtomNode:
    """One heavy atom: element identity plus source-level flags."""

    element: str
    atomic_number: int
    formal_charge: int = 0
    aromatic: bool = False
    hydrogens: int | None = None  # explicit bracket H count, never expanded
    isotope: int | None = None

    @property
    def feature_index(self) -> int:
        return min(self.atomic_number, ATOM_VOCAB_SIZE - 1)


@dataclass(frozen=True)
class Bond:
    i: int
    j: int
    edge_type: EdgeType


@dataclass(frozen=True)
class MolGraph:
    """Heavy-atom molecular graph with typed bonds (i < j, no duplicates)."""

    atoms: tuple[AtomNode, ...]
    bonds: tuple[Bond, ...]
    source: str = ""

    @property
    def n_atoms(self) -> int:
        return len(self.atoms)

    def degrees(self) -> list[int]:
        deg = [0] * self.n_atoms
        for bond in self.bonds:
            deg[bond.i] += 1
            deg[bond.j] += 1
        return deg

    def bond_counts(self) -> dict[EdgeType, int]:
        counts = {t: 0 for t in EdgeType}
        for bond in self.bonds:
            counts[bond.edge_type] += 1
        return counts

    def permute(self, order: Iterable[int]) -> "MolGraph":
        """Relabel atoms so new index k holds old atom ``order[k]``."""
        order = list(order)
        if sorted(order) != list(range(self.n_atoms)):
            raise ValidationError("permutation must reorder exactly the atom indices")
        inverse = [0] * self.n_atoms
        for new, old in enumerate(order):
            inverse[old] = new
        atoms = tuple(self.atoms[old] for old in order)
        bonds = []
        for bond in self.bonds:
            i, j = inverse[bond.i], inverse[bond.j]
            if i > j:
                i, j = j, i
            bonds.append(Bond(i, j, bond.edge_type))
        return MolGraph(atoms=atoms, bonds=tuple(bonds), source=self.source)


class _Parser:
    """Single-pass cursor over the SMILES text."""

    def __init__(self, text: str):
        self.text = text
        self.pos = 0
        self.atoms: list[AtomNode] = []
        self.bonds: list[Bond] = []
        self.seen_pairs: set[tuple[int, int]] = set()
        self.anchor: int | None = None
        self.pending_bond: EdgeType | None = None
        self.pending_offset = 0
        self.branch_stack: list[tuple[int | None, int]] = []
        self.ring_open: dict[int, tuple[int, EdgeType | None, int]] = {}

    def fail(self, message: str, offset: int | None = None) -> None:
        raise ParseError(message, self.pos if offset is None else offset)

    def peek(self) -> str:
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def add_bond(self, i: int, j: int, edge_type: EdgeType, offset: int) -> None:
        if i == j:
            self.fail("ring closure creates a self-loop", offset)
        if i > j:
            i, j = j, i
        if (i, j) in self.seen_pairs:
            self.fail(f"duplicate bond between atoms {i} and {j}", offset)
        self.seen_pairs.add((i, j))
        self.bonds.append(Bond(i, j, edge_type))

    def attach(self, atom_index: int, offset: int) -> None:
        """Bond the freshly added atom to the current anchor, if any."""
        if self.anchor is not None:
            edge = self.pending_bond
            if edge is None:
                both_aromatic = (
                    self.atoms[self.anchor].aromatic and self.atoms[atom_index].aromatic
                )
                edge = EdgeType.AROMATIC if both_aromatic else EdgeType.SINGLE
            self.add_bond(self.anchor, atom_index, edge, offset)
        self.pending_bond = None
        self.anchor = atom_index

    def ring_closure(self, number: int, offset: int) -> None:
        if self.anchor is None:
            self.fail("ring closure before any atom", offset)
        if number in self.ring_open:
            partner, opening_bond, _ = self.ring_open.pop(number)
            edge = self.pending_bond if self.pending_bond is not None else opening_bond
            if (
                self.pending_bond is not None
                and opening_bond is not None
                and self.pending_bond != opening_bond
            ):
                self.fail(f"conflicting bond orders for ring closure {number}", offset)
            if edge is None:
                both_aromatic = (
                    self.atoms[partner].aromatic and self.atoms[self.anchor].aromatic
                )
                edge = EdgeType.AROMATIC if both_aromatic else EdgeType.SINGLE
            self.add_bond(partner, self.anchor, edge, offset)
        else:
            self.ring_open[number] = (self.anchor, self.pending_bond, offset)
        self.pending_bond = None

    def set_pending(self, edge: EdgeType, offset: int) -> None:
        if self.pending_bond is not None:
            self.fail("bond symbol follows another bond symbol", offset)
        if self.anchor is None:
            self.fail("bond symbol before any atom", offset)
        self.pending_bond = edge
        self.pending_offset = offset

    def parse_bare_atom(self) -> None:
        start = self.pos
        two = self.text[self.pos : self.pos + 2]
        if two in _ORGANIC_TWO:
            symbol = two
            self.pos += 2
        else:
            symbol = self.text[self.pos]
            self.pos += 1
            if symbol in _AROMATIC_ONE:
                node = AtomNode(
                    element=symbol.upper(),
                    atomic_number=ATOMIC_NUMBERS[symbol.upper()],
                    aromatic=True,
                )
                self.atoms.append(node)
                self.attach(len(self.atoms) - 1, start)
                return
            if symbol not in _ORGANIC_ONE:
                self.fail(f"unknown element symbol {symbol!r}", start)
        node = AtomNode(element=symbol, atomic_number=ATOMIC_NUMBERS[symbol])
        self.atoms.append(node)
        self.attach(len(self.atoms) - 1, start)

    def parse_bracket_atom(self) -> None:
        start = self.pos  # at '['
        end = self.text.find("]", self.pos + 1)
        if end < 0:
            self.fail("unterminated bracket atom", start)
        body = self.text[self.pos + 1 : end]
        cursor = self.pos + 1

        def body_fail(message: str, at: int) -> None:
            raise ParseError(message, at)

        k = 0
        isotope: int | None = None
        while k < len(body) and body[k].isdigit():
            k += 1
        if k:
            isotope = int(body[:k])

        if k >= len(body):
            body_fail("bracket atom is missing an element symbol", cursor + k)
        symbol = None
        two = body[k : k + 2]
        if len(two) == 2 and two[0].isupper() and two[1].islower() and two in ATOMIC_NUMBERS:
            symbol = two
            aromatic = False
            k += 2
        elif body[k].isupper():
            symbol = body[k]
            aromatic = False
            if symbol not in ATOMIC_NUMBERS:
                body_fail(f"unknown element symbol {symbol!r}", cursor + k)
            k += 1
        elif body[k] in _AROMATIC_ONE:
            symbol = body[k].upper()
            aromatic = True
            k += 1
        else:
            body_fail(f"unknown element symbol {body[k]!r}", cursor + k)

        hydrogens: int | None = None
        charge = 0
        while k < len(body):
            ch = body[k]
            if ch == "@":
                k += 1  # chirality marker, discarded
                if k < len(body) and body[k] == "@":
                    k += 1
            elif ch == "H":
                k += 1
                digits = ""
                while k < len(body) and body[k].isdigit():
                    digits += body[k]
                    k += 1
                hydrogens = int(digits) if digits else 1
            elif ch in "+-":
                signum = 1 if ch == "+" else -1
                k += 1
                digits = ""
                while k < len(body) and body[k].isdigit():
                    digits += body[k]
                    k += 1
                if digits:
                    charge += signum * int(digits)
                else:
                    charge += signum
                    while k < len(body) and body[k] == ch:
                        charge += signum
                        k += 1
            else:
                body_fail(f"unexpected character {ch!r} in bracket atom", cursor + k)

        node = AtomNode(
            element=symbol,
            atomic_number=ATOMIC_NUMBERS[symbol],
            formal_charge=charge,
            aromatic=aromatic,
            hydrogens=hydrogens,
            isotope=isotope,
        )
        self.atoms.append(node)
        self.attach(len(self.atoms) - 1, start)
        self.pos = end + 1

    def run(self) -> MolGraph:
        text = self.text
        if not text:
            raise ParseError("empty SMILES string", 0)
        while self.pos < len(text):
            ch = text[self.pos]
            if ch == "(":
                if self.anchor is None:
                    self.fail("branch opened before any atom")
                if self.pending_bond is not None:
                    self.fail("bond symbol before branch opening")
                self.branch_stack.append((self.anchor, self.pos))
                self.pos += 1
            elif ch == ")":
                if not self.branch_stack:
                    self.fail("unbalanced closing parenthesis")
                if self.pending_bond is not None:
                    self.fail("dangling bond at branch close", self.pending_offset)
                self.anchor = self.branch_stack.pop()[0]
                self.pos += 1
            elif ch in _BOND_SYMBOLS:
                self.set_pending(_BOND_SYMBOLS[ch], self.pos)
                self.pos += 1
            elif ch in "/\\":
                # Stereo bond markers: read as plain single bonds.
                self.set_pending(EdgeType.SINGLE, self.pos)
                self.pos += 1
            elif ch == ".":
                if self.pending_bond is not None:
                    self.fail("bond symbol before component separator", self.pending_offset)
                self.anchor = None
                self.pos += 1
            elif ch.isdigit():
                self.ring_closure(int(ch), self.pos)
                self.pos += 1
            elif ch == "%":
                digits = text[self.pos + 1 : self.pos + 3]
                if len(digits) != 2 or not digits.isdigit():
                    self.fail("'%' ring closure needs two digits")
                self.ring_closure(int(digits), self.pos)
                self.pos += 3
            elif ch == "[":
                self.parse_bracket_atom()
            elif ch.isalpha():
                self.parse_bare_atom()
            else:
                self.fail(f"unexpected character {ch!r}")

        if self.branch_stack:
            raise ParseError("unclosed branch parenthesis", self.branch_stack[0][1])
        if self.ring_open:
            first = min(offset for (_, _, offset) in self.ring_open.values())
            raise ParseError("unclosed ring bond", first)
        if self.pending_bond is not None:
            raise ParseError("dangling bond at end of input", self.pending_offset)
        if not self.atoms:
            raise ParseError("SMILES contains no atoms", 0)
        return MolGraph(atoms=tuple(self.atoms), bonds=tuple(self.bonds), source=text)


def parse_smiles(text: str) -> MolGraph:
    """Parse one SMILES string into a :class:`MolGraph`."""
    return _Parser(text).run()


def featurize(graph: MolGraph) -> tuple[np.ndarray, np.ndarray]:
    """Atom feature indices plus the per-edge-type adjacency stack.

    Returns ``(indices[n], stack[4, n, n])``; each plane is symmetric with a
    zero diagonal.
    """
    n = graph.n_atoms
    indices = np.array([atom.feature_index for atom in graph.atoms], dtype=np.intp)
    stack = np.zeros((NUM_EDGE_TYPES, n, n))
    for bond in graph.bonds:
        stack[bond.edge_type, bond.i, bond.j] = 1.0
        stack[bond.edge_type, bond.j, bond.i] = 1.0
    return indices, stack


def normalized_adjacency(graph: MolGraph, mode: str) -> np.ndarray:
    """Normalized adjacency used by the spectral and relational convolutions.

    ``renormalized``: collapse edge types to any-bond, then
    D^-1/2 (A + I) D^-1/2 (one [n, n] matrix).
    ``per_type_scaled``: each edge-type plane row-scaled by the within-type
    degree; zero-degree rows stay zero ([4, n, n]).
    """
    _, stack = featurize(graph)
    if mode == "renormalized":
        collapsed = (stack.sum(axis=0) > 0).astype(np.float64)
        hat = collapsed + np.eye(graph.n_atoms)
        inv_sqrt = 1.0 / np.sqrt(hat.sum(axis=1))
        return hat * inv_sqrt[:, None] * inv_sqrt[None, :]
    if mode == "per_type_scaled":
        scaled = stack.copy()
        for plane in scaled:
            degree = plane.sum(axis=1)
            nonzero = degree > 0
            plane[nonzero] /= degree[nonzero, None]
        return scaled
    raise ValidationError(f"unknown adjacency mode {mode!r}")
