"""Role-categorized condition dictionary: build, encode, filter, persist.

The dictionary is built from raw reaction records in two truncation passes:
labels are pooled globally and kept up to a cumulative coverage threshold,
then assigned to reaction-role categories (copying multi-role labels into
each), recounted, and truncated again per category. Every category ends with
a null bin so an unspecified role is still a first-class label.
"""

from __future__ import annotations

import csv
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ValidationError

DICTIONARY_FORMAT_VERSION = 1

# Reserved label marking "no condition given for this category".
NULL_LABEL = "<null>"

# Category that temperature strings are routed to when temperature is used.
TEMPERATURE_CATEGORY = "temperature"

DEFAULT_TEMPERATURE = "20 °C"

CSV_COLUMNS = ("reactant_smiles", "product_smiles", "conditions", "yield", "temperature")


@dataclass
class RawRecord:
    """One ingested reaction: structures, raw condition strings, metadata.

    Duplicate condition strings are removed on construction (order kept).
    Empty structure fields are allowed here; ``require_structures`` filters
    them out before modeling.
    """

    reactants: list[str]
    product: str
    conditions: list[str]
    yield_percent: float | None = None
    temperature: str | None = None

    def __post_init__(self):
        if not self.reactants:
            raise ValidationError("record needs at least one reactant entry")
        if self.yield_percent is not None and not 0.0 <= self.yield_percent <= 100.0:
            raise ValidationError(f"yield {self.yield_percent} outside [0, 100]")
        seen: set[str] = set()
        unique = []
        for condition in self.conditions:
            if condition not in seen:
                seen.add(condition)
                unique.append(condition)
        self.conditions = unique


@dataclass(frozen=True)
class Bin:
    label: str
    frequency: int


@dataclass(frozen=True)
class Category:
    """Ordered bins (descending frequency, null last)."""

    name: str
    bins: tuple[Bin, ...]

    @property
    def size(self) -> int:
        return len(self.bins)

    def labels(self) -> list[str]:
        return [b.label for b in self.bins]


@dataclass(frozen=True)
class ConditionDictionary:
    """The label space: ordered categories, alias map, flat bin layout."""

    categories: tuple[Category, ...]
    aliases: dict[str, str] = field(default_factory=dict)
    coverage: float = 0.95
    uses_temperature: bool = False
    temperature_default: str = DEFAULT_TEMPERATURE

    @property
    def total_bins(self) -> int:
        return sum(c.size for c in self.categories)

    def category_names(self) -> list[str]:
        return [c.name for c in self.categories]

    def category(self, name: str) -> Category:
        for cat in self.categories:
            if cat.name == name:
                return cat
        raise ValidationError(f"unknown category {name!r}")

    def slices(self) -> dict[str, slice]:
        """Flat probability-vector slice per category, in category order."""
        out: dict[str, slice] = {}
        offset = 0
        for cat in self.categories:
            out[cat.name] = slice(offset, offset + cat.size)
            offset += cat.size
        return out

    def flat_index(self, category: str, label: str) -> int:
        offset = 0
        for cat in self.categories:
            if cat.name == category:
                for k, b in enumerate(cat.bins):
                    if b.label == label:
                        return offset + k
                raise ValidationError(f"label {label!r} not in category {category!r}")
            offset += cat.size
        raise ValidationError(f"unknown category {category!r}")

    def label_at(self, index: int) -> tuple[str, str]:
        if not 0 <= index < self.total_bins:
            raise ValidationError(f"bin index {index} outside [0, {self.total_bins})")
        for cat in self.categories:
            if index < cat.size:
                return cat.name, cat.bins[index].label
            index -= cat.size
        raise AssertionError("unreachable")

    def canonical(self, label: str) -> str:
        return self.aliases.get(label, label)

    def record_labels(self, record: RawRecord) -> list[str]:
        """Canonicalized label pool contributed by one record."""
        labels = [self.canonical(s) for s in record.conditions if s]
        if self.uses_temperature:
            labels.append(self.canonical(record.temperature or self.temperature_default))
        return labels

    def to_json_dict(self) -> dict:
        return {
            "format_version": DICTIONARY_FORMAT_VERSION,
            "coverage": self.coverage,
            "uses_temperature": self.uses_temperature,
            "temperature_default": self.temperature_default,
            "aliases": dict(sorted(self.aliases.items())),
            "categories": [
                {
                    "name": cat.name,
                    "bins": [{"label": b.label, "frequency": b.frequency} for b in cat.bins],
                }
                for cat in self.categories
            ],
        }

    @classmethod
    def from_json_dict(cls, payload: Mapping) -> "ConditionDictionary":
        if payload.get("format_version") != DICTIONARY_FORMAT_VERSION:
            raise ValidationError(
                f"unsupported dictionary format version {payload.get('format_version')!r}"
            )
        categories = tuple(
            Category(
                name=cat["name"],
                bins=tuple(Bin(b["label"], int(b["frequency"])) for b in cat["bins"]),
            )
            for cat in payload["categories"]
        )
        return cls(
            categories=categories,
            aliases=dict(payload.get("aliases", {})),
            coverage=float(payload.get("coverage", 0.95)),
            uses_temperature=bool(payload.get("uses_temperature", False)),
            temperature_default=payload.get("temperature_default", DEFAULT_TEMPERATURE),
        )

    def digest(self) -> str:
        canonical = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_json_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "ConditionDictionary":
        return cls.from_json_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class BuildReport:
    """Bookkeeping from a dictionary build, for the curation report."""

    total_instances: int = 0
    kept_global: int = 0
    dropped_global: list[tuple[str, int]] = field(default_factory=list)
    dropped_per_category: dict[str, list[tuple[str, int]]] = field(default_factory=dict)
    unmapped: list[tuple[str, int]] = field(default_factory=list)


def _truncate_by_coverage(
    counts: Mapping[str, int], coverage: float
) -> tuple[list[tuple[str, int]], list[tuple[str, int]]]:
    """Keep most-frequent labels until cumulative coverage first reaches the
    threshold (inclusive). Ties broken lexicographically."""
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    total = sum(counts.values())
    kept: list[tuple[str, int]] = []
    cumulative = 0
    for k, (label, freq) in enumerate(ordered):
        kept.append((label, freq))
        cumulative += freq
        if cumulative >= coverage * total:
            return kept, ordered[k + 1 :]
    return kept, []


def build_dictionary(
    records: Sequence[RawRecord],
    roles: Mapping[str, Sequence[str]],
    aliases: Mapping[str, str] | None = None,
    coverage: float = 0.95,
    use_temperature: bool = False,
    temperature_default: str = DEFAULT_TEMPERATURE,
) -> tuple[ConditionDictionary, BuildReport]:
    """Build the categorized dictionary from raw records.

    ``roles`` maps canonical label -> category names (one or more); category
    order follows first appearance in the role map. Temperature strings, when
    enabled, implicitly route to the ``temperature`` category.
    """
    if not 0.0 < coverage <= 1.0:
        raise ValidationError(f"coverage {coverage} outside (0, 1]")
    if not records:
        raise ValidationError("cannot build a dictionary from zero records")
    aliases = dict(aliases or {})

    category_order: list[str] = []
    for cats in roles.values():
        for cat in cats:
            if cat not in category_order:
                category_order.append(cat)
    if use_temperature and TEMPERATURE_CATEGORY not in category_order:
        category_order.append(TEMPERATURE_CATEGORY)

    def canonical(label: str) -> str:
        return aliases.get(label, label)

    counts: Counter[str] = Counter()
    temperature_labels: set[str] = set()
    for record in records:
        counts.update(canonical(s) for s in record.conditions if s)
        if use_temperature:
            label = canonical(record.temperature or temperature_default)
            counts[label] += 1
            temperature_labels.add(label)
    if not counts:
        raise ValidationError("records carry no condition labels")

    report = BuildReport(total_instances=sum(counts.values()))
    kept, dropped = _truncate_by_coverage(counts, coverage)
    report.kept_global = len(kept)
    report.dropped_global = dropped

    per_category: dict[str, dict[str, int]] = {name: {} for name in category_order}
    for label, freq in kept:
        assigned = list(roles.get(label, ()))
        if not assigned and label in temperature_labels:
            # Temperature strings route implicitly unless the role map says
            # otherwise; other unmapped survivors are reported.
            assigned = [TEMPERATURE_CATEGORY]
        if not assigned:
            report.unmapped.append((label, freq))
            continue
        for cat in assigned:
            if cat not in per_category:
                per_category[cat] = {}
                category_order.append(cat)
            per_category[cat][label] = freq

    categories: list[Category] = []
    for name in category_order:
        bucket = per_category.get(name, {})
        if bucket:
            kept_cat, dropped_cat = _truncate_by_coverage(bucket, coverage)
            if dropped_cat:
                report.dropped_per_category[name] = dropped_cat
        else:
            kept_cat = []
        bins = tuple(Bin(label, freq) for label, freq in kept_cat) + (Bin(NULL_LABEL, 0),)
        categories.append(Category(name=name, bins=bins))

    dictionary = ConditionDictionary(
        categories=tuple(categories),
        aliases=aliases,
        coverage=coverage,
        uses_temperature=use_temperature,
        temperature_default=temperature_default,
    )
    return dictionary, report


def encode_targets(record: RawRecord, dictionary: ConditionDictionary) -> np.ndarray:
    """Multi-hot target over the flat bin layout; null bit where nothing matched."""
    labels = set(dictionary.record_labels(record))
    target = np.zeros(dictionary.total_bins)
    offset = 0
    for cat in dictionary.categories:
        hit = False
        for k, b in enumerate(cat.bins):
            if b.label != NULL_LABEL and b.label in labels:
                target[offset + k] = 1.0
                hit = True
        if not hit:
            target[offset + cat.size - 1] = 1.0  # null bin is last
        offset += cat.size
    return target


def decode_target(target: np.ndarray, dictionary: ConditionDictionary) -> dict[str, set[str]]:
    """Set bits back to per-category label sets (null included)."""
    if target.shape != (dictionary.total_bins,):
        raise ValidationError(
            f"target length {target.shape} != {dictionary.total_bins} dictionary bins"
        )
    out: dict[str, set[str]] = {}
    offset = 0
    for cat in dictionary.categories:
        out[cat.name] = {
            cat.bins[k].label for k in range(cat.size) if target[offset + k] > 0.5
        }
        offset += cat.size
    return out


# ---------------------------------------------------------------------------
# Record filtering


@dataclass(frozen=True)
class FilterRule:
    name: str
    keep: Callable[[RawRecord], bool]


def require_yield() -> FilterRule:
    return FilterRule("require-yield", lambda r: r.yield_percent is not None)


def require_structures() -> FilterRule:
    return FilterRule(
        "require-structures",
        lambda r: bool(r.product) and bool(r.reactants) and all(r.reactants),
    )


def max_reactants(limit: int) -> FilterRule:
    return FilterRule(f"max-reactants({limit})", lambda r: len(r.reactants) <= limit)


def _solvent_labels(record: RawRecord, roles, aliases) -> list[str]:
    out = []
    for s in record.conditions:
        canon = aliases.get(s, s)
        if "solvent" in roles.get(canon, ()):
            out.append(canon)
    return out


def require_solvent(roles: Mapping[str, Sequence[str]], aliases=None) -> FilterRule:
    aliases = dict(aliases or {})
    return FilterRule(
        "require-solvent", lambda r: bool(_solvent_labels(r, roles, aliases))
    )


def max_solvents(limit: int, roles: Mapping[str, Sequence[str]], aliases=None) -> FilterRule:
    aliases = dict(aliases or {})
    return FilterRule(
        f"max-solvents({limit})",
        lambda r: len(_solvent_labels(r, roles, aliases)) <= limit,
    )


def max_reagents(limit: int, roles: Mapping[str, Sequence[str]], aliases=None) -> FilterRule:
    """Reagents = condition entries not classified as solvents."""
    aliases = dict(aliases or {})

    def keep(record: RawRecord) -> bool:
        solvents = set(_solvent_labels(record, roles, aliases))
        reagents = [
            aliases.get(s, s)
            for s in record.conditions
            if aliases.get(s, s) not in solvents
        ]
        return len(reagents) <= limit

    return FilterRule(f"max-reagents({limit})", keep)


def filter_records(
    records: Sequence[RawRecord], rules: Sequence[FilterRule]
) -> tuple[list[RawRecord], dict[str, int]]:
    """Drop records failing any rule; removals attributed to the first
    failing rule in order."""
    removed = {rule.name: 0 for rule in rules}
    kept: list[RawRecord] = []
    for record in records:
        for rule in rules:
            if not rule.keep(record):
                removed[rule.name] += 1
                break
        else:
            kept.append(record)
    return kept, removed


# ---------------------------------------------------------------------------
# File ingestion


def load_records_csv(path: str | Path) -> list[RawRecord]:
    """Read reaction records from the documented CSV schema.

    Columns: reactant_smiles (';'-separated), product_smiles, conditions
    (';'-separated), yield, temperature. Schema violations name the line.
    """
    records: list[RawRecord] = []
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise ValidationError(f"{path}: missing CSV columns {missing} (line 1)")
        for row in reader:
            line = reader.line_num
            raw_yield = (row["yield"] or "").strip()
            try:
                yield_percent = float(raw_yield) if raw_yield else None
            except ValueError:
                raise ValidationError(
                    f"{path}: bad yield value {raw_yield!r} (line {line})"
                ) from None
            try:
                records.append(
                    RawRecord(
                        reactants=[s for s in (row["reactant_smiles"] or "").split(";") if s],
                        product=(row["product_smiles"] or "").strip(),
                        conditions=[s for s in (row["conditions"] or "").split(";") if s],
                        yield_percent=yield_percent,
                        temperature=(row["temperature"] or "").strip() or None,
                    )
                )
            except ValidationError as exc:
                raise ValidationError(f"{path}: {exc} (line {line})") from None
    return records


def save_records_csv(records: Sequence[RawRecord], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    ";".join(r.reactants),
                    r.product,
                    ";".join(r.conditions),
                    "" if r.yield_percent is None else f"{r.yield_percent:g}",
                    r.temperature or "",
                ]
            )


def _read_kv_lines(path: str | Path) -> Iterable[tuple[int, str, str]]:
    for line_num, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" not in line:
            raise ValidationError(f"{path}: expected TAB-separated pair (line {line_num})")
        key, value = line.split("\t", 1)
        yield line_num, key.strip(), value.strip()


def load_roles(path: str | Path) -> dict[str, list[str]]:
    """Role map file: ``label<TAB>category[,category...]`` per line."""
    roles: dict[str, list[str]] = {}
    for line_num, label, value in _read_kv_lines(path):
        cats = [c.strip() for c in value.split(",") if c.strip()]
        if not cats:
            raise ValidationError(f"{path}: no categories for {label!r} (line {line_num})")
        roles[label] = cats
    return roles


def load_aliases(path: str | Path) -> dict[str, str]:
    """Alias map file: ``variant<TAB>canonical`` per line."""
    aliases: dict[str, str] = {}
    for _, variant, canonical in _read_kv_lines(path):
        aliases[variant] = canonical
    return aliases
