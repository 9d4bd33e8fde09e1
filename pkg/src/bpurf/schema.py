"""Data-schema declaration and entity/relation dataset loading.

A city is described by one ``schema.json`` naming entity types (spatial types
carry coordinate columns, attribute types are "virtual" and locationless) and
the relation files connecting them. All tabular inputs are header-row CSV
with opaque string ids; paths in the schema resolve relative to the schema
file.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyDatasetWarning,
    MalformedSchema,
    MissingColumn,
    MissingFile,
    SpatialColumnsMissing,
    UnknownTypeReference,
)


@dataclass
class EntityTypeSpec:
    name: str
    spatial: bool
    file: str
    id_column: str
    x_column: str | None = None
    y_column: str | None = None


@dataclass
class RelationSpec:
    src_type: str
    dst_type: str
    file: str
    src_column: str
    dst_column: str

    @property
    def name(self) -> str:
        return f"{self.src_type}__{self.dst_type}"


@dataclass
class DataSchema:
    entity_types: list[EntityTypeSpec]
    relations: list[RelationSpec]
    base_dir: Path = field(default_factory=Path)

    def type_names(self):
        return [t.name for t in self.entity_types]

    def entity_type(self, name) -> EntityTypeSpec:
        for t in self.entity_types:
            if t.name == name:
                return t
        raise KeyError(name)

    def resolve(self, file) -> Path:
        p = Path(file)
        return p if p.is_absolute() else self.base_dir / p


@dataclass
class RelationDataset:
    spec: RelationSpec
    pairs: list[tuple[str, str]]


@dataclass
class EntityTable:
    spec: EntityTypeSpec
    ids: list[str]
    xs: np.ndarray | None = None
    ys: np.ndarray | None = None

    def coord_map(self) -> dict[str, tuple[float, float]]:
        """External id -> (x, y); first occurrence wins on duplicate ids."""
        out = {}
        for i, eid in enumerate(self.ids):
            if eid not in out:
                out[eid] = (float(self.xs[i]), float(self.ys[i]))
        return out


def _require(doc, key, ctx):
    if key not in doc:
        raise MalformedSchema(f"{ctx}: missing required field {key!r}", field=key)
    return doc[key]


def load_schema(path) -> DataSchema:
    """Parse and cross-validate a schema.json document."""
    path = Path(path)
    if not path.exists():
        raise MissingFile(f"schema file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise MalformedSchema(f"schema is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise MalformedSchema("schema root must be a JSON object")

    types = []
    seen = set()
    for i, td in enumerate(_require(doc, "entity_types", "schema")):
        ctx = f"entity_types[{i}]"
        name = _require(td, "name", ctx)
        if name in seen:
            raise MalformedSchema(f"{ctx}: duplicate type name {name!r}", field="name")
        seen.add(name)
        spatial = bool(_require(td, "spatial", ctx))
        spec = EntityTypeSpec(
            name=name,
            spatial=spatial,
            file=_require(td, "file", ctx),
            id_column=_require(td, "id_column", ctx),
            x_column=td.get("x_column"),
            y_column=td.get("y_column"),
        )
        if spatial and (not spec.x_column or not spec.y_column):
            raise SpatialColumnsMissing(
                f"{ctx}: spatial type {name!r} must declare x_column and y_column"
            )
        types.append(spec)

    relations = []
    for i, rd in enumerate(_require(doc, "relations", "schema")):
        ctx = f"relations[{i}]"
        spec = RelationSpec(
            src_type=_require(rd, "src_type", ctx),
            dst_type=_require(rd, "dst_type", ctx),
            file=_require(rd, "file", ctx),
            src_column=_require(rd, "src_column", ctx),
            dst_column=_require(rd, "dst_column", ctx),
        )
        for t in (spec.src_type, spec.dst_type):
            if t not in seen:
                raise UnknownTypeReference(f"{ctx}: relation references undeclared type {t!r}")
        relations.append(spec)

    return DataSchema(types, relations, base_dir=path.parent)


def write_schema(schema: DataSchema, path):
    """Serialize a schema back to JSON (round-trips through load_schema)."""
    doc = {
        "entity_types": [
            {
                "name": t.name,
                "spatial": t.spatial,
                "file": t.file,
                "id_column": t.id_column,
                **({"x_column": t.x_column, "y_column": t.y_column} if t.spatial else {}),
            }
            for t in schema.entity_types
        ],
        "relations": [
            {
                "src_type": r.src_type,
                "dst_type": r.dst_type,
                "file": r.file,
                "src_column": r.src_column,
                "dst_column": r.dst_column,
            }
            for r in schema.relations
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def _open_csv(path):
    if not Path(path).exists():
        raise MissingFile(f"data file not found: {path}")
    return open(path, newline="", encoding="utf-8")


def load_relation_dataset(spec: RelationSpec, base_dir=Path(".")) -> RelationDataset:
    """Load a relation CSV into a deduplicated, order-preserving pair list."""
    path = Path(spec.file)
    if not path.is_absolute():
        path = Path(base_dir) / path
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for col in (spec.src_column, spec.dst_column):
            if col not in header:
                raise MissingColumn(f"{path}: missing column {col!r} (has {header})")
        pairs = dict.fromkeys(
            (row[spec.src_column], row[spec.dst_column]) for row in reader
        )
    if not pairs:
        warnings.warn(
            f"relation file {path} has a header but no rows", EmptyDatasetWarning
        )
    return RelationDataset(spec, list(pairs))


def load_entity_table(spec: EntityTypeSpec, base_dir=Path(".")) -> EntityTable:
    """Load an entity CSV; spatial types also get coordinate arrays."""
    path = Path(spec.file)
    if not path.is_absolute():
        path = Path(base_dir) / path
    ids, xs, ys = [], [], []
    with _open_csv(path) as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = [spec.id_column]
        if spec.spatial:
            needed += [spec.x_column, spec.y_column]
        for col in needed:
            if col not in header:
                raise MissingColumn(f"{path}: missing column {col!r} (has {header})")
        for row in reader:
            ids.append(row[spec.id_column])
            if spec.spatial:
                xs.append(float(row[spec.x_column]))
                ys.append(float(row[spec.y_column]))
    if spec.spatial:
        return EntityTable(spec, ids, np.asarray(xs), np.asarray(ys))
    return EntityTable(spec, ids)


@dataclass
class CityData:
    """A schema with all of its entity tables and relation datasets loaded."""

    schema: DataSchema
    entities: dict[str, EntityTable]
    relations: list[RelationDataset]


def load_city(schema_path) -> CityData:
    schema = load_schema(schema_path)
    entities = {
        t.name: load_entity_table(t, schema.base_dir) for t in schema.entity_types
    }
    relations = [load_relation_dataset(r, schema.base_dir) for r in schema.relations]
    return CityData(schema, entities, relations)


@dataclass
class ValidationReport:
    entity_file_counts: dict[str, int]
    relation_pair_counts: dict[str, int]
    relation_distinct_ids: dict[str, int]
    dangling: list[tuple[str, str, str]]  # (type, external id, relation)

    @property
    def issues(self):
        return [f"dangling {t} id {e!r} referenced by {r}" for t, e, r in self.dangling]

    def ok(self):
        return not self.dangling


def validate(schema: DataSchema, datasets: list[RelationDataset], entities=None) -> ValidationReport:
    """Report-only consistency check across a loaded city.

    Dangling references are ids of *spatial* types that appear in a relation
    but have no coordinate row in their entity file.
    """
    if entities is None:
        entities = {
            t.name: load_entity_table(t, schema.base_dir) for t in schema.entity_types
        }
    file_counts = {name: len(tab.ids) for name, tab in entities.items()}
    pair_counts = {}
    distinct: dict[str, set] = {t.name: set() for t in schema.entity_types}
    dangling = []
    known = {
        name: set(tab.ids) for name, tab in entities.items() if tab.spec.spatial
    }
    for ds in datasets:
        pair_counts[ds.spec.name] = len(ds.pairs)
        for src, dst in ds.pairs:
            distinct[ds.spec.src_type].add(src)
            distinct[ds.spec.dst_type].add(dst)
    for ds in datasets:
        for side, tname in ((0, ds.spec.src_type), (1, ds.spec.dst_type)):
            if tname not in known:
                continue
            for pair in ds.pairs:
                if pair[side] not in known[tname]:
                    dangling.append((tname, pair[side], ds.spec.name))
    return ValidationReport(
        entity_file_counts=file_counts,
        relation_pair_counts=pair_counts,
        relation_distinct_ids={k: len(v) for k, v in distinct.items()},
        dangling=dangling,
    )
