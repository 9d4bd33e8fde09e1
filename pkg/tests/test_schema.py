import json

import pytest

import bpurf.schema as sc
from bpurf.errors import (
    EmptyDatasetWarning,
    MalformedSchema,
    MissingColumn,
    MissingFile,
    SpatialColumnsMissing,
    UnknownTypeReference,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def minimal_schema(tmp_path, relations=None):
    doc = {
        "entity_types": [
            {"name": "poi", "spatial": True, "file": "poi.csv",
             "id_column": "id", "x_column": "x", "y_column": "y"},
            {"name": "poi_category", "spatial": False, "file": "cat.csv", "id_column": "id"},
        ],
        "relations": relations if relations is not None else [
            {"src_type": "poi", "dst_type": "poi_category", "file": "rel.csv",
             "src_column": "src", "dst_column": "dst"},
        ],
    }
    return write(tmp_path / "schema.json", json.dumps(doc))


def test_minimal_schema_loads(tmp_path):
    schema = sc.load_schema(minimal_schema(tmp_path))
    assert len(schema.entity_types) == 2
    assert len(schema.relations) == 1
    assert schema.entity_type("poi").spatial


def test_unknown_type_reference(tmp_path):
    rel = [{"src_type": "road", "dst_type": "poi_category", "file": "rel.csv",
            "src_column": "src", "dst_column": "dst"}]
    with pytest.raises(UnknownTypeReference):
        sc.load_schema(minimal_schema(tmp_path, relations=rel))


def test_city_style_schema(city_dir):
    # poi/road/junction spatial plus two attribute types; three relations
    schema = sc.load_schema(city_dir / "schema.json")
    assert len(schema.entity_types) == 5
    assert len(schema.relations) == 3
    assert [t.name for t in schema.entity_types if t.spatial] == ["poi", "road", "junction"]


def test_spatial_columns_required(tmp_path):
    doc = {"entity_types": [{"name": "poi", "spatial": True, "file": "poi.csv",
                             "id_column": "id"}], "relations": []}
    with pytest.raises(SpatialColumnsMissing):
        sc.load_schema(write(tmp_path / "schema.json", json.dumps(doc)))


def test_missing_and_malformed(tmp_path):
    with pytest.raises(MissingFile):
        sc.load_schema(tmp_path / "nope.json")
    with pytest.raises(MalformedSchema):
        sc.load_schema(write(tmp_path / "bad.json", "{not json"))
    with pytest.raises(MalformedSchema):
        sc.load_schema(write(tmp_path / "nofield.json", json.dumps({"entity_types": [{}]})))


def test_duplicate_type_names(tmp_path):
    doc = {"entity_types": [
        {"name": "poi", "spatial": False, "file": "a.csv", "id_column": "id"},
        {"name": "poi", "spatial": False, "file": "b.csv", "id_column": "id"},
    ], "relations": []}
    with pytest.raises(MalformedSchema):
        sc.load_schema(write(tmp_path / "schema.json", json.dumps(doc)))


def test_schema_round_trip(city_dir, tmp_path):
    schema = sc.load_schema(city_dir / "schema.json")
    sc.write_schema(schema, tmp_path / "copy.json")
    again = sc.load_schema(tmp_path / "copy.json")
    assert [vars(t) for t in again.entity_types] == [vars(t) for t in schema.entity_types]
    assert [vars(r) for r in again.relations] == [vars(r) for r in schema.relations]


def relation_spec(tmp_path, rows):
    write(tmp_path / "rel.csv", "src,dst\n" + "".join(f"{a},{b}\n" for a, b in rows))
    return sc.RelationSpec("poi", "poi_category", "rel.csv", "src", "dst")


def test_relation_dedup_preserves_order(tmp_path):
    spec = relation_spec(tmp_path, [("p1", "c1"), ("p2", "c1"), ("p1", "c1")])
    ds = sc.load_relation_dataset(spec, tmp_path)
    assert ds.pairs == [("p1", "c1"), ("p2", "c1")]


def test_relation_empty_warns(tmp_path):
    spec = relation_spec(tmp_path, [])
    with pytest.warns(EmptyDatasetWarning):
        ds = sc.load_relation_dataset(spec, tmp_path)
    assert ds.pairs == []


def test_relation_matches_reference_reader(tmp_path, rng):
    rows = [(f"p{rng.integers(0, 30)}", f"c{rng.integers(0, 5)}") for _ in range(10)]
    spec = relation_spec(tmp_path, rows)
    ds = sc.load_relation_dataset(spec, tmp_path)
    # independent line-by-line reference with manual dedup
    expected = []
    for line in (tmp_path / "rel.csv").read_text().splitlines()[1:]:
        pair = tuple(line.split(","))
        if pair not in expected:
            expected.append(pair)
    assert ds.pairs == expected


def test_relation_missing_column(tmp_path):
    write(tmp_path / "rel.csv", "a,b\nx,y\n")
    spec = sc.RelationSpec("poi", "poi_category", "rel.csv", "src", "dst")
    with pytest.raises(MissingColumn):
        sc.load_relation_dataset(spec, tmp_path)


def test_dedup_idempotent(tmp_path):
    spec = relation_spec(tmp_path, [("p1", "c1"), ("p1", "c2"), ("p1", "c1")])
    a = sc.load_relation_dataset(spec, tmp_path)
    b = sc.load_relation_dataset(spec, tmp_path)
    assert a.pairs == b.pairs


def test_validate_consistent(city):
    report = sc.validate(city.schema, city.relations, city.entities)
    assert report.ok()
    assert report.issues == []


def test_validate_dangling_reference(tmp_path):
    schema = sc.load_schema(minimal_schema(tmp_path))
    write(tmp_path / "poi.csv", "id,x,y\np1,0.0,0.0\n")
    write(tmp_path / "cat.csv", "id\nc1\n")
    write(tmp_path / "rel.csv", "src,dst\np1,c1\npX,c1\n")
    report = sc.validate(schema, [sc.load_relation_dataset(schema.relations[0], tmp_path)])
    assert len(report.dangling) == 1
    assert report.dangling[0][0] == "poi"
    assert report.dangling[0][1] == "pX"


def test_validate_counts_match_generator(city_dir, city):
    truth = json.loads((city_dir / "truth.json").read_text())
    report = sc.validate(city.schema, city.relations, city.entities)
    assert report.entity_file_counts == truth["entity_counts"]
    assert report.relation_pair_counts == truth["relation_pair_counts"]


def test_pair_types_match_spec(city):
    for ds in city.relations:
        src_ids = set(city.entities[ds.spec.src_type].ids)
        dst_ids = set(city.entities[ds.spec.dst_type].ids)
        for a, b in ds.pairs[:50]:
            assert a in src_ids and b in dst_ids
