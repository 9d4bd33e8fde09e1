import json

import pytest
from click.testing import CliRunner

from bpurf.cli import main


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the full CLI pipeline once on a small city."""
    root = tmp_path_factory.mktemp("cli")
    runner = CliRunner()

    def run(*args):
        result = runner.invoke(main, list(args), catch_exceptions=False)
        assert result.exit_code == 0, result.output
        return result

    run("synth", "--out", str(root / "city"), "--seed", "9",
        "--n-poi", "300", "--n-road", "80", "--n-junction", "40",
        "--trips", "1000")
    run("build-graph", "--schema", str(root / "city" / "schema.json"),
        "--out", str(root / "graph"))
    run("init-embed", "--graph", str(root / "graph"), "--dim", "8",
        "--out", str(root / "embed"), "--epochs", "3")
    cfg = {
        "model": {"dim": 8, "d_region": 16, "enc_layers": 1, "sub_layers": 1,
                  "k_aug": 2, "d_max": 10.0, "spatial_only_aggregation": False,
                  "channels": {"structure": True, "position": True, "neighbor": True,
                               "k_neighbor": 3, "structure_transform": "exp_neg_normalized",
                               "message_agg": "mean"}},
        "training": {"batch_size": 4, "steps": 6, "s_min": 0.15, "s_max": 0.35,
                     "m_min": 4, "lr": 0.003, "pool_size": 8, "seed": 2},
    }
    (root / "train.json").write_text(json.dumps(cfg))
    run("train", "--graph", str(root / "graph"), "--embed", str(root / "embed"),
        "--trips", str(root / "city" / "trips.csv"),
        "--config", str(root / "train.json"), "--out", str(root / "model"))
    return root, runner


def test_embed_two_polygons_order_preserved(pipeline):
    root, runner = pipeline
    boundaries = [
        {"type": "Polygon",
         "coordinates": [[[10, 10], [60, 10], [60, 60], [10, 60], [10, 10]]]},
        {"type": "Polygon",
         "coordinates": [[[30, 30], [80, 30], [80, 80], [30, 80], [30, 30]]]},
    ]
    (root / "b.geojson").write_text(json.dumps(boundaries))
    result = runner.invoke(main, ["embed", "--model", str(root / "model"),
                                  "--boundaries", str(root / "b.geojson"),
                                  "--out", str(root / "emb.json")])
    assert result.exit_code == 0, result.output
    doc = json.loads((root / "emb.json").read_text())
    assert len(doc["embeddings"]) == 2
    assert doc["errors"] == [None, None]
    assert doc["embeddings"][0] != doc["embeddings"][1]


def test_embed_partial_empty_region_exit_zero(pipeline):
    root, runner = pipeline
    boundaries = [
        {"type": "Polygon",
         "coordinates": [[[10, 10], [60, 10], [60, 60], [10, 60], [10, 10]]]},
        {"type": "Polygon",
         "coordinates": [[[900, 900], [910, 900], [910, 910], [900, 910], [900, 900]]]},
    ]
    (root / "b2.geojson").write_text(json.dumps(boundaries))
    result = runner.invoke(main, ["embed", "--model", str(root / "model"),
                                  "--boundaries", str(root / "b2.geojson"),
                                  "--out", str(root / "emb2.json")])
    assert result.exit_code == 0
    doc = json.loads((root / "emb2.json").read_text())
    assert doc["errors"] == [None, "empty_region"]
    assert doc["embeddings"][1] is None


def test_eval_writes_report(pipeline):
    root, runner = pipeline
    result = runner.invoke(main, [
        "eval", "--model", str(root / "model"),
        "--task", str(root / "city" / "tasks" / "intensity.csv"),
        "--batches", "2", "--batch-size", "10",
        "--out", str(root / "report.json")])
    assert result.exit_code == 0, result.output
    doc = json.loads((root / "report.json").read_text())
    assert len(doc["per_batch"]) == 2
    assert "r2" in doc["mean"]


def test_bench_writes_report(pipeline):
    root, runner = pipeline
    result = runner.invoke(main, ["bench", "--graph", str(root / "graph"),
                                  "--queries", "20", "--out", str(root / "bench.json")])
    assert result.exit_code == 0, result.output
    doc = json.loads((root / "bench.json").read_text())
    assert doc["speedup"] > 0
    assert "kernels" in doc and "pure" in doc["kernels"]


def test_usage_error_exit_2():
    runner = CliRunner()
    result = runner.invoke(main, ["synth"])  # missing required --out
    assert result.exit_code == 2


def test_data_error_exit_3(tmp_path):
    runner = CliRunner()
    (tmp_path / "bad.json").write_text("{broken")
    result = runner.invoke(main, ["build-graph", "--schema", str(tmp_path / "bad.json"),
                                  "--out", str(tmp_path / "g")])
    assert result.exit_code == 3
    err = json.loads(result.stderr.splitlines()[-1])
    assert err["error"] == "MalformedSchema"


def test_mini_mode_flag(pipeline):
    root, runner = pipeline
    result = runner.invoke(main, [
        "train", "--graph", str(root / "graph"), "--embed", str(root / "embed"),
        "--trips", str(root / "city" / "trips.csv"),
        "--config", str(root / "train.json"),
        "--out", str(root / "model_mini"), "--mini", "--n-batch", "3", "--steps", "6"])
    assert result.exit_code == 0, result.output
    log = (root / "model_mini" / "training_log.jsonl").read_text().splitlines()
    sigs = {json.loads(line)["batch"] for line in log}
    assert len(sigs) == 3
