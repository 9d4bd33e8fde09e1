import numpy as np
import pytest

from bpurf.graph import build_graph
from bpurf.schema import load_city
from bpurf.synth import SynthConfig, generate_city


@pytest.fixture(scope="session")
def city_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("city")
    cfg = SynthConfig(
        n_poi=400, n_road=120, n_junction=60, n_categories=8, n_clusters=3,
        bbox=(0.0, 0.0, 100.0, 100.0), trip_count=2000, gravity_decay=20.0,
        noise_sd=0.05, seed=7,
    )
    generate_city(cfg, out)
    return out


@pytest.fixture(scope="session")
def city(city_dir):
    return load_city(city_dir / "schema.json")


@pytest.fixture(scope="session")
def built(city):
    graph, gir, svindex = build_graph(city.schema, city.relations, city.entities)
    return graph, gir, svindex


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
