from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from lostsim.gis import (
    LAND_COVER_IDS,
    RasterGrid,
    TerrainStack,
    WaterSurface,
    build_path_graph,
    load_path_network,
    load_terrain,
)
from lostsim.synthetic import NETWORK_FILE, bundled_fixture_dir

FIXTURES = Path(__file__).parent / "fixtures"
ISLAND = bundled_fixture_dir()


def flat_terrain(n_cols=40, n_rows=40, cell=5.0, origin=(0.0, 0.0), lc="Acid grassland", dem=None,
                 water=None, catchment=None, outflow=0.0, land_cover=None):
    """Small aligned terrain stack with overridable layers."""
    shape = (n_rows, n_cols)

    def grid(v):
        return RasterGrid(n_cols, n_rows, cell, origin, -9999.0, np.broadcast_to(v, shape).copy())

    return TerrainStack(
        grid(np.zeros(shape) if dem is None else dem),
        grid(LAND_COVER_IDS[lc] if land_cover is None else land_cover),
        grid(0.0 if catchment is None else catchment),
        grid(float(WaterSurface.NONE) if water is None else water),
        grid(outflow),
    )


@pytest.fixture
def make_terrain():
    return flat_terrain


@pytest.fixture(scope="session")
def island_terrain():
    return load_terrain(ISLAND)


@pytest.fixture(scope="session")
def island_graph():
    return load_path_network(ISLAND / NETWORK_FILE)


@pytest.fixture
def fig5_graph():
    return load_path_network(FIXTURES / "fig5_network.geojson")


@pytest.fixture
def straight_graph():
    def make(length=100.0, path_type="Path", origin=(0.0, 0.0), n=2):
        xs = np.linspace(0, length, n) + origin[0]
        return build_path_graph([(np.column_stack((xs, np.full(n, origin[1]))).tolist(), path_type)])
    return make
