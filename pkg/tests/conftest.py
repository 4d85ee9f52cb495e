from __future__ import annotations

import pytest

from src.topology import Topology, build_topology, fig6_spec, line_spec


@pytest.fixture
def fig6() -> Topology:
    return build_topology(fig6_spec(vni=1001))


@pytest.fixture
def line() -> Topology:
    return build_topology(line_spec())
