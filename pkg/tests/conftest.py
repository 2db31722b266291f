import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from evplan.caseio import load_case


@pytest.fixture(scope="session")
def bundle():
    return load_case()


@pytest.fixture(scope="session")
def ieee33(bundle):
    """The bundled IEEE 33-bus grid and its loads."""
    return bundle.grid, bundle.loads


@pytest.fixture(scope="session")
def ieee33_branch_tuples(bundle):
    """Branch data as plain tuples for oracle consumption."""
    return [
        (br.from_bus, br.to_bus, complex(br.z_abc).real, complex(br.z_abc).imag)
        for br in bundle.grid.branches
    ]


@pytest.fixture(scope="session")
def ieee33_load_tuples(bundle):
    return {bus: (float(l.p_kw), float(l.q_kvar)) for bus, l in bundle.loads.items()}
