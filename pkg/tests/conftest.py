import json
from pathlib import Path

import pytest

from singular_elliptic.integrand import make_params

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def params15():
    return make_params(1.5)


@pytest.fixture(scope="session")
def m_g_fixture():
    return json.loads((FIXTURES / "m_g.json").read_text())


@pytest.fixture(scope="session")
def audit_fixture():
    return json.loads((FIXTURES / "audit_constants.json").read_text())
