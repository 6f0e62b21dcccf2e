import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lisa.abstraction import build_dtmc_from_agent  # noqa: E402
from lisa.prism import elaborate, parse_prism_subset  # noqa: E402
from lisa.scenario import asv_scenario, read_data  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"
MISSION = "P=? [ F a1=Na & b1=Nb ]"
ABORT = "P=? [ F s=3 ]"


@pytest.fixture(scope="session")
def appendix_text():
    return read_data("appendix.pm")


@pytest.fixture(scope="session")
def appendix_ast(appendix_text):
    return parse_prism_subset(appendix_text)


@pytest.fixture(scope="session")
def appendix_model(appendix_ast):
    return elaborate(appendix_ast)


@pytest.fixture(scope="session")
def asv():
    return asv_scenario()


@pytest.fixture(scope="session")
def asv_model(asv):
    model, _ = build_dtmc_from_agent(asv.program, asv.env)
    return model
