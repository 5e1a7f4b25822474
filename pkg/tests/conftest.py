from pathlib import Path

import pytest

from cfcomm import netlist
from cfcomm.tuner import protocol_dark, tune

DATA = Path(netlist.__file__).parent / "data"
FIXTURES = Path(__file__).parent / "data"


def tuned(net):
    return tune(net, protocol_dark(net))[0]


@pytest.fixture(scope="session")
def fig1():
    return tuned(netlist.load(DATA / "fig1.net"))


@pytest.fixture(scope="session")
def fig4():
    return tuned(netlist.load(DATA / "fig4.net"))


@pytest.fixture(scope="session")
def chain3():
    return tuned(netlist.chain(netlist.load(DATA / "fig1.net"), 3))


@pytest.fixture(scope="session")
def mzi():
    return netlist.load(DATA / "mzi.net")


@pytest.fixture(scope="session")
def ifm():
    return netlist.load(DATA / "ifm.net")
