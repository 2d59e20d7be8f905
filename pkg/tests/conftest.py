import pytest

from trustgate.world import World


@pytest.fixture()
def world():
    """A small world on the fast hash backend with two providers and two resources."""
    w = World(seed=3, backend="hash")
    a, b = w.add_sp("spA"), w.add_sp("spB")
    w.add_resource(a, "rA", b"resource A payload")
    w.add_resource(b, "rB", b"resource B payload")
    return w


@pytest.fixture()
def ed_world():
    w = World(seed=3, backend="ed25519")
    a = w.add_sp("spA")
    w.add_resource(a, "rA", b"resource A payload")
    return w


def pytest_terminal_summary(terminalreporter):
    import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
