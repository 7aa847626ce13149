import pytest

from singing_mis.network import Network
from singing_mis.protocol import UN

# lines collected by the acceptance suite, printed in the terminal summary
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance():
    def report(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])


def all_un(net):
    return {u: UN for u in net.agents}


@pytest.fixture
def path5():
    """u-v-x-y-z as 0-1-2-3-4."""
    return Network(range(5), [(0, 1), (1, 2), (2, 3), (3, 4)])


@pytest.fixture
def triangle():
    return Network(range(3), [(0, 1), (1, 2), (0, 2)])


@pytest.fixture
def k2():
    return Network(range(2), [(0, 1)])
