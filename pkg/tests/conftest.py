import os
import sys

import pytest

from asmsearch.ir import parse_ir
from asmsearch.machine import parse_asm

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "fixtures")


def fixture_path(name):
    return os.path.join(FIXTURES, name)


def read_fixture(name):
    with open(fixture_path(name)) as f:
        return f.read()


@pytest.fixture
def example():
    return parse_ir(read_fixture("example.ir"))


@pytest.fixture
def mul2x2():
    return parse_ir(read_fixture("mul2x2.ir"))


@pytest.fixture
def mixed():
    return parse_ir(read_fixture("mixed.ir"))


@pytest.fixture
def first_asm():
    return parse_asm(read_fixture("first.s"))


@pytest.fixture
def improved_asm():
    return parse_asm(read_fixture("improved.s"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES):
            terminalreporter.write_line(line)
