import shutil

import pytest

from tagrec.cli import main
from tagrec.synthetic import write_toy_citeulike

TOY_CONFIG = """\
[paths]
out = "out"

[corpus]
vocab_size = 200
s_max = 6
w_max = 12
n_tags = 10

[split]
p = 10
seed = 0

[encoder]
embed_dim = 12
hidden = 6
attn_dim = 12
learning_rate = 0.005
batch_size = 32
epochs = 2
seed = 0

[mf]
d = 16
epochs = 5
seed = 0

[eval]
ks = [5, 10, 15, 20]
"""


def write_toy_workspace(directory):
    """Toy citeulike-shaped files plus a small pipeline config; returns the config path."""
    write_toy_citeulike(directory)
    config = directory / "pipeline.toml"
    config.write_text(TOY_CONFIG)
    return config


def run(config, *argv):
    return main([argv[0], "--config", str(config), *argv[1:]])


@pytest.fixture(scope="session")
def prepared_workspace(tmp_path_factory):
    """Toy workspace after ingest, features, train-encoder and embed."""
    root = tmp_path_factory.mktemp("prepared")
    config = write_toy_workspace(root)
    for stage in ("ingest", "features", "train-encoder", "embed"):
        assert run(config, stage) == 0, stage
    return root


@pytest.fixture
def workspace(prepared_workspace, tmp_path):
    """A private copy of the prepared workspace."""
    root = tmp_path / "ws"
    shutil.copytree(prepared_workspace, root)
    return root


# -- acceptance reporting -------------------------------------------------------

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(number, title, status, detail)`` records one printed verdict line.

    ``status`` is ``True`` (PASS), ``False`` (FAIL) or a string such as
    ``"NOT VERIFIED"``.
    """

    def report(number, title, status, detail=""):
        label = {True: "PASS", False: "FAIL"}.get(status, status)
        line = f"[{label}] criterion {number}: {title}" + (f" -- {detail}" if detail else "")
        _ACCEPTANCE[number] = line
        print(line)
        return status

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
