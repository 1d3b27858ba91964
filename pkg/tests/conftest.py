import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from koopguard.config import load_config  # noqa: E402
from koopguard.scenario import generate_gpr_data, train_gpr_bank, write_gpr_data  # noqa: E402

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(scope="session")
def dos_cfg():
    return load_config(CONFIGS / "dos.cfg")


@pytest.fixture(scope="session")
def fdi_cfg():
    return load_config(CONFIGS / "fdi_aging.cfg")


@pytest.fixture(scope="session")
def gpr_models_dir(tmp_path_factory, dos_cfg):
    """GP bank trained on the fresh battery, shared by every GPR test."""
    root = tmp_path_factory.mktemp("gpr")
    write_gpr_data(generate_gpr_data(dos_cfg), root / "data")
    from koopguard import gpr as gp

    gp.save_bank(train_gpr_bank(root / "data"), root / "models")
    return root / "models"


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(cid: str, ok: bool, detail: str) -> bool:
    line = f"[{cid}] {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
