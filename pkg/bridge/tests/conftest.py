import pytest

from floodadapt.cli import main as cli_main


@pytest.fixture(scope="session")
def city_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("city") / "small"
    rc = cli_main(["generate", "--out", str(out), "--zones", "3",
                   "--grid", "12x12", "--trips", "120", "--seed", "11"])
    assert rc == 0
    return out
