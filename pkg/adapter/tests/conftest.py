import pytest

from lm_adapter.model import pretrain


@pytest.fixture(scope="session")
def pretrained_dir(tmp_path_factory):
    """Locally pretrained base weights, built once per test session."""
    out = tmp_path_factory.mktemp("weights") / "base"
    pretrain(out, seed=0)
    return out
