import os
from pathlib import Path

import pytest


@pytest.fixture(scope="session", autouse=True)
def _selector_cache():
    # Families are seeded and deterministic, so a repo-local cache is safe
    # to keep between runs and spares the suites repeated construction.
    if "BEEPNET_CACHE_DIR" not in os.environ:
        root = Path(__file__).resolve().parent.parent / ".selector-cache"
        root.mkdir(exist_ok=True)
        os.environ["BEEPNET_CACHE_DIR"] = str(root)
    yield
