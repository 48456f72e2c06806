import os
import sys
from pathlib import Path

import pytest

# run from anywhere: make `src` importable
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: desk-scale training runs (set SPIKELAB_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("SPIKELAB_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="desk-scale run; set SPIKELAB_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
