import os

import pytest


def pytest_collection_modifyitems(config, items):
    # long acceptance runs only when asked for
    if os.environ.get("MIXFLOW_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="set MIXFLOW_SLOW=1 to run slow tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
