# Copyright (c) ckptbench contributors.
# SPDX-License-Identifier: Apache-2.0

import os
import tempfile

import pytest


@pytest.fixture
def scratch():
    """Temporary directory below $CKPTBENCH_TEST_DIR when set."""
    root = os.environ.get("CKPTBENCH_TEST_DIR")
    if root:
        os.makedirs(root, exist_ok=True)
    with tempfile.TemporaryDirectory(prefix="ckptbench-py-", dir=root) as d:
        yield d
