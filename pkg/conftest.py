# -*- coding: utf-8 -*-
"""pytest 公共夹具"""

import json
import os

import pytest

PINNED_FILE = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'pinned_thresholds.json')


@pytest.fixture(scope='session')
def pinned():
    """固定在仓库中的阈值"""
    with open(PINNED_FILE, 'r', encoding='utf-8') as f:
        return json.load(f)
