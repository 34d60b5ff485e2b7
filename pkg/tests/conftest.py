import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hvbell.chessboard import canonical_pattern  # noqa: E402
from hvbell.rng import Seeds  # noqa: E402


@pytest.fixture
def pattern():
    return canonical_pattern()


@pytest.fixture
def seeds():
    return Seeds.from_master(20240611)
