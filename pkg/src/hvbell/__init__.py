"""Local hidden-variable models that violate the CHSH inequality through complementarity."""

from .core import (
    A,
    A_PRIME,
    B,
    B_PRIME,
    CollectionMode,
    HiddenVariable,
    SettingLabel,
    Station,
    SwitchPolicy,
    TrialBatch,
    TrialRecord,
    new_trial_record,
)
from .rng import Seeds

__version__ = "0.1.0"

__all__ = [
    "A", "A_PRIME", "B", "B_PRIME", "CollectionMode", "HiddenVariable", "SettingLabel",
    "Station", "SwitchPolicy", "TrialBatch", "TrialRecord", "new_trial_record", "Seeds",
]
