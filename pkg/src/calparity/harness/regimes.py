"""Group-data availability regimes and the group-access audit."""
from __future__ import annotations

from enum import IntEnum

import numpy as np


class AvailabilityRegime(IntEnum):
    NONE = 0
    VAL = 1
    TRAIN_VAL = 2
    TRAIN_VAL_INF = 3

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def parse(cls, value) -> "AvailabilityRegime":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, np.integer)):
            return cls(int(value))
        key = str(value).strip().lower().replace(" ", "").replace("&", "+").replace("_", "+")
        for regime, names in _ALIASES.items():
            if key in names:
                return regime
        raise ValueError(f"unknown availability regime {value!r}")


_LABELS = {
    AvailabilityRegime.NONE: "None",
    AvailabilityRegime.VAL: "Val",
    AvailabilityRegime.TRAIN_VAL: "Train+Val",
    AvailabilityRegime.TRAIN_VAL_INF: "Train+Val+Inf",
}
_ALIASES = {
    AvailabilityRegime.NONE: {"none", "nowhere"},
    AvailabilityRegime.VAL: {"val", "validation"},
    AvailabilityRegime.TRAIN_VAL: {"train+val", "trainval", "train+validation"},
    AvailabilityRegime.TRAIN_VAL_INF: {"train+val+inf", "trainvalinf", "train+val+inference", "all"},
}

STAGES = ("train", "val", "inference")
EVALUATION = "test_eval"

PERMITTED = {
    AvailabilityRegime.NONE: frozenset(),
    AvailabilityRegime.VAL: frozenset({"val"}),
    AvailabilityRegime.TRAIN_VAL: frozenset({"train", "val"}),
    AvailabilityRegime.TRAIN_VAL_INF: frozenset({"train", "val", "inference"}),
}


def minimal_regime(stages) -> AvailabilityRegime:
    """Least permissive regime whose permitted stages cover ``stages``."""
    stages = set(stages) - {EVALUATION}
    unknown = stages - set(STAGES)
    if unknown:
        raise ValueError(f"unknown pipeline stages {sorted(unknown)}")
    for regime in AvailabilityRegime:
        if stages <= PERMITTED[regime]:
            return regime
    raise AssertionError("unreachable")


class RegimeViolation(RuntimeError):
    pass


class GroupAccess:
    """Hands out group ids per pipeline stage and refuses out-of-regime reads.

    Reads at the test-evaluation stage are always allowed, since worst-group
    metrics need groups by definition. Every read is appended to ``log``.
    """

    def __init__(self, regime: AvailabilityRegime, groups_by_stage: dict, owner: str = ""):
        self.regime = AvailabilityRegime.parse(regime)
        self._groups = groups_by_stage
        self.owner = owner
        self.log: list[str] = []

    def groups(self, stage: str) -> np.ndarray:
        if stage != EVALUATION and stage not in PERMITTED[self.regime]:
            raise RegimeViolation(
                f"{self.owner or 'method'} read group data at stage {stage!r}, "
                f"which regime {self.regime.label} does not permit")
        self.log.append(stage)
        return self._groups[stage]

    @property
    def stages_read(self) -> set:
        return set(self.log)
