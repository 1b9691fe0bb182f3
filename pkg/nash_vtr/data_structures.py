""" Nash-VTR shared data structures.

This module contains common enumerations and aliases used across the other `nash-vtr` modules.
"""

from enum import Enum, auto
from typing import Tuple

import numpy as np

# Numerical tolerances shared by the instance checks and the solvers.
KERNEL_TOL: float = 1e-9
NEGATIVE_PROB_TOL: float = 1e-12
DIST_TOL: float = 1e-9

FloatArray = np.ndarray
ActionPair = Tuple[int, int]


class Side(Enum):
    """Player side of a regression system.

    The max-player side carries the optimistic (overline) quantities, the min-player side the
    pessimistic (underline) ones.
    """

    MAX = auto()
    MIN = auto()

    @property
    def index(self) -> int:
        """`int`: Position of the side in stacked (2, ...) arrays."""
        return 0 if self == Side.MAX else 1


class StateOwner(Enum):
    """Player that acts at a state of a turn-based game."""

    MAX = auto()
    MIN = auto()


class InstanceKind(Enum):
    """Provenance tag of a game instance, written into instance documents."""

    TABULAR = "tabular"
    LINEAR = "linear"
    DUMMY_MDP = "dummy-mdp"
    TURN_BASED_EMBEDDING = "turn-based-embedding"
    TURN_BASED = "turn-based"
    MDP = "mdp"


class AlgorithmKind(Enum):
    """Learning loop variant."""

    SIMULTANEOUS = "simultaneous"
    TURN_BASED = "turn-based"


class VarianceFloor(Enum):
    """Lower clip of the variance surrogate.

    `MAIN_TEXT` uses H²/d, `APPENDIX` uses H²/(4d).
    """

    MAIN_TEXT = "main-text"
    APPENDIX = "appendix"

    def floor(self, horizon: int, dim: int) -> float:
        """Return the squared floor value for the given horizon and feature dimension.

        Raises:
            ValueError: If an unsupported floor kind is provided.
        """
        if self == VarianceFloor.MAIN_TEXT:
            return horizon**2 / dim
        elif self == VarianceFloor.APPENDIX:
            return horizon**2 / (4.0 * dim)
        else:
            raise ValueError(f"Unsupported variance floor {self}")


class BetaConstants(Enum):
    """Which set of logarithmic constants the confidence radii use."""

    LEMMA = "lemma"
    PROOF = "proof"


class LPStatus(Enum):
    """Termination status of the dense simplex solver."""

    OPTIMAL = auto()
    INFEASIBLE = auto()
    UNBOUNDED = auto()
