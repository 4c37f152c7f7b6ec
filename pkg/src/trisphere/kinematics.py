"""Swimmer geometry, discrete agent states, and arm-length trajectories.

The swimmer is three collinear spheres of radius ``R`` joined by two
extensible arms whose lengths switch between ``W`` (extended) and
``W - w`` (contracted) at constant speed ``S``.  The agent abstraction is
the four-state encoding of the (arm 1, arm 2) contracted/extended pair
together with the two "move one arm" actions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: Discrete agent states.  1=(c,c), 2=(c,e), 3=(e,c), 4=(e,e),
#: where c = contracted arm (length W-w) and e = extended arm (length W).
STATES = (1, 2, 3, 4)

#: Actions: move arm 1 or move arm 2.
ACTIONS = (1, 2)

#: Right-swimming gait cycle under the deterministic gait policy.
GAIT_CYCLE = (1, 3, 4, 2)


@dataclass(frozen=True)
class SwimmerGeometry:
    """Geometric and fluid scales of the three-sphere swimmer.

    R   sphere radius
    W   maximum arm length
    w   arm stroke (extension minus contraction)
    S   arm speed (uniform during every stroke)
    mu  dynamic viscosity of the ambient fluid
    """

    R: float
    W: float
    w: float
    S: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.R, self.W, self.w, self.S, self.mu)):
            raise ValueError("geometry parameters must be finite")
        if self.R <= 0 or self.S <= 0 or self.mu <= 0:
            raise ValueError("R, S and mu must be positive")
        if not (0 < self.w < self.W):
            raise ValueError("need 0 < w < W")
        if self.W - self.w <= 2 * self.R:
            raise ValueError("contracted arm must keep sphere gap > 0 (W - w > 2R)")

    @property
    def L_min(self) -> float:
        return self.W - self.w

    @property
    def L_max(self) -> float:
        return self.W

    @property
    def stroke_time(self) -> float:
        """Duration of one action (one full arm stroke), w/S."""
        return self.w / self.S

    @property
    def gait_period(self) -> float:
        """Duration of the four-stroke swimming gait, 4 w/S."""
        return 4.0 * self.w / self.S


@dataclass(frozen=True)
class Posture:
    """Continuous swimmer configuration: center of mass and arm lengths."""

    X: float
    L1: float
    L2: float

    def positions(self) -> tuple[float, float, float]:
        return sphere_positions(self.X, self.L1, self.L2)


def sphere_positions(X: float, L1: float, L2: float) -> tuple[float, float, float]:
    """Sphere centers for center of mass X and arm lengths (L1, L2).

    X1 = X - 2 L1/3 - L2/3, X2 = X + L1/3 - L2/3, X3 = X + L1/3 + 2 L2/3,
    so that (X1 + X2 + X3)/3 == X, X2 - X1 == L1 and X3 - X2 == L2.
    """
    if not (math.isfinite(X) and math.isfinite(L1) and math.isfinite(L2)):
        raise ValueError("non-finite posture")
    X1 = X - 2.0 * L1 / 3.0 - L2 / 3.0
    X2 = X + L1 / 3.0 - L2 / 3.0
    X3 = X + L1 / 3.0 + 2.0 * L2 / 3.0
    return X1, X2, X3


def _check_state(s: int) -> None:
    if s not in STATES:
        raise ValueError(f"invalid state {s!r}")


def _check_action(a: int) -> None:
    if a not in ACTIONS:
        raise ValueError(f"invalid action {a!r}")


def state_to_arms(s: int) -> tuple[bool, bool]:
    """Map state label to (arm1_extended, arm2_extended)."""
    _check_state(s)
    b = s - 1
    return bool(b & 2), bool(b & 1)


def arms_to_state(arm1_extended: bool, arm2_extended: bool) -> int:
    """Inverse of :func:`state_to_arms`."""
    return 1 + 2 * int(arm1_extended) + int(arm2_extended)


def transition(s: int, a: int) -> int:
    """Deterministic next state: action a toggles arm a."""
    _check_action(a)
    arm1, arm2 = state_to_arms(s)
    if a == 1:
        arm1 = not arm1
    else:
        arm2 = not arm2
    return arms_to_state(arm1, arm2)


def gait_action(s: int) -> int:
    """Right-swimming gait policy: action 1 from states 1 and 4, else 2."""
    _check_state(s)
    return 1 if s in (1, 4) else 2


def arm_lengths(s: int, geometry: SwimmerGeometry) -> tuple[float, float]:
    """Arm lengths (L1, L2) of a discrete state."""
    arm1, arm2 = state_to_arms(s)
    return (
        geometry.L_max if arm1 else geometry.L_min,
        geometry.L_max if arm2 else geometry.L_min,
    )


def posture_of_state(s: int, X: float, geometry: SwimmerGeometry) -> Posture:
    L1, L2 = arm_lengths(s, geometry)
    return Posture(X, L1, L2)


@dataclass(frozen=True)
class ArmTrajectory:
    """Piecewise-linear arm motion during one action.

    ``times``, ``L1``, ``L2`` hold the n_substeps+1 node values; the moving
    arm ramps linearly at rate +-S while the other arm is frozen.
    """

    times: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    rate1: float
    rate2: float

    def __len__(self) -> int:
        return len(self.times) - 1


def arm_trajectory(
    s: int, a: int, geometry: SwimmerGeometry, n_substeps: int
) -> ArmTrajectory:
    """Arm-length nodes and rates for action ``a`` taken from state ``s``.

    The moving arm travels the full stroke ``w`` at speed ``S`` over the
    action interval w/S; the idle arm's rate is identically zero.
    """
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    L1_0, L2_0 = arm_lengths(s, geometry)
    s_next = transition(s, a)
    L1_1, L2_1 = arm_lengths(s_next, geometry)
    duration = geometry.stroke_time
    times = np.linspace(0.0, duration, n_substeps + 1)
    frac = times / duration
    L1 = L1_0 + (L1_1 - L1_0) * frac
    L2 = L2_0 + (L2_1 - L2_0) * frac
    rate1 = (L1_1 - L1_0) / duration
    rate2 = (L2_1 - L2_0) / duration
    return ArmTrajectory(times=times, L1=L1, L2=L2, rate1=rate1, rate2=rate2)
