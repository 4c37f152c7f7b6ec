"""Three-sphere microswimmer toolkit.

Subpackages cover the swimmer kinematics, the Oseen-level Stokes mobility
solver, the axisymmetric penalized advection-diffusion transport solver,
tabular Q-learning over recorded experiences, the fast affine-reward
surrogate environment, and the experiment CLI.
"""

__version__ = "0.1.0"

from .kinematics import (  # noqa: F401
    ACTIONS,
    GAIT_CYCLE,
    STATES,
    Posture,
    SwimmerGeometry,
    arm_trajectory,
    gait_action,
    sphere_positions,
    transition,
)
