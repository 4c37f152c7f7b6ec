"""Force-free Stokes mobility of the three aligned spheres.

Hydrodynamic interactions are truncated at the Oseen (point-force) level:
each sphere's axial velocity is F_i/(6 pi mu R) plus Oseen contributions
F_j/(4 pi mu |X_i - X_j|) from the other spheres.  Together with the
force-free condition and the two imposed arm rates this closes a 4x4
linear system for the forces and the center-of-mass velocity.

The ambient velocity field used by the transport solver is reconstructed
from per-sphere singularities: the Stokeslet of the sphere's force plus
the source doublet that completes the exact isolated translating-sphere
solution (doublet strength F R^2 / (24 pi mu)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kinematics import (
    Posture,
    SwimmerGeometry,
    arm_trajectory,
    gait_action,
    posture_of_state,
    sphere_positions,
    transition,
)

#: Default number of hydrodynamic substeps per action.
DEFAULT_SUBSTEPS = 200


@dataclass(frozen=True)
class MobilitySolution:
    """Forces and velocities of one mobility solve."""

    F: tuple[float, float, float]
    V: tuple[float, float, float]
    Vcm: float

    @property
    def force_residual(self) -> float:
        return abs(sum(self.F))


def solve_mobility(
    positions: tuple[float, float, float],
    arm_rates: tuple[float, float],
    geometry: SwimmerGeometry,
) -> MobilitySolution:
    """Solve the force-free mobility problem at one instant.

    positions  sphere centers (X1, X2, X3), strictly increasing
    arm_rates  imposed relative velocities (dL1/dt, dL2/dt)

    Unknowns are (F1, F2, F3, Vcm); the equations are the two relative
    velocity constraints V2-V1 = dL1/dt, V3-V2 = dL2/dt, the force-free
    condition sum F = 0, and the center-of-mass definition.
    """
    X1, X2, X3 = positions
    if not (X1 < X2 < X3):
        raise ValueError("sphere positions must be strictly ordered")
    R, mu = geometry.R, geometry.mu
    gaps = (X2 - X1 - 2 * R, X3 - X2 - 2 * R)
    if min(gaps) <= 0:
        raise ValueError("spheres overlap")

    self_mob = 1.0 / (6.0 * np.pi * mu * R)
    X = np.array([X1, X2, X3])
    # Oseen axial mobility matrix M[i, j]: V_i = sum_j M[i, j] F_j
    M = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            if i == j:
                M[i, j] = self_mob
            else:
                M[i, j] = 1.0 / (4.0 * np.pi * mu * abs(X[i] - X[j]))

    A = np.zeros((4, 4))
    b = np.zeros(4)
    A[0, :3] = M[1] - M[0]
    b[0] = arm_rates[0]
    A[1, :3] = M[2] - M[1]
    b[1] = arm_rates[1]
    A[2, :3] = 1.0
    A[3, :3] = M.mean(axis=0)
    A[3, 3] = -1.0
    try:
        sol = np.linalg.solve(A, b)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular mobility system") from exc
    F = sol[:3]
    V = M @ F
    return MobilitySolution(F=tuple(F), V=tuple(V), Vcm=float(sol[3]))


def _cm_velocity(L1: float, L2: float, rate1: float, rate2: float,
                 geometry: SwimmerGeometry) -> float:
    # Vcm depends on arm lengths and rates only (translation invariance).
    pos = sphere_positions(0.0, L1, L2)
    return solve_mobility(pos, (rate1, rate2), geometry).Vcm


def integrate_action(
    posture: Posture,
    s: int,
    a: int,
    geometry: SwimmerGeometry,
    n_substeps: int = DEFAULT_SUBSTEPS,
) -> tuple[Posture, float, list[MobilitySolution]]:
    """Integrate the center of mass over one action with the midpoint rule.

    Returns the final posture (arm lengths land exactly on the toggled
    configuration), the net displacement, and the mobility solutions at
    the substep midpoints.
    """
    traj = arm_trajectory(s, a, geometry, n_substeps)
    L1_0, L2_0 = traj.L1[0], traj.L2[0]
    if not (np.isclose(posture.L1, L1_0) and np.isclose(posture.L2, L2_0)):
        raise ValueError("posture arm lengths inconsistent with state")
    dt = traj.times[1] - traj.times[0]
    X = posture.X
    history: list[MobilitySolution] = []
    for k in range(n_substeps):
        L1m = 0.5 * (traj.L1[k] + traj.L1[k + 1])
        L2m = 0.5 * (traj.L2[k] + traj.L2[k + 1])
        pos = sphere_positions(0.0, L1m, L2m)
        sol = solve_mobility(pos, (traj.rate1, traj.rate2), geometry)
        history.append(sol)
        X += sol.Vcm * dt
    new = Posture(X=X, L1=float(traj.L1[-1]), L2=float(traj.L2[-1]))
    return new, new.X - posture.X, history


def gait_displacement(
    geometry: SwimmerGeometry, n_substeps: int = DEFAULT_SUBSTEPS
) -> float:
    """Net displacement over one full right-swimming gait (four actions)."""
    s = 4
    posture = posture_of_state(s, 0.0, geometry)
    for _ in range(4):
        a = gait_action(s)
        posture, _, _ = integrate_action(posture, s, a, geometry, n_substeps)
        s = transition(s, a)
    assert s == 4
    return posture.X


def mean_swim_speed(geometry: SwimmerGeometry, n_substeps: int = DEFAULT_SUBSTEPS) -> float:
    """Average center-of-mass speed of the gait, S dX / (4 w)."""
    return geometry.S * gait_displacement(geometry, n_substeps) / (4.0 * geometry.w)


@dataclass(frozen=True)
class FlowModel:
    """Singularity reconstruction of the ambient velocity field.

    centers    sphere centers along the axis
    forces     axial force each sphere exerts on the fluid
    rigid      axial rigid-body velocity of each sphere (grid frame)
    radius     sphere radius
    mu         viscosity
    ambient    uniform axial background velocity (towed-frame runs)
    """

    centers: tuple[float, ...]
    forces: tuple[float, ...]
    rigid: tuple[float, ...]
    radius: float
    mu: float
    ambient: float = 0.0

    @classmethod
    def from_mobility(
        cls,
        positions: tuple[float, float, float],
        sol: MobilitySolution,
        geometry: SwimmerGeometry,
    ) -> "FlowModel":
        return cls(
            centers=tuple(positions),
            forces=tuple(sol.F),
            rigid=tuple(sol.V),
            radius=geometry.R,
            mu=geometry.mu,
        )

    @classmethod
    def towed_sphere(cls, center: float, speed: float, radius: float, mu: float) -> "FlowModel":
        """Sphere dragged at ``speed``, in the frame moving with the sphere.

        Far away the fluid streams past at -speed; on the sphere the
        velocity vanishes (rigid velocity zero in this frame).
        """
        force = 6.0 * np.pi * mu * radius * speed
        return cls(
            centers=(center,),
            forces=(force,),
            rigid=(0.0,),
            radius=radius,
            mu=mu,
            ambient=-speed,
        )


def flow_velocity(model: FlowModel, x, rho, component: str = "both"):
    """Axisymmetric velocity (u_x, u_rho) at points (x, rho).

    Outside every sphere: ambient + sum over spheres of Stokeslet plus
    source doublet (the exact isolated translating-sphere field, which is
    analytically divergence-free and decays like 1/r).  Inside a sphere
    the rigid-body velocity of that sphere is returned.  ``component``
    limits the work to "x" or "rho" when only one part is needed.
    """
    x = np.asarray(x, dtype=float)
    rho = np.asarray(rho, dtype=float)
    x, rho = np.broadcast_arrays(x, rho)
    want_x = component in ("both", "x")
    want_rho = component in ("both", "rho")
    ux = np.full(x.shape, model.ambient, dtype=float) if want_x else None
    urho = np.zeros(x.shape, dtype=float) if want_rho else None
    R = model.radius
    for xc, F in zip(model.centers, model.forces):
        dx = x - xc
        r2 = dx * dx + rho * rho
        r2 = np.where(r2 == 0.0, np.finfo(float).tiny, r2)
        r = np.sqrt(r2)
        r3 = r2 * r
        cs = F / (8.0 * np.pi * model.mu)
        d = F * R * R / (24.0 * np.pi * model.mu)
        if want_x:
            ux += cs * (1.0 / r + dx * dx / r3) + d * (1.0 / r3 - 3.0 * dx * dx / (r3 * r2))
        if want_rho:
            urho += (cs - 3.0 * d / r2) * dx * rho / r3
    # inside a sphere the field is that sphere's rigid-body motion
    for xc, V in zip(model.centers, model.rigid):
        dx = x - xc
        inside = dx * dx + rho * rho < R * R
        if want_x:
            ux = np.where(inside, V, ux)
        if want_rho:
            urho = np.where(inside, 0.0, urho)
    if component == "x":
        return ux
    if component == "rho":
        return urho
    if ux.ndim == 0:
        return float(ux), float(urho)
    return ux, urho
