"""Image-charge solution for collinear perfectly absorbing spheres.

A sphere held at zero concentration in a background C_inf is equivalent
to a grounded conductor; its absorbed flux is 4 pi D times its effective
charge.  For several spheres the mutual screening is resolved by the
classical Kelvin image iteration: a source q at axial distance d from a
sphere center spawns an image -q R/d at R^2/d inside that sphere.  The
iteration converges geometrically for non-overlapping spheres.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ChargeSystem:
    """Point charges (on the axis) reproducing the absorbing steady state."""

    positions: np.ndarray  # axial location of each charge
    charges: np.ndarray  # strength, units of concentration * length
    c_inf: float

    @property
    def total_charge(self) -> float:
        return float(self.charges.sum())

    def concentration(self, x, rho):
        """Steady concentration C_inf - sum_k q_k / |r - r_k|."""
        x = np.asarray(x, dtype=float)
        rho = np.asarray(rho, dtype=float)
        c = np.full(np.broadcast(x, rho).shape, self.c_inf)
        for q, xq in zip(self.charges, self.positions):
            c = c - q / np.sqrt((x - xq) ** 2 + rho**2)
        return c

    def flux(self, diffusivity: float) -> float:
        """Total absorbed flux 4 pi D sum q."""
        return 4.0 * np.pi * diffusivity * self.total_charge


def absorbing_charges(
    centers,
    radius: float,
    c_inf: float = 1.0,
    tol: float = 1e-13,
    max_generations: int = 200,
) -> ChargeSystem:
    """Charges making C = 0 on every sphere of ``radius`` at ``centers``.

    Starts from the isolated-sphere solution (charge R C_inf at each
    center) and iterates images until the largest newly added charge
    falls below ``tol`` times the running total.
    """
    centers = np.asarray(centers, dtype=float)
    if centers.ndim != 1 or len(centers) == 0:
        raise ValueError("need a 1D sequence of sphere centers")
    if len(centers) > 1:
        gaps = np.diff(np.sort(centers))
        if np.min(gaps) <= 2 * radius:
            raise ValueError("spheres overlap or touch")

    positions = list(centers)
    charges = [radius * c_inf] * len(centers)
    owner = list(range(len(centers)))  # sphere each charge sits inside

    # newest generation of charges, to be imaged in all other spheres
    new_idx = list(range(len(charges)))
    for _ in range(max_generations):
        created: list[int] = []
        for k in new_idx:
            for i, xc in enumerate(centers):
                if owner[k] == i:
                    continue
                d = positions[k] - xc
                q_img = -charges[k] * radius / abs(d)
                x_img = xc + radius**2 / d
                positions.append(x_img)
                charges.append(q_img)
                owner.append(i)
                created.append(len(charges) - 1)
        total = abs(sum(charges))
        if not created or max(abs(charges[k]) for k in created) < tol * total:
            break
        new_idx = created
    else:
        raise RuntimeError("image iteration failed to converge")

    return ChargeSystem(
        positions=np.asarray(positions), charges=np.asarray(charges), c_inf=c_inf
    )


def three_sphere_baseline_ratio(W_over_R: float) -> float:
    """J0 / (12 pi R D C_inf) for the fully extended three-sphere swimmer."""
    sys = absorbing_charges(np.array([-W_over_R, 0.0, W_over_R]), 1.0)
    return sys.total_charge / 3.0
