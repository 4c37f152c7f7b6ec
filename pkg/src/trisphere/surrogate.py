"""Fast analytic reward environment fitted to recorded experience logs.

The recorded rewards have a simple statistical structure: the net
displacement of each (state, action) stroke is a sharp constant, while
the two chemotactic rewards are affine in the center-of-mass position
with some residual noise that grows with the Peclet number.  Fitting
those coefficients once gives a surrogate environment that reproduces
the Q-learning phenomenology in microseconds per step, so the learning
experiments never need the PDE solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kinematics import ACTIONS, STATES, transition
from .rl import MIRROR_ACTION, MIRROR_STATE, Experience

#: channels with an affine-in-X model (the displacement channel is the
#: exact per-stroke constant instead)
AFFINE_CHANNELS = ("disp", "acc", "diff")


def _table() -> np.ndarray:
    return np.zeros((4, 2))


@dataclass
class AffineRewardModel:
    """Per-(state, action) stroke displacements and affine reward laws.

    For each channel, reward = c0[s,a] + c1[s,a] * X + eta[s,a] * n_t,
    where n_t is a unit-variance noise sequence with lag-one correlation
    phi[channel] (an AR(1) recursion; phi = 0 gives independent draws).
    The recorded chemotactic rewards carry the memory of the swimmer's
    concentration wake: persistent for the intake integral, alternating
    for the intake difference, so matching the lag-one correlation is
    needed to reproduce the learning outcomes of the recorded logs.

    ``delta`` is the deterministic stroke displacement; the displacement
    channel's reward is delta itself (its fitted c0/c1/eta are kept for
    diagnostics).  ``pe`` records the Peclet number of the source log.
    """

    delta: np.ndarray = field(default_factory=_table)
    c0: dict = field(default_factory=dict)
    c1: dict = field(default_factory=dict)
    eta: dict = field(default_factory=dict)
    phi: dict = field(default_factory=dict)
    pe: float = math.nan

    def __post_init__(self):
        for ch in AFFINE_CHANNELS:
            self.c0.setdefault(ch, _table())
            self.c1.setdefault(ch, _table())
            self.eta.setdefault(ch, _table())
            self.phi.setdefault(ch, 0.0)

    def validate(self, mirror_tol: float = 1e-6) -> None:
        """Check invariants: finite tables, eta >= 0, delta antisymmetry
        under the x -> -x mirror (state 2 <-> 3, action 1 <-> 2)."""
        if not np.all(np.isfinite(self.delta)):
            raise ValueError("non-finite stroke displacements")
        for ch in AFFINE_CHANNELS:
            for tab in (self.c0[ch], self.c1[ch], self.eta[ch]):
                if not np.all(np.isfinite(tab)):
                    raise ValueError(f"non-finite coefficients in channel {ch}")
            if np.any(self.eta[ch] < 0):
                raise ValueError("negative noise amplitude")
            if not (-1.0 < self.phi[ch] < 1.0):
                raise ValueError("noise correlation must lie in (-1, 1)")
        scale = max(np.abs(self.delta).max(), 1e-300)
        for s in STATES:
            for a in ACTIONS:
                mirrored = self.delta[MIRROR_STATE[s] - 1, MIRROR_ACTION[a] - 1]
                if abs(self.delta[s - 1, a - 1] + mirrored) > mirror_tol * scale:
                    raise ValueError("stroke displacements break mirror antisymmetry")

    def scaled_noise(self, factor: float) -> "AffineRewardModel":
        """Copy of the model with every noise amplitude multiplied."""
        if factor < 0:
            raise ValueError("noise factor must be >= 0")
        return AffineRewardModel(
            delta=self.delta.copy(),
            c0={ch: self.c0[ch].copy() for ch in AFFINE_CHANNELS},
            c1={ch: self.c1[ch].copy() for ch in AFFINE_CHANNELS},
            eta={ch: factor * self.eta[ch] for ch in AFFINE_CHANNELS},
            phi=dict(self.phi),
            pe=self.pe,
        )

    def stationary(self) -> "AffineRewardModel":
        """Copy with eta = 0 and c1 = 0 (position-independent rewards)."""
        out = self.scaled_noise(0.0)
        for ch in AFFINE_CHANNELS:
            out.c1[ch] = _table()
        return out


def fit_affine(experiences, pe: float = math.nan,
               min_samples: int = 10) -> AffineRewardModel:
    """Least-squares affine fit of each reward channel against X_before.

    Per (state, action): delta is the mean recorded displacement, c0/c1
    the line fit of reward versus starting position, and eta the residual
    standard deviation.  Raises when any (s, a) pair has fewer than
    ``min_samples`` visits.
    """
    model = AffineRewardModel(pe=pe)
    residuals = {ch: np.empty(len(experiences)) for ch in AFFINE_CHANNELS}
    for s in STATES:
        for a in ACTIONS:
            idx = [i for i, e in enumerate(experiences) if e.s == s and e.a == a]
            group = [experiences[i] for i in idx]
            if len(group) < min_samples:
                raise ValueError(
                    f"underdetermined fit: only {len(group)} samples for (s={s}, a={a})"
                )
            x = np.array([e.X_before for e in group])
            model.delta[s - 1, a - 1] = float(
                np.mean([e.X_after - e.X_before for e in group])
            )
            design = np.column_stack([np.ones_like(x), x])
            for ch in AFFINE_CHANNELS:
                r = np.array([e.reward(ch) for e in group])
                coef, *_ = np.linalg.lstsq(design, r, rcond=None)
                resid = r - design @ coef
                dof = max(len(group) - 2, 1)
                eta = float(np.sqrt(resid @ resid / dof))
                model.c0[ch][s - 1, a - 1] = coef[0]
                model.c1[ch][s - 1, a - 1] = coef[1]
                model.eta[ch][s - 1, a - 1] = eta
                residuals[ch][idx] = resid / max(eta, 1e-300)
    # lag-one correlation of the standardized residuals in log order
    for ch in ("acc", "diff"):
        r = residuals[ch] - residuals[ch].mean()
        var = float(r @ r)
        if var > 0:
            phi = float((r[:-1] @ r[1:]) / var)
            model.phi[ch] = min(max(phi, -0.95), 0.95)
    return model


def surrogate_step(model: AffineRewardModel, s: int, a: int, X: float,
                   rng: np.random.Generator):
    """One environment step: (s_next, rewards dict, X_next).

    The displacement reward is the deterministic stroke constant; the
    chemotactic channels draw their affine value plus Gaussian noise.
    """
    s_next = transition(s, a)
    si, ai = s - 1, a - 1
    delta = model.delta[si, ai]
    rewards = {"disp": delta}
    for ch in ("acc", "diff"):
        noise = model.eta[ch][si, ai] * rng.standard_normal()
        rewards[ch] = model.c0[ch][si, ai] + model.c1[ch][si, ai] * X + noise
    return s_next, rewards, X + delta


class SurrogateEnvironment:
    """Environment adapter for rollouts over an AffineRewardModel."""

    def __init__(self, model: AffineRewardModel, s0: int = 4, X0: float = 0.0):
        self.model = model
        self.state = s0
        self.X = X0
        self.t = 0.0

    def step(self, a: int, rng: np.random.Generator) -> Experience:
        s = self.state
        s_next, rewards, x_next = surrogate_step(self.model, s, a, self.X, rng)
        e = Experience(
            s=s, a=a, s_next=s_next,
            r_disp=rewards["disp"], r_acc=rewards["acc"], r_diff=rewards["diff"],
            X_before=self.X, X_after=x_next, t=self.t,
        )
        self.state = s_next
        self.X = x_next
        self.t += 1.0
        return e


# ---------------------------------------------------------------------------
# flat key-value fixture file
# ---------------------------------------------------------------------------

_HEADER = [
    "# Affine reward model fitted from a recorded experience log.",
    "# Units: delta in lengths (R); c0 in reward units; c1 in reward units",
    "# per length; eta in reward units.  Keys: delta.s.a, c0.channel.s.a,",
    "# c1.channel.s.a, eta.channel.s.a with s in 1..4 and a in 1..2.",
]


def save_model(path, model: AffineRewardModel) -> None:
    lines = list(_HEADER)
    if not math.isnan(model.pe):
        lines.append(f"pe = {model.pe:.17g}")
    for s in STATES:
        for a in ACTIONS:
            lines.append(f"delta.{s}.{a} = {model.delta[s - 1, a - 1]:.17g}")
    for name, tabs in (("c0", model.c0), ("c1", model.c1), ("eta", model.eta)):
        for ch in AFFINE_CHANNELS:
            for s in STATES:
                for a in ACTIONS:
                    lines.append(
                        f"{name}.{ch}.{s}.{a} = {tabs[ch][s - 1, a - 1]:.17g}"
                    )
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_model(path) -> AffineRewardModel:
    model = AffineRewardModel()
    with open(path) as f:
        for raw in f:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            key = key.strip()
            val = float(val.strip())
            parts = key.split(".")
            if key == "pe":
                model.pe = val
            elif parts[0] == "delta" and len(parts) == 3:
                model.delta[int(parts[1]) - 1, int(parts[2]) - 1] = val
            elif parts[0] in ("c0", "c1", "eta") and len(parts) == 4:
                tab = getattr(model, parts[0])[parts[1]]
                tab[int(parts[2]) - 1, int(parts[3]) - 1] = val
            else:
                raise ValueError(f"unrecognized fixture key {key!r}")
    return model


def default_model() -> AffineRewardModel:
    """The shipped fixture: fitted at Pe = 0.06 from the committed
    low-resolution simulation log."""
    from importlib.resources import files

    path = files("trisphere.data") / "surrogate_pe0.06.txt"
    return load_model(str(path))
