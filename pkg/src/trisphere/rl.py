"""Tabular Q-learning over recorded experience sets.

The agent has four states and two actions; experiences are consumed
off-policy in log order with the standard update

    Q(s,a) <- (1-alpha) Q(s,a) + alpha (r + gamma max_a' Q(s',a')).

Success of a learning run means the greedy policy of the final Q matrix
reproduces the deterministic right-swimming gait in every state, with no
ties.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .kinematics import ACTIONS, STATES, gait_action, transition

REWARD_CHANNELS = ("disp", "acc", "diff")

#: state mirror under x -> -x (arm 1 <-> arm 2): 2 <-> 3, 1 and 4 fixed.
MIRROR_STATE = {1: 1, 2: 3, 3: 2, 4: 4}
MIRROR_ACTION = {1: 2, 2: 1}


@dataclass(frozen=True)
class Experience:
    """One decision step: (s, a, s', r) plus the full recorded channels."""

    s: int
    a: int
    s_next: int
    r_disp: float
    r_acc: float
    r_diff: float
    X_before: float = math.nan
    X_after: float = math.nan
    t: float = math.nan

    def __post_init__(self):
        if self.s not in STATES or self.a not in ACTIONS:
            raise ValueError("invalid state or action label")
        if self.s_next != transition(self.s, self.a):
            raise ValueError(
                f"inconsistent experience: transition({self.s},{self.a}) != {self.s_next}"
            )

    def reward(self, channel: str) -> float:
        if channel not in REWARD_CHANNELS:
            raise ValueError(f"unknown reward channel {channel!r}")
        return getattr(self, f"r_{channel}")

    @classmethod
    def from_record(cls, rec) -> "Experience":
        """Adapt any per-action record carrying the same field names."""
        return cls(
            s=rec.s, a=rec.a, s_next=rec.s_next,
            r_disp=rec.r_disp, r_acc=rec.r_acc, r_diff=rec.r_diff,
            X_before=rec.X_before, X_after=rec.X_after, t=rec.t,
        )


@dataclass(frozen=True)
class LearningParams:
    alpha: float
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise ValueError("alpha must lie in (0, 1]")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")


def zero_q() -> np.ndarray:
    """Action-value matrix initialized to zeros, indexed [s-1, a-1]."""
    return np.zeros((4, 2))


def q_update(q: np.ndarray, e: Experience, params: LearningParams,
             channel: str = "disp") -> np.ndarray:
    """One Q-learning update; only entry (s, a) changes."""
    r = e.reward(channel)
    out = q.copy()
    target = r + params.gamma * q[e.s_next - 1].max()
    out[e.s - 1, e.a - 1] = (1.0 - params.alpha) * q[e.s - 1, e.a - 1] + params.alpha * target
    return out


def run_qlearning(experiences, params: LearningParams, channel: str = "disp") -> np.ndarray:
    """Fold q_update over the experiences in log order, from zeros."""
    if len(experiences) == 0:
        raise ValueError("empty experience set")
    q = zero_q()
    gamma, alpha = params.gamma, params.alpha
    for e in experiences:
        r = e.reward(channel)
        si, ai, sn = e.s - 1, e.a - 1, e.s_next - 1
        q[si, ai] = (1.0 - alpha) * q[si, ai] + alpha * (r + gamma * q[sn].max())
    return q


def greedy_policy(q: np.ndarray, tie_epsilon: float = 1e-12):
    """Greedy policy of a Q matrix plus per-state tie flags.

    A state is tied when its two action values differ by no more than
    tie_epsilon * max(1, |Q|_inf); tied rows get probability (0.5, 0.5).
    """
    scale = max(1.0, float(np.abs(q).max()))
    policy = np.zeros((4, 2))
    ties = np.zeros(4, dtype=bool)
    for si in range(4):
        d = q[si, 0] - q[si, 1]
        if abs(d) <= tie_epsilon * scale:
            ties[si] = True
            policy[si] = (0.5, 0.5)
        elif d > 0:
            policy[si, 0] = 1.0
        else:
            policy[si, 1] = 1.0
    return policy, ties


def gait_policy_matrix() -> np.ndarray:
    """The deterministic right-swimming gait as a policy matrix."""
    p = np.zeros((4, 2))
    for s in STATES:
        p[s - 1, gait_action(s) - 1] = 1.0
    return p


def is_success(policy: np.ndarray, ties) -> bool:
    """True iff no state is tied and the policy is the right-swimming gait."""
    if np.any(ties):
        return False
    return bool(np.array_equal(policy, gait_policy_matrix()))


def is_mirror_success(policy: np.ndarray, ties) -> bool:
    """Diagnostic: the learned policy is the left-swimming (mirrored) gait."""
    if np.any(ties):
        return False
    mirror = np.zeros((4, 2))
    for s in STATES:
        a = gait_action(MIRROR_STATE[s])
        mirror[s - 1, MIRROR_ACTION[a] - 1] = 1.0
    return bool(np.array_equal(policy, mirror))


def make_batches(experiences, batch_size: int, n_batches: int):
    """Consecutive experience batches.

    When the log length equals batch_size * n_batches the batches are the
    disjoint consecutive blocks; otherwise consecutive windows with the
    uniform integer stride floor((N - B) / (n_batches - 1)) starting at 0.
    """
    total = len(experiences)
    if batch_size > total:
        raise ValueError("batch longer than the experience log")
    if n_batches < 1:
        raise ValueError("need at least one batch")
    if n_batches == 1:
        return [list(experiences[:batch_size])]
    if total == batch_size * n_batches:
        starts = [k * batch_size for k in range(n_batches)]
    else:
        stride = (total - batch_size) // (n_batches - 1)
        if stride < 1:
            raise ValueError("too many batches for the log length")
        starts = [k * stride for k in range(n_batches)]
    return [list(experiences[s : s + batch_size]) for s in starts]


def sweep(batches, gamma_grid, alpha_grid, channel: str, tie_epsilon: float = 1e-12):
    """Success-rate matrix over (gamma, alpha) plus per-batch totals.

    Entry [i, j] is the fraction of batches whose learned greedy policy
    equals the right-swimming gait at (gamma_grid[i], alpha_grid[j]).
    Per-batch totals (fraction of grid cells successful for that batch)
    feed the box-plot summary; the mirror-gait rate is kept as a
    diagnostic.
    """
    gamma_grid = list(gamma_grid)
    alpha_grid = list(alpha_grid)
    if not gamma_grid or not alpha_grid or not batches:
        raise ValueError("empty grid or batch list")
    rates = np.zeros((len(gamma_grid), len(alpha_grid)))
    mirror_rates = np.zeros_like(rates)
    batch_totals = np.zeros(len(batches))
    for b, batch in enumerate(batches):
        for i, gamma in enumerate(gamma_grid):
            for j, alpha in enumerate(alpha_grid):
                q = run_qlearning(batch, LearningParams(alpha=alpha, gamma=gamma), channel)
                policy, ties = greedy_policy(q, tie_epsilon)
                if is_success(policy, ties):
                    rates[i, j] += 1.0
                    batch_totals[b] += 1.0
                elif is_mirror_success(policy, ties):
                    mirror_rates[i, j] += 1.0
    rates /= len(batches)
    mirror_rates /= len(batches)
    batch_totals /= len(gamma_grid) * len(alpha_grid)
    return SweepResult(
        gamma_grid=gamma_grid,
        alpha_grid=alpha_grid,
        rates=rates,
        mirror_rates=mirror_rates,
        batch_totals=batch_totals,
        channel=channel,
    )


@dataclass
class SweepResult:
    gamma_grid: list
    alpha_grid: list
    rates: np.ndarray
    mirror_rates: np.ndarray
    batch_totals: np.ndarray
    channel: str

    @property
    def total_success(self) -> float:
        """Grid-average success rate (the box-plot statistic)."""
        return float(self.rates.mean())

    def row(self, gamma: float) -> np.ndarray:
        return self.rates[self.gamma_grid.index(gamma)]


def value_iteration(reward_table: np.ndarray, gamma: float, tol: float = 1e-14,
                    max_iter: int = 200_000) -> np.ndarray:
    """Exact optimal Q for the 4-state deterministic MDP with stationary
    rewards reward_table[s-1, a-1]; independent check for Q-learning."""
    q = zero_q()
    for _ in range(max_iter):
        v = q.max(axis=1)
        q_new = np.empty_like(q)
        for s in STATES:
            for a in ACTIONS:
                q_new[s - 1, a - 1] = reward_table[s - 1, a - 1] + gamma * v[transition(s, a) - 1]
        if np.abs(q_new - q).max() < tol:
            return q_new
        q = q_new
    raise RuntimeError("value iteration did not converge")


def rollout_random(environment, n_actions: int, seed: int):
    """Random-policy rollout: at each step pick action 1 or 2 with equal
    probability; returns the experience log.

    ``environment`` must expose ``state`` and a ``step(action, rng)``
    method returning an Experience.
    """
    rng = np.random.default_rng(seed)
    log = []
    for _ in range(n_actions):
        a = int(rng.integers(1, 3))
        log.append(environment.step(a, rng))
    return log


# ---------------------------------------------------------------------------
# CSV schemas
# ---------------------------------------------------------------------------

EXPERIENCE_HEADER = "t,s,a,s_next,r_disp,r_acc,r_diff,X_before,X_after"
HEATMAP_HEADER = "reward,gamma,alpha,success_rate,n_batches"
BOXPLOT_HEADER = "reward,pe,batch_index,total_success"


def fmt(x: float) -> str:
    """17-significant-digit float serialization used by every CSV writer."""
    return f"{x:.17g}"


def write_experience_csv(path, experiences, header_comment: str | None = None):
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        f.write(EXPERIENCE_HEADER + "\n")
        for e in experiences:
            f.write(
                ",".join(
                    [fmt(e.t), str(e.s), str(e.a), str(e.s_next),
                     fmt(e.r_disp), fmt(e.r_acc), fmt(e.r_diff),
                     fmt(e.X_before), fmt(e.X_after)]
                )
                + "\n"
            )


def read_experience_csv(path):
    out = []
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r and not r[0].startswith("#")]
    header = rows[0]
    if ",".join(header) != EXPERIENCE_HEADER:
        raise ValueError(f"unexpected experience log header in {path}")
    for r in rows[1:]:
        out.append(
            Experience(
                t=float(r[0]), s=int(r[1]), a=int(r[2]), s_next=int(r[3]),
                r_disp=float(r[4]), r_acc=float(r[5]), r_diff=float(r[6]),
                X_before=float(r[7]), X_after=float(r[8]),
            )
        )
    return out


def write_heatmap_csv(path, results, n_batches: int, header_comment: str | None = None):
    """results: iterable of SweepResult."""
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        f.write(HEATMAP_HEADER + "\n")
        for res in results:
            for i, gamma in enumerate(res.gamma_grid):
                for j, alpha in enumerate(res.alpha_grid):
                    f.write(
                        f"{res.channel},{fmt(gamma)},{fmt(alpha)},"
                        f"{fmt(res.rates[i, j])},{n_batches}\n"
                    )


def write_boxplot_csv(path, rows, header_comment: str | None = None):
    """rows: iterable of (reward, pe, batch_index, total_success)."""
    with open(path, "w", newline="") as f:
        if header_comment:
            f.write(f"# {header_comment}\n")
        f.write(BOXPLOT_HEADER + "\n")
        for reward, pe, bi, total in rows:
            f.write(f"{reward},{fmt(pe)},{bi},{fmt(total)}\n")
