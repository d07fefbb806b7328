"""Occupancy-measure propagation, value evaluation, feasibility and the map Γ.

The state-action occupancy measure of a Markov policy is defined by the
forward recursion

    d_1(s, a) = rho(s) * pi_1(a|s)
    d_t(s, a) = sum_{s', a'} d_{t-1}(s', a') * P_{t-1}(s|s', a') * pi_t(a|s)

and cumulative reward/constraint values are linear functionals of it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import COMMON, ConstrainedMarkovGame, validate_policy

# Value-level tolerance: values are sums of O(H*|S|*|A|) products, so this is
# deliberately looser than the 1e-12 structural tolerance on input tables.
VALUE_TOL = 1e-9

# State marginals below this are treated as unreachable by Γ.
ZERO_MARGINAL = 1e-12


def compute_occupancy(game: ConstrainedMarkovGame, policy: np.ndarray) -> np.ndarray:
    """Forward-propagate the per-timestep occupancy d_t(s, a), shape (H, S, A)."""
    validate_policy(game, policy)
    h, s, a = game.horizon, game.num_states, game.num_joint_actions
    d = np.zeros((h, s, a))
    d[0] = game.rho[:, None] * policy[0]
    for t in range(1, h):
        marginal = np.einsum("xa,xay->y", d[t - 1], game.kernel[t - 1])
        d[t] = marginal[:, None] * policy[t]
    return d


def validate_occupancy(game: ConstrainedMarkovGame, occupancy: np.ndarray,
                       tol: float = VALUE_TOL) -> None:
    """Raise ValueError unless mass and flow-consistency invariants hold."""
    occupancy = np.asarray(occupancy, dtype=np.float64)
    want = (game.horizon, game.num_states, game.num_joint_actions)
    if occupancy.shape != want:
        raise ValueError(f"occupancy has shape {occupancy.shape}, expected {want}")
    if occupancy.min() < -tol:
        raise ValueError("occupancy has a negative entry")
    mass = occupancy.sum(axis=(1, 2))
    if np.abs(mass - 1.0).max() > tol:
        raise ValueError(f"per-timestep mass {mass} deviates from 1")
    if np.abs(occupancy[0].sum(axis=1) - game.rho).max() > tol:
        raise ValueError("occupancy at t=1 is inconsistent with rho")
    for t in range(1, game.horizon):
        inflow = np.einsum("xa,xay->y", occupancy[t - 1], game.kernel[t - 1])
        if np.abs(occupancy[t].sum(axis=1) - inflow).max() > tol:
            raise ValueError(f"flow consistency violated at t={t + 1}")


@dataclass(frozen=True)
class ValueVector:
    """Cumulative values: reward[i] = V^{r^i}, constraint[i, j] = V^{g^{i,j}}."""

    reward: np.ndarray       # (N,)
    constraint: np.ndarray   # (N, J)


def evaluate(game: ConstrainedMarkovGame, occupancy: np.ndarray) -> ValueVector:
    """Values of all reward and constraint signals under an occupancy measure."""
    flat = np.asarray(occupancy).reshape(-1)
    reward = game.rewards.reshape(game.num_players, -1) @ flat
    if game.constraint_mode == COMMON:
        shared = game.constraints.reshape(game.num_constraints, -1) @ flat
        constraint = np.tile(shared, (game.num_players, 1))
    else:
        constraint = game.constraints.reshape(
            game.num_players, game.num_constraints, -1) @ flat
    return ValueVector(reward=reward, constraint=constraint)


@dataclass(frozen=True)
class FeasibilityReport:
    """Per-constraint slacks V^{g^{i,j}} - c^{i,j}; feasible iff all >= -tol."""

    player: int | None
    slacks: np.ndarray      # (J,) for a single player, else (N, J)
    tol: float

    @property
    def feasible(self) -> bool:
        return bool(self.slacks.size == 0 or self.slacks.min() >= -self.tol)

    def min_slack(self) -> float:
        return float(self.slacks.min()) if self.slacks.size else np.inf


def slacks_of(game: ConstrainedMarkovGame, occupancy: np.ndarray) -> np.ndarray:
    """Slack matrix (N, J) for an occupancy measure."""
    values = evaluate(game, occupancy)
    if game.constraint_mode == COMMON:
        thresholds = np.tile(game.thresholds, (game.num_players, 1))
    else:
        thresholds = game.thresholds
    return values.constraint - thresholds


def feasibility(game: ConstrainedMarkovGame, policy: np.ndarray,
                player: int | None = None, tol: float = VALUE_TOL) -> FeasibilityReport:
    """Slack report for a policy; a policy is i-feasible iff all slacks >= -tol."""
    slacks = slacks_of(game, compute_occupancy(game, policy))
    if player is not None:
        return FeasibilityReport(player=player, slacks=slacks[player], tol=tol)
    return FeasibilityReport(player=None, slacks=slacks, tol=tol)


def occupancy_to_policy(game: ConstrainedMarkovGame, occupancy: np.ndarray) -> np.ndarray:
    """The map Γ: normalize d_t(s, .) per state; uniform at unreachable states.

    Uniform is the canonical selection from Γ's "arbitrary distribution"
    branch: symmetric, reproducible, and it never excludes actions that a
    later modification might need.
    """
    occupancy = np.asarray(occupancy, dtype=np.float64)
    marginal = occupancy.sum(axis=-1)
    policy = np.empty_like(occupancy)
    a = occupancy.shape[-1]
    for t in range(occupancy.shape[0]):
        for s in range(occupancy.shape[1]):
            if marginal[t, s] > ZERO_MARGINAL:
                policy[t, s] = occupancy[t, s] / marginal[t, s]
            else:
                policy[t, s] = 1.0 / a
    return policy
