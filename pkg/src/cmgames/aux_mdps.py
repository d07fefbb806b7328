"""Auxiliary MDPs that turn modification search into policy optimization.

Two constructions, both tailored to one player i and one joint policy pi:

* history MDP — states are (played history, s_t, recommended action) plus an
  absorbing state b; a non-Markov modification is literally a policy here.
* pair MDP    — states are (s_t, recommended action) plus b; Markov
  modifications are its policies, and with the lifted reward its optimal
  value equals the best modified-policy value in the original game.

In both, the next recommended action is spread uniformly (the 1/|A^i|
factor), the policy weight of the recommendation is folded into the kernel,
and the "missing" recommendation mass flows to b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import ConstrainedMarkovGame
from .modifications import (
    DEFAULT_HISTORY_CAP,
    CapExceededError,
    MarkovModification,
    NonMarkovModification,
)


@dataclass(frozen=True)
class AuxiliaryMDP:
    """Per-timestep state sets with a trailing absorbing state.

    kernels[t] has shape (num_states[t] + 1, A_i, num_states[t+1] + 1); the
    last index of every state axis is the absorbing state b.
    """

    kind: str                       # "history" or "pair"
    player: int
    horizon: int
    num_actions: int                # A_i
    num_states: tuple[int, ...]     # per timestep, excluding b
    kernels: tuple[np.ndarray, ...]
    rho: np.ndarray                 # (num_states[0] + 1,)

    def __post_init__(self):
        self.rho.setflags(write=False)
        for k in self.kernels:
            k.setflags(write=False)


def _player_action_slices(game: ConstrainedMarkovGame, player: int):
    """For (rec, played) pairs: joint indices carrying rec, and their played twins.

    Returns arrays rec_joint[rec] (joint actions whose player-digit is rec)
    and played_joint[rec, played] (same joints with the digit replaced).
    """
    counts = game.action_counts
    ai = counts[player]
    stride = int(np.prod(counts[player + 1:])) if player + 1 < len(counts) else 1
    digits = np.stack(np.unravel_index(np.arange(game.num_joint_actions), counts), axis=1)
    rec_joint = [np.flatnonzero(digits[:, player] == r) for r in range(ai)]
    played = np.empty((ai, ai), dtype=object)
    for r in range(ai):
        for p in range(ai):
            played[r, p] = rec_joint[r] + (p - r) * stride
    return rec_joint, played


def _pair_block(game: ConstrainedMarkovGame, player: int, policy: np.ndarray,
                t: int) -> tuple[np.ndarray, np.ndarray]:
    """Shared kernel arithmetic for both constructions at timestep t.

    Returns (move, stay) where
      move[s, rec, played, s'] = (1/A_i) * sum_{a^{-i}} P_t(s'|s,(played,a^{-i}))
                                                       * pi_t((rec,a^{-i})|s)
      stay[s, rec]             = sum_{a^{-i}} pi_t((rec,a^{-i})|s)
    and the absorbing mass from (s, rec) is 1 - stay[s, rec].
    """
    s_n, ai = game.num_states, game.action_counts[player]
    rec_joint, played_joint = _player_action_slices(game, player)
    move = np.zeros((s_n, ai, ai, s_n))
    stay = np.zeros((s_n, ai))
    for r in range(ai):
        pi_slice = policy[t][:, rec_joint[r]]                       # (S, |A^{-i}|)
        stay[:, r] = pi_slice.sum(axis=1)
        for p in range(ai):
            kern = game.kernel[t][:, played_joint[r, p], :]         # (S, |A^{-i}|, S)
            move[:, r, p, :] = np.einsum("sm,smy->sy", pi_slice, kern) / ai
    return move, stay


def build_mdp2(game: ConstrainedMarkovGame, player: int,
               policy: np.ndarray) -> AuxiliaryMDP:
    """Pair MDP over (s, recommended action) states plus b."""
    s_n, ai = game.num_states, game.action_counts[player]
    n = s_n * ai
    kernels = []
    for t in range(game.horizon - 1):
        move, stay = _pair_block(game, player, policy, t)
        k = np.zeros((n + 1, ai, n + 1))
        # move is constant in the next recommendation rec'; tile it over rec'.
        flat = np.repeat(move.reshape(n, ai, s_n, 1), ai, axis=3).reshape(n, ai, n)
        k[:n, :, :n] = flat
        k[:n, :, n] = 1.0 - stay.reshape(n)[:, None]
        k[n, :, n] = 1.0
        kernels.append(k)
    rho = np.zeros(n + 1)
    rho[:n] = np.repeat(game.rho / ai, ai)
    return AuxiliaryMDP(kind="pair", player=player, horizon=game.horizon,
                        num_actions=ai, num_states=(n,) * game.horizon,
                        kernels=tuple(kernels), rho=rho)


def build_mdp1(game: ConstrainedMarkovGame, player: int, policy: np.ndarray,
               history_cap: int = DEFAULT_HISTORY_CAP) -> AuxiliaryMDP:
    """History MDP over (played prefix, s, recommended action) states plus b.

    State index at timestep t is prefix*(S*A_i) + s*A_i + rec with the prefix
    encoded exactly as in NonMarkovModification.  Appending (s, played joint
    a) turns prefix h into h*(S*A) + s*A + a.
    """
    s_n, a_n, ai = game.num_states, game.num_joint_actions, game.action_counts[player]
    sa = s_n * a_n
    sizes = tuple(sa ** t * s_n * ai for t in range(game.horizon))
    if max(sizes) > history_cap:
        raise CapExceededError(
            f"history MDP would need {max(sizes)} states, cap is {history_cap}")

    rec_joint, played_joint = _player_action_slices(game, player)
    kernels = []
    for t in range(game.horizon - 1):
        n_t, n_next = sizes[t], sizes[t + 1]
        prefixes = sa ** t
        k = np.zeros((n_t + 1, ai, n_next + 1))
        move, stay = _pair_block(game, player, policy, t)
        for h in range(prefixes):
            for s in range(s_n):
                base_next_prefix = (h * sa + s * a_n)   # + played joint action
                for r in range(ai):
                    x = (h * s_n + s) * ai + r
                    k[x, :, n_next] = 1.0 - stay[s, r]
                    for p in range(ai):
                        joints_rec = rec_joint[r]
                        joints_played = played_joint[r, p]
                        pi_w = policy[t][s, joints_rec]              # (|A^{-i}|,)
                        kern = game.kernel[t][s, joints_played, :]   # (|A^{-i}|, S)
                        # one target block per surviving a^{-i}
                        for w, a_pl, row in zip(pi_w, joints_played, kern):
                            if w == 0.0:
                                continue
                            h_next = base_next_prefix + int(a_pl)
                            block = (h_next * s_n + np.arange(s_n)) * ai
                            for s2 in range(s_n):
                                val = w * row[s2] / ai
                                if val != 0.0:
                                    k[x, p, block[s2]:block[s2] + ai] += val
        k[n_t, :, n_next] = 1.0
        kernels.append(k)

    rho = np.zeros(sizes[0] + 1)
    rho[:sizes[0]] = np.repeat(game.rho / ai, ai)
    return AuxiliaryMDP(kind="history", player=player, horizon=game.horizon,
                        num_actions=ai, num_states=sizes,
                        kernels=tuple(kernels), rho=rho)


def mdp_policy_from_modification(mdp: AuxiliaryMDP, game: ConstrainedMarkovGame,
                                 mod) -> list[np.ndarray]:
    """Render a modification as per-timestep (n_t + 1, A_i) policy tables.

    The absorbing row gets the uniform distribution; it never earns reward.
    """
    if mod.player != mdp.player:
        raise ValueError(f"modification is for player {mod.player}, MDP for {mdp.player}")
    ai = mdp.num_actions
    out = []
    for t in range(mdp.horizon):
        n_t = mdp.num_states[t]
        rows = np.empty((n_t + 1, ai))
        if isinstance(mod, NonMarkovModification):
            if mdp.kind != "history":
                raise ValueError("non-Markov modifications are policies of the history MDP only")
            rows[:n_t] = mod.tables[t].reshape(n_t, ai)
        else:
            cells = mod.tables[t].reshape(game.num_states * ai, ai)
            reps = n_t // cells.shape[0]
            rows[:n_t] = np.tile(cells, (reps, 1))
        rows[n_t] = 1.0 / ai
        out.append(rows)
    return out


def aux_occupancy(mdp: AuxiliaryMDP, policy_tables: list[np.ndarray]) -> list[np.ndarray]:
    """Forward occupancy per timestep over (state, action), mass 1 including b."""
    occ = [mdp.rho[:, None] * policy_tables[0]]
    for t in range(mdp.horizon - 1):
        marginal = np.einsum("xa,xay->y", occ[t], mdp.kernels[t])
        occ.append(marginal[:, None] * policy_tables[t + 1])
    return occ


# ---------------------------------------------------------------------------
# Lifted rewards and backward induction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LiftedReward:
    """Pair-MDP reward whose value equals the modified-policy signal value.

    tables[t][(s, rec), played] = |A_i|^(t+1) * sum_{a^{-i}}
        signal_t(s, (played, a^{-i})) * pi_t((rec, a^{-i}) | s),
    and zero at the absorbing state.
    """

    player: int
    tables: tuple[np.ndarray, ...]   # per t: (S*A_i + 1, A_i)

    def __post_init__(self):
        for arr in self.tables:
            arr.setflags(write=False)


def lift_reward(game: ConstrainedMarkovGame, player: int, policy: np.ndarray,
                signal: np.ndarray) -> LiftedReward:
    """Lift a per-step (H, S, A) signal (a reward r^i or any constraint g^{i,j})."""
    s_n, ai = game.num_states, game.action_counts[player]
    rec_joint, played_joint = _player_action_slices(game, player)
    signal = np.asarray(signal, dtype=np.float64)
    tables = []
    for t in range(game.horizon):
        table = np.zeros((s_n * ai + 1, ai))
        factor = float(ai) ** (t + 1)
        for r in range(ai):
            pi_slice = policy[t][:, rec_joint[r]]            # (S, |A^{-i}|)
            for p in range(ai):
                sig = signal[t][:, played_joint[r, p]]       # (S, |A^{-i}|)
                vals = factor * np.einsum("sm,sm->s", sig, pi_slice)
                table[np.arange(s_n) * ai + r, p] = vals
        tables.append(table)
    return LiftedReward(player=player, tables=tuple(tables))


def lifted_value(mdp: AuxiliaryMDP, lifted: LiftedReward,
                 occupancies: list[np.ndarray]) -> float:
    return float(sum(np.sum(occ * tab) for occ, tab in zip(occupancies, lifted.tables)))


def optimize_aux(mdp: AuxiliaryMDP, lifted: LiftedReward,
                 direction: str = "max") -> tuple[float, MarkovModification]:
    """Exact backward induction over the pair MDP.

    Returns the optimal value over all Markov modifications and a
    deterministic optimizer; ties break toward the lexicographically
    smallest action index.
    """
    if mdp.kind != "pair":
        raise ValueError("optimize_aux runs on the pair MDP")
    if direction not in ("max", "min"):
        raise ValueError(f"direction must be 'max' or 'min', got {direction!r}")
    n = mdp.num_states[0]
    ai = mdp.num_actions
    value = np.zeros(n + 1)
    picks = []
    for t in range(mdp.horizon - 1, -1, -1):
        q = np.array(lifted.tables[t])
        if t < mdp.horizon - 1:
            q += np.einsum("xay,y->xa", mdp.kernels[t], value)
        chosen = np.argmax(q, axis=1) if direction == "max" else np.argmin(q, axis=1)
        value = q[np.arange(n + 1), chosen]
        picks.append(chosen[:n])
    picks.reverse()

    s_n = n // ai
    tables = np.zeros((mdp.horizon, s_n, ai, ai))
    for t, chosen in enumerate(picks):
        grid = chosen.reshape(s_n, ai)
        s_idx, r_idx = np.indices(grid.shape)
        tables[t, s_idx, r_idx, grid] = 1.0
    argmod = MarkovModification(player=mdp.player, tables=tables)
    return float(mdp.rho @ value), argmod


def modification_from_alpha(game: ConstrainedMarkovGame, player: int,
                            policy: np.ndarray, alpha: np.ndarray,
                            mods: list[MarkovModification]) -> MarkovModification:
    """Realize an alpha-mixture of deterministic modifications as one stochastic one.

    Mixes the pair-MDP occupancies of the deterministic modifications and
    reads the policy back off the mixture per (s, recommendation) cell, so
    the induced game occupancy equals the alpha-mixture of the individual
    ones (a naive per-cell mixture of the tables would not, for H >= 2).
    """
    alpha = np.asarray(alpha, dtype=np.float64)
    if len(alpha) != len(mods):
        raise ValueError("alpha and modification list lengths differ")
    mdp = build_mdp2(game, player, policy)
    mixed = None
    for weight, mod in zip(alpha, mods):
        occ = aux_occupancy(mdp, mdp_policy_from_modification(mdp, game, mod))
        stacked = np.stack(occ)
        mixed = weight * stacked if mixed is None else mixed + weight * stacked
    ai = mdp.num_actions
    s_n = game.num_states
    tables = np.empty((game.horizon, s_n, ai, ai))
    for t in range(game.horizon):
        cells = mixed[t][:-1].reshape(s_n, ai, ai)
        denom = cells.sum(axis=-1, keepdims=True)
        uniform = np.full_like(cells, 1.0 / ai)
        with np.errstate(invalid="ignore", divide="ignore"):
            tables[t] = np.where(denom > 1e-12, cells / denom, uniform)
    return MarkovModification(player=player, tables=tables)
