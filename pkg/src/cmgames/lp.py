"""Dense linear programming: a two-phase simplex plus the game-specific builders.

The solver handles   max c.x  s.t.  A_ub x >= b_ub,  A_eq x = b_eq,  x >= 0
with Bland's rule throughout, so it terminates on degenerate problems and
always returns the same vertex for the same input.  Everything downstream
(best-feasible-modification programs, hull membership, max-min slack
programs, regularity probes) reduces to this form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .game import ConstrainedMarkovGame
from .modifications import (
    DEFAULT_ENUM_CAP,
    MarkovModification,
    _compose_timestep,
    enumerate_det_modifications,
)

# Feasibility/optimality tolerances of the solver itself.
LP_TOL = 1e-9
PIVOT_TOL = 1e-10
HULL_TOL = 1e-7

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"


@dataclass(frozen=True)
class LinearProgram:
    """max c.x with A_ub x >= b_ub, A_eq x = b_eq and x >= 0 componentwise."""

    c: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray

    @staticmethod
    def build(c, a_ub=None, b_ub=None, a_eq=None, b_eq=None) -> "LinearProgram":
        c = np.atleast_1d(np.asarray(c, dtype=np.float64))
        n = c.shape[0]
        a_ub = np.zeros((0, n)) if a_ub is None else np.asarray(a_ub, dtype=np.float64).reshape(-1, n)
        b_ub = np.zeros(0) if b_ub is None else np.atleast_1d(np.asarray(b_ub, dtype=np.float64))
        a_eq = np.zeros((0, n)) if a_eq is None else np.asarray(a_eq, dtype=np.float64).reshape(-1, n)
        b_eq = np.zeros(0) if b_eq is None else np.atleast_1d(np.asarray(b_eq, dtype=np.float64))
        if a_ub.shape[0] != b_ub.shape[0] or a_eq.shape[0] != b_eq.shape[0]:
            raise ValueError("constraint matrix and right-hand side sizes differ")
        if not all(np.isfinite(arr).all() for arr in (c, a_ub, b_ub, a_eq, b_eq)):
            raise ValueError("linear program has non-finite coefficients")
        return LinearProgram(c=c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=b_eq)


@dataclass(frozen=True)
class LPSolution:
    status: str
    x: np.ndarray | None
    objective: float | None


def _bland_pivots(a: np.ndarray, b: np.ndarray, cost: np.ndarray,
                  basis: np.ndarray, allowed: int) -> str:
    """Revised simplex (minimization) with Bland's rule, in place on ``basis``.

    Each iteration re-solves against the original data, so degenerate pivot
    chains cannot accumulate roundoff.  Entering column: the lowest-index
    column < ``allowed`` with negative reduced cost; leaving row: minimum
    ratio, ties broken by the smallest basic variable index.
    """
    m = a.shape[0]
    max_pivots = 200 * (m + a.shape[1] + 10)
    for _ in range(max_pivots):
        bmat = a[:, basis]
        try:
            x_b = np.linalg.solve(bmat, b)
            y = np.linalg.solve(bmat.T, cost[basis])
        except np.linalg.LinAlgError:
            return "singular"
        reduced = cost[:allowed] - y @ a[:, :allowed]
        candidates = np.flatnonzero(reduced < -LP_TOL)
        if candidates.size == 0:
            return OPTIMAL
        enter = int(candidates[0])
        direction = np.linalg.solve(bmat, a[:, enter])
        positive = direction > PIVOT_TOL
        if not positive.any():
            return UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[positive] = np.maximum(x_b[positive], 0.0) / direction[positive]
        best = ratios.min()
        tied = np.flatnonzero(ratios <= best + 1e-12)
        leave = int(tied[np.argmin(basis[tied])])
        basis[leave] = enter
    raise RuntimeError("simplex did not terminate (pivot limit reached)")


def solve_lp(lp: LinearProgram) -> LPSolution:
    """Two-phase dense simplex with Bland's rule; statuses, never exceptions."""
    n = lp.c.shape[0]
    if n < 1:
        raise ValueError("linear program needs at least one variable")
    m_ub, m_eq = lp.a_ub.shape[0], lp.a_eq.shape[0]
    m = m_ub + m_eq
    n_slack = n + m_ub

    # Equality form: A_ub x - s = b_ub (s >= 0 surplus), A_eq x = b_eq.
    a = np.zeros((m, n_slack))
    a[:m_ub, :n] = lp.a_ub
    a[:m_ub, n:] = -np.eye(m_ub)
    a[m_ub:, :n] = lp.a_eq
    b = np.concatenate([lp.b_ub, lp.b_eq])
    neg = b < 0
    a[neg] *= -1.0
    b = np.abs(b)

    if m == 0:
        # Only nonnegativity: optimum is 0 unless some objective entry is positive.
        if (lp.c > LP_TOL).any():
            return LPSolution(status=UNBOUNDED, x=None, objective=None)
        return LPSolution(status=OPTIMAL, x=np.zeros(n), objective=0.0)

    # Phase 1: artificial basis, minimize the artificial mass.
    a1 = np.hstack([a, np.eye(m)])
    cost1 = np.concatenate([np.zeros(n_slack), np.ones(m)])
    basis = np.arange(n_slack, n_slack + m)
    status = _bland_pivots(a1, b, cost1, basis, allowed=n_slack + m)
    if status != OPTIMAL:   # phase 1 is bounded below by 0; anything else is numerical
        return LPSolution(status=INFEASIBLE, x=None, objective=None)
    x_b = np.linalg.solve(a1[:, basis], b)
    feas_tol = LP_TOL * max(1.0, float(np.abs(b).max(initial=0.0)))
    if float(cost1[basis] @ x_b) > feas_tol:
        return LPSolution(status=INFEASIBLE, x=None, objective=None)

    # Drive leftover artificials out of the basis; drop redundant rows.
    artificial = np.flatnonzero(basis >= n_slack)
    if artificial.size:
        weights = np.linalg.solve(a1[:, basis], a)   # B^-1 A over real columns
        keep = np.ones(m, dtype=bool)
        for i in artificial:
            options = np.flatnonzero(np.abs(weights[i]) > 1e-7)
            options = [j for j in options if j not in basis]
            if options:
                basis[i] = options[0]
                weights = np.linalg.solve(a1[:, basis], a)
            else:
                keep[i] = False
        if not keep.all():
            a, b = a[keep], b[keep]
            basis = basis[keep]
            m = a.shape[0]

    # Phase 2: minimize -c (i.e. maximize c) over the real variables.
    cost2 = np.zeros(n_slack)
    cost2[:n] = -lp.c
    status = _bland_pivots(a, b, cost2, basis, allowed=n_slack)
    if status == UNBOUNDED:
        return LPSolution(status=UNBOUNDED, x=None, objective=None)
    if status != OPTIMAL:
        return LPSolution(status=INFEASIBLE, x=None, objective=None)

    x_full = np.zeros(n_slack)
    x_full[basis] = np.linalg.solve(a[:, basis], b)
    x = x_full[:n]
    x[(x < 0) & (x > -1e-7)] = 0.0
    return LPSolution(status=OPTIMAL, x=x, objective=float(lp.c @ x))


# ---------------------------------------------------------------------------
# Modified-policy values and LP^i(pi)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ModificationValues:
    """Values of every deterministic modification of one player, canonical order."""

    player: int
    mods: list[MarkovModification]
    identity_index: int
    occupancies: np.ndarray   # (K, H, S, A)
    reward: np.ndarray        # (K,)  V^{r^i}(phi(k) o pi)
    constraint: np.ndarray    # (J, K) rows use g^{i,j} (playerwise) or g^j (common)
    thresholds: np.ndarray    # (J,)


def batch_modified_occupancies(game: ConstrainedMarkovGame, player: int,
                               policy: np.ndarray,
                               stacked_tables: np.ndarray) -> np.ndarray:
    """Occupancies of (phi(k) o pi) for a whole stack of modification tables.

    stacked_tables is (K, H, S, A_i, A_i); returns (K, H, S, A).  One einsum
    per timestep instead of K separate composition/propagation passes.
    """
    k, h = stacked_tables.shape[0], game.horizon
    occs = np.empty((k, h, game.num_states, game.num_joint_actions))
    composed0 = _compose_timestep(game, policy[0], stacked_tables[:, 0], player)
    occs[:, 0] = game.rho[None, :, None] * composed0
    for t in range(1, h):
        marginal = np.einsum("ksa,say->ky", occs[:, t - 1], game.kernel[t - 1])
        composed = _compose_timestep(game, policy[t], stacked_tables[:, t], player)
        occs[:, t] = marginal[:, :, None] * composed
    return occs


def modification_values(game: ConstrainedMarkovGame, player: int, policy: np.ndarray,
                        cap: int = DEFAULT_ENUM_CAP,
                        mods: list[MarkovModification] | None = None,
                        identity_index: int | None = None) -> ModificationValues:
    if mods is None:
        mods, identity_index = enumerate_det_modifications(game, player, cap=cap)
    stacked = np.stack([mod.tables for mod in mods])
    occs = batch_modified_occupancies(game, player, policy, stacked)
    flat = occs.reshape(len(mods), -1)
    reward = flat @ game.rewards[player].reshape(-1)
    j = game.num_constraints
    constraint = np.empty((j, len(mods)))
    thresholds = np.empty(j)
    for idx in range(j):
        constraint[idx] = flat @ game.constraint_table(player, idx).reshape(-1)
        thresholds[idx] = game.threshold(player, idx)
    return ModificationValues(player=player, mods=mods, identity_index=identity_index,
                              occupancies=occs, reward=reward,
                              constraint=constraint, thresholds=thresholds)


def build_best_modification_lp(game: ConstrainedMarkovGame, player: int,
                               policy: np.ndarray,
                               cap: int = DEFAULT_ENUM_CAP) -> LinearProgram:
    """The program: max sum_k alpha_k V^{r^i}(phi(k) o pi) over i-feasible alpha."""
    vals = modification_values(game, player, policy, cap=cap)
    return LinearProgram.build(
        c=vals.reward,
        a_ub=vals.constraint, b_ub=vals.thresholds,
        a_eq=np.ones((1, len(vals.mods))), b_eq=[1.0])


@dataclass(frozen=True)
class BestModification:
    status: str
    psi: float | None
    alpha: np.ndarray | None


def best_feasible_modification(game: ConstrainedMarkovGame, player: int,
                               policy: np.ndarray,
                               cap: int = DEFAULT_ENUM_CAP) -> BestModification:
    """Psi^i(pi) and one optimal weight vector (the Bland-rule vertex).

    Infeasible status is possible in playerwise mode when the policy itself
    is not i-feasible; for a feasible policy the identity weight vector is
    always feasible.
    """
    sol = solve_lp(build_best_modification_lp(game, player, policy, cap=cap))
    if sol.status != OPTIMAL:
        return BestModification(status=sol.status, psi=None, alpha=None)
    return BestModification(status=OPTIMAL, psi=sol.objective, alpha=sol.x)


# ---------------------------------------------------------------------------
# Hull membership and occupancy mixing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class HullMembership:
    member: bool
    alpha: np.ndarray | None
    residual: float | None


def hull_membership(point: np.ndarray, vertices: list[np.ndarray],
                    tol: float = HULL_TOL) -> HullMembership:
    """Is ``point`` a convex combination of ``vertices``, within tol per coordinate?

    Solves the feasibility question  sum_k alpha_k v_k = point, alpha in the
    simplex, by minimizing the worst per-coordinate residual e over (alpha, e);
    membership holds iff the optimum is at most ``tol``.  True members come
    back with residuals at floating-point noise, not at the tolerance.
    """
    target = np.asarray(point, dtype=np.float64).reshape(-1)
    mat = np.stack([np.asarray(v, dtype=np.float64).reshape(-1) for v in vertices], axis=1)
    dim, k = mat.shape
    ones = np.ones((dim, 1))
    c = np.zeros(k + 1)
    c[k] = -1.0                       # maximize -e, i.e. minimize the residual
    a_eq = np.zeros((1, k + 1))
    a_eq[0, :k] = 1.0
    lp = LinearProgram.build(
        c=c,
        a_ub=np.vstack([np.hstack([mat, ones]), np.hstack([-mat, ones])]),
        b_ub=np.concatenate([target, -target]),
        a_eq=a_eq, b_eq=[1.0])
    sol = solve_lp(lp)
    if sol.status != OPTIMAL:
        return HullMembership(member=False, alpha=None, residual=None)
    alpha = sol.x[:k]
    residual = float(np.abs(mat @ alpha - target).max())
    return HullMembership(member=residual <= tol, alpha=alpha, residual=residual)


def mix_occupancies(alpha: np.ndarray, occupancies) -> np.ndarray:
    """Entrywise convex combination of occupancy measures."""
    alpha = np.asarray(alpha, dtype=np.float64)
    stacked = np.asarray(occupancies, dtype=np.float64)
    if alpha.ndim != 1 or alpha.shape[0] != stacked.shape[0]:
        raise ValueError("alpha and occupancy list lengths differ")
    if alpha.min() < -LP_TOL or abs(alpha.sum() - 1.0) > LP_TOL:
        raise ValueError("alpha is not a probability vector")
    return np.tensordot(alpha, stacked, axes=1)


# ---------------------------------------------------------------------------
# Slack programs and LP regularity probes
# ---------------------------------------------------------------------------

def max_min_slack(constraint: np.ndarray, thresholds: np.ndarray
                  ) -> tuple[float, np.ndarray]:
    """max over alpha in the simplex of min_j (row_j . alpha - c_j).

    The epigraph variable is split into a nonnegative pair (u, v) with
    t = u - v, keeping the solver's x >= 0 convention.
    """
    j, k = constraint.shape
    c = np.zeros(k + 2)
    c[k], c[k + 1] = 1.0, -1.0
    a_ub = np.hstack([constraint, -np.ones((j, 1)), np.ones((j, 1))])
    a_eq = np.zeros((1, k + 2))
    a_eq[0, :k] = 1.0
    sol = solve_lp(LinearProgram.build(c=c, a_ub=a_ub, b_ub=thresholds,
                                       a_eq=a_eq, b_eq=[1.0]))
    if sol.status != OPTIMAL:
        raise RuntimeError(f"max-min slack program ended {sol.status}")
    return float(sol.objective), sol.x[:k]


def min_weight_feasible(constraint: np.ndarray, thresholds: np.ndarray,
                        epsilon: float) -> np.ndarray | None:
    """A feasible alpha with every weight >= epsilon, or None."""
    j, k = constraint.shape
    lp = LinearProgram.build(
        c=np.zeros(k),
        a_ub=np.vstack([constraint, np.eye(k)]),
        b_ub=np.concatenate([thresholds, np.full(k, epsilon)]),
        a_eq=np.ones((1, k)), b_eq=[1.0])
    sol = solve_lp(lp)
    return sol.x if sol.status == OPTIMAL else None


@dataclass(frozen=True)
class LPRegularityReport:
    """Per-policy regularity of the best-modification program.

    strictly_feasible  — a weight vector with all slacks > 0 exists;
    constant_rows      — constraint rows that are constant across k (the
                         degenerate beta * ones case);
    positive_weight_feasible / min_weight / positive_alpha — outcome of the
    epsilon sweep for a feasible alpha with all weights >= epsilon.
    """

    player: int
    strictly_feasible: bool
    max_min_slack: float
    strict_alpha: np.ndarray
    constant_rows: tuple[int, ...]
    positive_weight_feasible: bool
    min_weight: float | None
    positive_alpha: np.ndarray | None

    def as_dict(self) -> dict:
        return {
            "player": self.player,
            "strictly_feasible": self.strictly_feasible,
            "max_min_slack": self.max_min_slack,
            "constant_rows": list(self.constant_rows),
            "positive_weight_feasible": self.positive_weight_feasible,
            "min_weight": self.min_weight,
        }


EPSILON_SWEEP = tuple(10.0 ** -e for e in range(3, 10))   # 1e-3 .. 1e-9


def check_lp_regularity(game: ConstrainedMarkovGame, player: int, policy: np.ndarray,
                        cap: int = DEFAULT_ENUM_CAP) -> LPRegularityReport:
    vals = modification_values(game, player, policy, cap=cap)
    margin, strict_alpha = max_min_slack(vals.constraint, vals.thresholds)
    spread = vals.constraint.max(axis=1) - vals.constraint.min(axis=1)
    constant_rows = tuple(int(j) for j in np.flatnonzero(spread <= 1e-12))
    min_weight, positive_alpha = None, None
    for eps in EPSILON_SWEEP:
        alpha = min_weight_feasible(vals.constraint, vals.thresholds, eps)
        if alpha is not None:
            min_weight, positive_alpha = eps, alpha
            break
    return LPRegularityReport(
        player=player,
        strictly_feasible=margin > LP_TOL,
        max_min_slack=margin,
        strict_alpha=strict_alpha,
        constant_rows=constant_rows,
        positive_weight_feasible=positive_alpha is not None,
        min_weight=min_weight,
        positive_alpha=positive_alpha,
    )
