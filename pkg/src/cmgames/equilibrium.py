"""Equilibrium verification, Slater diagnostics and the fixed-point search.

A feasible joint Markov policy is a constrained correlated equilibrium when
no player's best feasible modification gains anything: for every i,

    Psi^i(pi) <= V^{r^i}(pi),

where Psi^i is the optimum of the best-feasible-modification program over
weight vectors on the deterministic Markov modifications.  By the
modification-class equivalences this certifies robustness against the full
history-dependent stochastic class as well.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import lp as lpmod
from .aux_mdps import build_mdp2, lift_reward, optimize_aux
from .dynamics import (
    VALUE_TOL,
    compute_occupancy,
    evaluate,
    occupancy_to_policy,
    slacks_of,
    validate_occupancy,
)
from .game import COMMON, ConstrainedMarkovGame, validate_policy
from .modifications import DEFAULT_ENUM_CAP, enumerate_det_modifications

BOUNDARY_TOL = 1e-9

CONSTRAINED_CE = "constrained_CE"
NOT_CE = "not_CE"
INFEASIBLE_POLICY = "infeasible_policy"


class NoFeasibleStartError(RuntimeError):
    """The occupancy polytope intersected with the constraint rows is empty."""


@dataclass(frozen=True)
class EquilibriumCertificate:
    policy: np.ndarray
    verdict: str
    tol: float
    slacks: np.ndarray               # (N, J)
    gaps: np.ndarray | None          # (N,) Psi^i - V^{r^i}, None when infeasible
    psi: np.ndarray | None
    reward_values: np.ndarray

    def as_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "tol": self.tol,
            "slacks": self.slacks.tolist(),
            "gaps": None if self.gaps is None else self.gaps.tolist(),
            "psi": None if self.psi is None else self.psi.tolist(),
            "reward_values": self.reward_values.tolist(),
        }


def verify_cce(game: ConstrainedMarkovGame, policy: np.ndarray, tol: float = BOUNDARY_TOL,
               cap: int = DEFAULT_ENUM_CAP) -> EquilibriumCertificate:
    """Certificate for the constrained-correlated-equilibrium conditions.

    Verdict is constrained_CE iff all slacks >= -tol and all gaps <= tol.
    """
    validate_policy(game, policy)
    occupancy = compute_occupancy(game, policy)
    values = evaluate(game, occupancy)
    slacks = slacks_of(game, occupancy)
    if slacks.size and slacks.min() < -tol:
        return EquilibriumCertificate(policy=policy, verdict=INFEASIBLE_POLICY, tol=tol,
                                      slacks=slacks, gaps=None, psi=None,
                                      reward_values=values.reward)
    psi = np.empty(game.num_players)
    for i in range(game.num_players):
        best = lpmod.best_feasible_modification(game, i, policy, cap=cap)
        if best.status != lpmod.OPTIMAL:
            raise RuntimeError(
                f"best-modification program for player {i} ended {best.status} "
                "on a feasible policy")
        psi[i] = best.psi
    gaps = psi - values.reward
    verdict = CONSTRAINED_CE if gaps.max() <= tol else NOT_CE
    return EquilibriumCertificate(policy=policy, verdict=verdict, tol=tol, slacks=slacks,
                                  gaps=gaps, psi=psi, reward_values=values.reward)


# ---------------------------------------------------------------------------
# Slater conditions
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StrongSlaterResult:
    player: int
    holds: bool
    margin: float               # max over modifications of the min slack
    alpha: np.ndarray

    def as_dict(self) -> dict:
        return {"player": self.player, "holds": self.holds, "margin": self.margin}


def check_strong_slater_at(game: ConstrainedMarkovGame, player: int, policy: np.ndarray,
                           cap: int = DEFAULT_ENUM_CAP) -> StrongSlaterResult:
    """Does some Markov modification make every constraint strictly slack?

    One max-min program over mixture weights answers all constraints at once
    (mixtures of deterministic modifications cover the stochastic class).
    """
    vals = lpmod.modification_values(game, player, policy, cap=cap)
    if vals.constraint.shape[0] == 0:
        return StrongSlaterResult(player=player, holds=True, margin=np.inf,
                                  alpha=np.eye(len(vals.mods))[vals.identity_index])
    margin, alpha = lpmod.max_min_slack(vals.constraint, vals.thresholds)
    return StrongSlaterResult(player=player, holds=margin > BOUNDARY_TOL,
                              margin=margin, alpha=alpha)


@dataclass(frozen=True)
class WeakSlaterResult:
    player: int
    applicable: bool              # policy sits on the feasible-set boundary
    min_slack: float
    condition1: bool | None
    condition2a: bool | None
    minima: tuple[float, ...]     # min over modifications of V^{g^j}, per j
    condition2b: bool | None
    min_weight: float | None
    positive_alpha: np.ndarray | None
    satisfied: bool | None
    branch: str | None

    def as_dict(self) -> dict:
        return {
            "player": self.player,
            "applicable": self.applicable,
            "min_slack": self.min_slack,
            "condition1": self.condition1,
            "condition2a": self.condition2a,
            "minima": list(self.minima),
            "condition2b": self.condition2b,
            "min_weight": self.min_weight,
            "satisfied": self.satisfied,
            "branch": self.branch,
        }


def check_weak_slater_at(game: ConstrainedMarkovGame, player: int, policy: np.ndarray,
                         cap: int = DEFAULT_ENUM_CAP) -> WeakSlaterResult:
    """Pointwise weakened Slater condition at a boundary policy (common mode).

    Condition 1: a strictly feasible modification exists.  Condition 2(a):
    every constraint can be pushed strictly below its threshold by some
    modification; 2(b): some feasible mixture has all weights positive.
    Policies off the boundary report "not applicable".
    """
    if game.constraint_mode != COMMON:
        raise ValueError("the weakened Slater condition is defined for common constraints")
    slacks = slacks_of(game, compute_occupancy(game, policy))[player]
    if slacks.size == 0:
        raise ValueError("game has no constraints")
    min_slack = float(slacks.min())
    if min_slack < -BOUNDARY_TOL:
        raise ValueError("policy is infeasible; the condition applies to boundary policies")
    if min_slack > BOUNDARY_TOL:
        return WeakSlaterResult(player=player, applicable=False, min_slack=min_slack,
                                condition1=None, condition2a=None, minima=(),
                                condition2b=None, min_weight=None, positive_alpha=None,
                                satisfied=None, branch=None)

    strong = check_strong_slater_at(game, player, policy, cap=cap)
    mdp = build_mdp2(game, player, policy)
    minima = []
    for j in range(game.num_constraints):
        lifted = lift_reward(game, player, policy, game.constraint_table(player, j))
        value, _ = optimize_aux(mdp, lifted, direction="min")
        minima.append(value)
    cond2a = all(v < game.threshold(player, j) - BOUNDARY_TOL for j, v in enumerate(minima))
    regularity = lpmod.check_lp_regularity(game, player, policy, cap=cap)
    cond2b = regularity.positive_weight_feasible
    satisfied = strong.holds or (cond2a and cond2b)
    branch = "condition1" if strong.holds else ("condition2" if (cond2a and cond2b) else "none")
    return WeakSlaterResult(player=player, applicable=True, min_slack=min_slack,
                            condition1=strong.holds, condition2a=cond2a,
                            minima=tuple(minima), condition2b=cond2b,
                            min_weight=regularity.min_weight,
                            positive_alpha=regularity.positive_alpha,
                            satisfied=satisfied, branch=branch)


@dataclass(frozen=True)
class SlaterFailure:
    sample: int
    player: int
    policy: np.ndarray
    detail: str


@dataclass(frozen=True)
class SlaterSample:
    """Pointwise result for one tested policy (the boundary policy in weak mode)."""

    sample: int
    policy: np.ndarray
    player_results: tuple[dict, ...]

    def as_dict(self) -> dict:
        return {"sample": self.sample, "policy": self.policy.tolist(),
                "player_results": list(self.player_results)}


@dataclass(frozen=True)
class SlaterReport:
    mode: str
    num_samples: int
    seed: int
    tested: int
    not_applicable: int
    feasible_set_empty: bool
    samples: tuple[SlaterSample, ...]
    failures: tuple[SlaterFailure, ...]

    @property
    def clean(self) -> bool:
        return len(self.failures) == 0

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "num_samples": self.num_samples,
            "seed": self.seed,
            "tested": self.tested,
            "not_applicable": self.not_applicable,
            "feasible_set_empty": self.feasible_set_empty,
            "samples": [s.as_dict() for s in self.samples],
            "failures": [
                {"sample": f.sample, "player": f.player, "detail": f.detail,
                 "policy": f.policy.tolist()} for f in self.failures],
        }


def _dirichlet_policy(game: ConstrainedMarkovGame, rng: np.random.Generator) -> np.ndarray:
    a = game.num_joint_actions
    rows = rng.dirichlet(np.ones(a), size=game.horizon * game.num_states)
    return rows.reshape(game.horizon, game.num_states, a)


def _min_slack(game: ConstrainedMarkovGame, occupancy: np.ndarray) -> float:
    slacks = slacks_of(game, occupancy)
    return float(slacks.min()) if slacks.size else np.inf


def _min_common_slack(game: ConstrainedMarkovGame, policy: np.ndarray) -> float:
    return _min_slack(game, compute_occupancy(game, policy))


def slater_sampling_harness(game: ConstrainedMarkovGame, mode: str, num_samples: int,
                            seed: int, cap: int = DEFAULT_ENUM_CAP) -> SlaterReport:
    """Sampled evidence for the Slater assumptions; a clean report is not a proof.

    Policies are drawn row-wise from Dirichlet(1) using numpy's PCG64
    generator.  In weak mode each sample is pulled to the feasible-set
    boundary by bisecting the minimum slack along the segment toward a
    feasible anchor policy.
    """
    if mode not in ("strong", "weak"):
        raise ValueError(f"mode must be 'strong' or 'weak', got {mode!r}")
    rng = np.random.default_rng(seed)
    failures: list[SlaterFailure] = []
    samples: list[SlaterSample] = []
    tested = 0
    not_applicable = 0
    feasible_empty = False

    if mode == "strong":
        for k in range(num_samples):
            policy = _dirichlet_policy(game, rng)
            tested += 1
            per_player = []
            for i in range(game.num_players):
                res = check_strong_slater_at(game, i, policy, cap=cap)
                per_player.append({"player": i, "holds": res.holds, "margin": res.margin})
                if not res.holds:
                    failures.append(SlaterFailure(
                        sample=k, player=i, policy=policy,
                        detail=f"no strictly feasible modification (margin {res.margin:.3g})"))
            samples.append(SlaterSample(sample=k, policy=policy,
                                        player_results=tuple(per_player)))
    else:
        if game.constraint_mode != COMMON:
            raise ValueError("weak mode needs common constraints")
        anchor_occ = feasible_occupancy(game)
        if anchor_occ is None:
            feasible_empty = True
        else:
            anchor = occupancy_to_policy(game, anchor_occ)
            for k in range(num_samples):
                sample = _dirichlet_policy(game, rng)
                boundary = _boundary_policy(game, anchor, sample)
                if boundary is None:
                    not_applicable += 1
                    continue
                tested += 1
                per_player = []
                for i in range(game.num_players):
                    res = check_weak_slater_at(game, i, boundary, cap=cap)
                    per_player.append({"player": i, "applicable": res.applicable,
                                       "satisfied": res.satisfied, "branch": res.branch})
                    if res.applicable and not res.satisfied:
                        failures.append(SlaterFailure(
                            sample=k, player=i, policy=boundary,
                            detail="boundary policy satisfies neither condition "
                                   f"(minima {list(res.minima)})"))
                samples.append(SlaterSample(sample=k, policy=boundary,
                                            player_results=tuple(per_player)))

    return SlaterReport(mode=mode, num_samples=num_samples, seed=seed, tested=tested,
                        not_applicable=not_applicable, feasible_set_empty=feasible_empty,
                        samples=tuple(samples), failures=tuple(failures))


def _boundary_policy(game: ConstrainedMarkovGame, anchor: np.ndarray,
                     sample: np.ndarray, iters: int = 80) -> np.ndarray | None:
    """Bisect the minimum slack along anchor->sample; None if no boundary met.

    The anchor is feasible.  If it already sits on the boundary it is the
    answer; if the sample is feasible too the whole segment may be interior,
    in which case the pointwise condition does not apply.
    """
    lo_val = _min_common_slack(game, anchor)
    if abs(lo_val) <= BOUNDARY_TOL:
        return anchor
    hi_val = _min_common_slack(game, sample)
    if hi_val > BOUNDARY_TOL:
        return None
    if abs(hi_val) <= BOUNDARY_TOL:
        return sample
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        mixed = (1.0 - mid) * anchor + mid * sample
        if _min_common_slack(game, mixed) >= 0.0:
            lo = mid
        else:
            hi = mid
    return (1.0 - lo) * anchor + lo * sample


# ---------------------------------------------------------------------------
# Feasible starting points and the fixed-point search
# ---------------------------------------------------------------------------

def feasible_occupancy(game: ConstrainedMarkovGame) -> np.ndarray | None:
    """A point of the occupancy polytope meeting all constraint rows, or None.

    Flow-consistency and constraint rows are linear in the occupancy, so this
    is a single phase-1 feasibility program.
    """
    h, s, a = game.horizon, game.num_states, game.num_joint_actions
    n = h * s * a

    def flat(t, state, action=None):
        base = t * s * a + state * a
        return base if action is None else base + action

    rows_eq = []
    rhs_eq = []
    for state in range(s):
        row = np.zeros(n)
        row[flat(0, state):flat(0, state) + a] = 1.0
        rows_eq.append(row)
        rhs_eq.append(game.rho[state])
    for t in range(1, h):
        for state in range(s):
            row = np.zeros(n)
            row[flat(t, state):flat(t, state) + a] = 1.0
            row[(t - 1) * s * a:t * s * a] -= game.kernel[t - 1][:, :, state].reshape(-1)
            rows_eq.append(row)
            rhs_eq.append(0.0)

    rows_ub = []
    rhs_ub = []
    for i in range(game.num_players):
        for j in range(game.num_constraints):
            rows_ub.append(game.constraint_table(i, j).reshape(-1))
            rhs_ub.append(game.threshold(i, j))
        if game.constraint_mode == COMMON:
            break   # identical rows for every player

    sol = lpmod.solve_lp(lpmod.LinearProgram.build(
        c=np.zeros(n),
        a_ub=np.array(rows_ub) if rows_ub else None,
        b_ub=np.array(rhs_ub) if rhs_ub else None,
        a_eq=np.array(rows_eq), b_eq=np.array(rhs_eq)))
    if sol.status != lpmod.OPTIMAL:
        return None
    occupancy = sol.x.reshape(h, s, a)
    validate_occupancy(game, occupancy)
    return occupancy


@dataclass(frozen=True)
class TraceStep:
    iteration: int
    gaps: np.ndarray
    chosen_player: int
    step_size: float
    min_slack: float


@dataclass(frozen=True)
class FixedPointTrace:
    steps: tuple[TraceStep, ...]
    iterates: tuple[np.ndarray, ...]
    converged: bool

    @property
    def iterations(self) -> int:
        return len(self.steps)

    def as_dict(self) -> dict:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "max_gap": [float(s.gaps.max()) for s in self.steps],
            "chosen_player": [s.chosen_player for s in self.steps],
            "step_size": [s.step_size for s in self.steps],
        }


@dataclass(frozen=True)
class FindResult:
    policy: np.ndarray
    occupancy: np.ndarray
    trace: FixedPointTrace
    certificate: EquilibriumCertificate


def find_cce(game: ConstrainedMarkovGame, initial: np.ndarray | None = None,
             max_iters: int = 10_000, tol: float = 1e-6,
             player_rule: str = "max-gap",
             cap: int = DEFAULT_ENUM_CAP) -> FindResult:
    """Damped iteration of the existence proof's point-to-set map.

    Each round solves every player's best-feasible-modification program at
    pi = Gamma(d), then moves d toward the chosen player's optimal mixture
    with step (Psi^i - V^{r^i}) / (2H); the step always lies in [0, 1/2] and
    every iterate stays feasible.  Convergence is not guaranteed, only
    existence is, so the returned certificate is authoritative, not the flag.
    """
    if game.constraint_mode != COMMON:
        raise ValueError("find_cce needs common constraints")
    if player_rule not in ("max-gap", "round-robin"):
        raise ValueError(f"player_rule must be 'max-gap' or 'round-robin', got {player_rule!r}")

    if initial is None:
        d = feasible_occupancy(game)
        if d is None:
            raise NoFeasibleStartError("the feasible occupancy polytope is empty")
    else:
        initial = np.asarray(initial, dtype=np.float64)
        want = (game.horizon, game.num_states, game.num_joint_actions)
        if initial.shape != want:
            raise ValueError(f"initial must be an (H, S, A) policy or occupancy, got {initial.shape}")
        try:
            validate_occupancy(game, initial)
            d = initial.copy()
        except ValueError:
            d = compute_occupancy(game, initial)   # validates it as a policy instead
        if _min_slack(game, d) < -VALUE_TOL:
            raise NoFeasibleStartError("the supplied starting point is infeasible")

    two_h = 2.0 * game.horizon
    steps: list[TraceStep] = []
    iterates: list[np.ndarray] = [d.copy()]
    converged = False
    policy = occupancy_to_policy(game, d)

    # The deterministic-modification family does not depend on the policy;
    # enumerate it once per player.
    families = [enumerate_det_modifications(game, i, cap=cap)
                for i in range(game.num_players)]

    for it in range(max_iters):
        policy = occupancy_to_policy(game, d)
        occ_pi = compute_occupancy(game, policy)
        reward_values = evaluate(game, occ_pi).reward
        gaps = np.empty(game.num_players)
        per_player = []
        for i in range(game.num_players):
            mods, identity_index = families[i]
            vals = lpmod.modification_values(game, i, policy, cap=cap,
                                             mods=mods, identity_index=identity_index)
            sol = lpmod.solve_lp(lpmod.LinearProgram.build(
                c=vals.reward, a_ub=vals.constraint, b_ub=vals.thresholds,
                a_eq=np.ones((1, len(vals.mods))), b_eq=[1.0]))
            if sol.status != lpmod.OPTIMAL:
                raise RuntimeError(f"best-modification program ended {sol.status} mid-search")
            gaps[i] = sol.objective - reward_values[i]
            per_player.append((sol.x, vals.occupancies))
        if gaps.max() <= tol:
            converged = True
            break
        chosen = int(np.argmax(gaps)) if player_rule == "max-gap" else it % game.num_players
        alpha, occupancies = per_player[chosen]
        mixed = lpmod.mix_occupancies(alpha, occupancies)
        lam = max(float(gaps[chosen]), 0.0) / two_h
        d = (1.0 - lam) * d + lam * mixed
        steps.append(TraceStep(iteration=it, gaps=gaps, chosen_player=chosen,
                               step_size=lam, min_slack=_min_slack(game, d)))
        iterates.append(d.copy())

    certificate = verify_cce(game, policy, tol=tol, cap=cap)
    trace = FixedPointTrace(steps=tuple(steps), iterates=tuple(iterates), converged=converged)
    return FindResult(policy=policy, occupancy=d, trace=trace, certificate=certificate)
