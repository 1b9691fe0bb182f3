""" Exact evaluation oracles and run monitors.

Everything here reads the true transition kernel of an instance, which the learner never does.
The module provides backward-induction values of fixed policies, best responses and the Nash
value, the per-episode duality gap and its running ledger, the true variance operator, and the
monitors that check a run against its high-probability events: confidence-set membership, the
martingale and variance-sum bounds, the optimism sandwich and the variance-offset bound.

Steps are 0-based; value tables have H + 1 rows and the last row is zero.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from nash_vtr.data_structures import FloatArray, Side, StateOwner
from nash_vtr.equilibrium import zero_sum_value
from nash_vtr.game_model import LinearMixtureMG, TurnBasedMG
from nash_vtr.learner import EpisodeRecord, RegressionState
from nash_vtr.linalg import ellipsoid_distance

logger = logging.getLogger(__name__)

WEAK_DUALITY_TOL: float = 1e-9
MONITOR_TOL: float = 1e-9


class EvaluationInvariantError(Exception):
    pass


@dataclass(frozen=True)
class ValueTable:
    """State values of shape (H + 1, S) with a zero last row, plus optional action values.

    Args:
        values: V[h, s].
        q: Q[h, s, a, b] when the oracle computes it.
    """

    values: FloatArray
    q: Optional[FloatArray] = None

    def initial(self, state: int) -> float:
        """Value at step 0 of `state`."""
        return float(self.values[0, state])


@dataclass(frozen=True)
class NashSolution:
    """Nash value table with per-(h, s) matrix-game equilibrium strategies."""

    values: ValueTable
    policy_max: FloatArray
    policy_min: FloatArray


def _backward(mg: LinearMixtureMG, reduce: Callable[[int, FloatArray], FloatArray]) -> ValueTable:
    kernel = mg.transition_tensor
    horizon, num_states = mg.horizon, mg.num_states
    values = np.zeros((horizon + 1, num_states))
    q = np.zeros(mg.reward.shape)
    for h in reversed(range(horizon)):
        q[h] = mg.reward[h] + kernel[h] @ values[h + 1]
        values[h] = reduce(h, q[h])
    return ValueTable(values=values, q=q)


def best_response_value_max(mg: LinearMixtureMG, policy_min: FloatArray) -> ValueTable:
    """Values of the max-player's best response to a fixed min-player policy.

    Args:
        mg: Game instance.
        policy_min: Min-player policy of shape (H, S, A_min).

    Returns:
        :obj:`ValueTable` holding V^{*,nu} and Q^{*,nu}.
    """
    policy_min = np.asarray(policy_min, dtype=float)
    return _backward(mg, lambda h, q: (q * policy_min[h][:, None, :]).sum(axis=-1).max(axis=-1))


def best_response_value_min(mg: LinearMixtureMG, policy_max: FloatArray) -> ValueTable:
    """Values of the min-player's best response to a fixed max-player policy.

    Args:
        mg: Game instance.
        policy_max: Max-player policy of shape (H, S, A_max).

    Returns:
        :obj:`ValueTable` holding V^{pi,*} and Q^{pi,*}.
    """
    policy_max = np.asarray(policy_max, dtype=float)
    return _backward(mg, lambda h, q: (q * policy_max[h][:, :, None]).sum(axis=1).min(axis=-1))


def policy_value(mg: LinearMixtureMG, policy_max: FloatArray, policy_min: FloatArray) -> ValueTable:
    """Values of a pair of independent Markov policies."""
    policy_max = np.asarray(policy_max, dtype=float)
    policy_min = np.asarray(policy_min, dtype=float)
    return _backward(mg, lambda h, q: np.einsum("sa,sab,sb->s", policy_max[h], q, policy_min[h]))


def joint_policy_value(mg: LinearMixtureMG, joint: FloatArray) -> ValueTable:
    """Values of a correlated Markov policy given as per-state joint tables of shape (H, S, A, B)."""
    joint = np.asarray(joint, dtype=float)
    return _backward(mg, lambda h, q: (q * joint[h]).sum(axis=(-2, -1)))


def nash_value(mg: LinearMixtureMG) -> NashSolution:
    """Nash value by backward induction with an exact matrix-game solve at every (h, s).

    Raises:
        LPSolveError: If a matrix-game program fails.
    """
    horizon, num_states = mg.horizon, mg.num_states
    policy_max = np.zeros((horizon, num_states, mg.num_actions_max))
    policy_min = np.zeros((horizon, num_states, mg.num_actions_min))

    def reduce(h: int, q: FloatArray) -> FloatArray:
        out = np.zeros(num_states)
        for s in range(num_states):
            solution = zero_sum_value(q[s])
            out[s] = solution.value
            policy_max[h, s] = solution.row_strategy
            policy_min[h, s] = solution.col_strategy
        return out

    table = _backward(mg, reduce)
    return NashSolution(values=table, policy_max=policy_max, policy_min=policy_min)


def turn_based_value(tb: TurnBasedMG) -> ValueTable:
    """Minimax value of a turn-based game: max at max-owned states, min at min-owned states."""
    kernel = tb.transition_tensor
    is_max = np.array([o == StateOwner.MAX for o in tb.state_owner])
    values = np.zeros((tb.horizon + 1, tb.num_states))
    q = np.zeros(tb.reward.shape)
    for h in reversed(range(tb.horizon)):
        q[h] = tb.reward[h] + kernel[h] @ values[h + 1]
        values[h] = np.where(is_max, q[h].max(axis=-1), q[h].min(axis=-1))
    return ValueTable(values=values, q=q)


def episode_gap(mg: LinearMixtureMG, policy_max: FloatArray, policy_min: FloatArray, state: int) -> float:
    """Duality gap V^{*,nu}(s) - V^{pi,*}(s) of a policy pair at step 0."""
    upper = best_response_value_max(mg, policy_min).initial(state)
    lower = best_response_value_min(mg, policy_max).initial(state)
    return upper - lower


def _next_distribution(mg: LinearMixtureMG, h: int, s: int, a: int, b: int) -> FloatArray:
    return mg.transition_tensor[h, s, a, b]


def true_variance(mg: LinearMixtureMG, h: int, s: int, a: int, b: int, values: FloatArray) -> float:
    """Variance of `values(s')` under the true kernel, as second moment minus squared mean."""
    p = _next_distribution(mg, h, s, a, b)
    values = np.asarray(values, dtype=float)
    return max(float(p @ values**2) - float(p @ values) ** 2, 0.0)


def true_variance_centered(mg: LinearMixtureMG, h: int, s: int, a: int, b: int, values: FloatArray) -> float:
    """Variance of `values(s')` under the true kernel, as the mean squared deviation."""
    p = _next_distribution(mg, h, s, a, b)
    values = np.asarray(values, dtype=float)
    return float(p @ (values - p @ values) ** 2)


@dataclass(frozen=True)
class MembershipCheck:
    """Whether the true parameters lie in both first-moment confidence sets at every step.

    `margin` is the radius minus the largest ellipsoid distance; it is negative when outside.
    """

    member: bool
    margin: float


def confidence_membership(reg: RegressionState, theta_star: FloatArray, beta0: float) -> MembershipCheck:
    """Check ||Sigma^{1/2}(theta* - theta_hat)|| <= beta0 for both sides at every step."""
    worst = max(
        ellipsoid_distance(reg.step(side, h).cov0, reg.step(side, h).theta0, theta_star[h])
        for side in Side
        for h in range(reg.horizon)
    )
    margin = beta0 - worst
    return MembershipCheck(member=margin >= -MONITOR_TOL, margin=margin)


def martingale_bound(horizon: int, steps: int, delta: float) -> float:
    """Right-hand side 8H sqrt(2T ln(H/delta)) of the martingale event."""
    return 8.0 * horizon * math.sqrt(2.0 * steps * math.log(horizon / delta))


def variance_sum_bound(horizon: int, steps: int, delta: float) -> float:
    """Right-hand side 3(HT + H^3 ln(1/delta)) of the variance-sum event."""
    return 3.0 * (horizon * steps + horizon**3 * math.log(1.0 / delta))


@dataclass(frozen=True)
class EventMargins:
    """Per-episode slack of both events, evaluated with T = kH."""

    e1_margin: float
    e2_margin: float


@dataclass
class EventMonitor:
    """Streaming evaluation of the martingale and variance-sum events over a run.

    Args:
        mg: Game the run is played on (a turn-based run is monitored on its embedding).
        delta: Confidence level.
    """

    mg: LinearMixtureMG
    delta: float
    episodes: int = 0
    e1_sums: FloatArray = field(init=False, repr=False)
    e1_peak: float = field(init=False, default=-math.inf)
    e2_sum: float = field(init=False, default=0.0)
    e2_sum_centered: float = field(init=False, default=0.0)
    margins: List[EventMargins] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        self.e1_sums = np.zeros(self.mg.horizon)

    def observe(self, record: EpisodeRecord) -> EventMargins:
        """Fold one episode into the running sums and return its margins."""
        mg = self.mg
        horizon = mg.horizon
        gap = record.v_up - record.v_lo
        mixed = joint_policy_value(mg, record.joint).values
        terms = np.zeros(horizon)
        for h in range(horizon):
            s, a, b = record.states[h], record.actions_max[h], record.actions_min[h]
            s_next = record.states[h + 1]
            terms[h] = float(_next_distribution(mg, h, s, a, b) @ gap[h + 1]) - gap[h + 1, s_next]
            self.e2_sum += true_variance(mg, h, s, a, b, mixed[h + 1])
            self.e2_sum_centered += true_variance_centered(mg, h, s, a, b, mixed[h + 1])
        # Suffix sums: entry h' collects the terms of steps h >= h'.
        self.e1_sums += np.cumsum(terms[::-1])[::-1]
        self.e1_peak = max(self.e1_peak, float(self.e1_sums.max()))
        self.episodes += 1

        steps = self.episodes * horizon
        margins = EventMargins(
            e1_margin=martingale_bound(horizon, steps, self.delta) - float(self.e1_sums.max()),
            e2_margin=variance_sum_bound(horizon, steps, self.delta) - self.e2_sum,
        )
        self.margins.append(margins)
        return margins

    def e1_holds(self, total_steps: Optional[int] = None) -> bool:
        """Whether every prefix sum stays below the martingale bound at T = `total_steps` (default KH)."""
        steps = self.episodes * self.mg.horizon if total_steps is None else total_steps
        return self.e1_peak <= martingale_bound(self.mg.horizon, steps, self.delta) + MONITOR_TOL

    def e2_holds(self, total_steps: Optional[int] = None) -> bool:
        """Whether the variance sum stays below its bound at T = `total_steps` (default KH)."""
        steps = self.episodes * self.mg.horizon if total_steps is None else total_steps
        return self.e2_sum <= variance_sum_bound(self.mg.horizon, steps, self.delta) + MONITOR_TOL


@dataclass(frozen=True)
class EventReport:
    """Run-level outcome of the event monitors."""

    membership_holds: Optional[bool]
    e1_holds: bool
    e2_holds: bool
    margins: Tuple[EventMargins, ...]
    e2_sum: float
    e2_sum_centered: float


def event_monitors(
    records: Sequence[EpisodeRecord],
    mg: LinearMixtureMG,
    delta: float,
    memberships: Optional[Sequence[MembershipCheck]] = None,
) -> EventReport:
    """Evaluate the martingale and variance-sum events (and optionally membership) over a run.

    Args:
        records: Episode records in order.
        mg: Game the run was played on.
        delta: Confidence level.
        memberships: Per-episode membership checks taken before each episode was planned.

    Returns:
        :obj:`EventReport`.
    """
    monitor = EventMonitor(mg=mg, delta=delta)
    for record in records:
        monitor.observe(record)
    membership = None if memberships is None else all(m.member for m in memberships)
    return EventReport(
        membership_holds=membership,
        e1_holds=monitor.e1_holds(),
        e2_holds=monitor.e2_holds(),
        margins=tuple(monitor.margins),
        e2_sum=monitor.e2_sum,
        e2_sum_centered=monitor.e2_sum_centered,
    )


@dataclass(frozen=True)
class SandwichCheck:
    """Outcome of the optimism sandwich; `worst_violation` is positive when it fails.

    `q_checked` is set when the per-cell Q-version was evaluated in addition to the initial state.
    """

    holds: bool
    worst_violation: float
    q_checked: bool = False


def optimism_sandwich(mg: LinearMixtureMG, record: EpisodeRecord, epsilon: float, tol: float = 1e-7) -> SandwichCheck:
    """Check that the planning values bracket the best-response values of the played policies.

    At the initial state: v_lo - (H+1)eps <= V^{pi,*} <= V^{*,nu} <= v_up + (H+1)eps. When the
    record carries simultaneous-move Q tables, the Q-version with (H-h)eps is checked at every
    cell and step as well.

    Args:
        mg: Game the run was played on.
        record: Episode record.
        epsilon: Equilibrium tolerance used by the learner.
        tol: Numerical tolerance.

    Returns:
        :obj:`SandwichCheck`.
    """
    horizon = mg.horizon
    s = record.initial_state
    upper = best_response_value_max(mg, record.policy_min)
    lower = best_response_value_min(mg, record.policy_max)
    slack = (horizon + 1) * epsilon
    violations = [
        record.v_lo_init - slack - lower.initial(s),
        lower.initial(s) - upper.initial(s),
        upper.initial(s) - record.v_up_init - slack,
    ]
    tables = record.tables
    q_checked = False
    if tables is not None and tables.q_up.ndim == 4 and upper.q is not None and lower.q is not None:
        q_checked = True
        step_slack = (horizon - np.arange(horizon))[:, None, None, None] * epsilon
        violations.append(float((tables.q_lo - step_slack - lower.q).max()))
        violations.append(float((lower.q - upper.q).max()))
        violations.append(float((upper.q - tables.q_up - step_slack).max()))
    worst = max(violations)
    return SandwichCheck(holds=worst <= tol, worst_violation=worst, q_checked=q_checked)


@dataclass(frozen=True)
class VarianceOffsetCheck:
    """Counts of visited (step, side) pairs where |var_est - true variance| <= offset."""

    checked: int
    within: int

    @property
    def fraction(self) -> float:
        """`float`: Share of checked pairs within the offset, 1.0 when nothing was checked."""
        return self.within / self.checked if self.checked else 1.0


def variance_offset_check(mg: LinearMixtureMG, record: EpisodeRecord) -> VarianceOffsetCheck:
    """Compare each recorded variance estimate with the true variance of the same value function."""
    checked = within = 0
    for h, diag in enumerate(record.diagnostics):
        s, a, b = record.states[h], record.actions_max[h], record.actions_min[h]
        for side, values in ((Side.MAX, record.v_up), (Side.MIN, record.v_lo)):
            truth = true_variance(mg, h, s, a, b, values[h + 1])
            checked += 1
            if abs(diag.var_est[side.index] - truth) <= diag.offset[side.index] + MONITOR_TOL:
                within += 1
    return VarianceOffsetCheck(checked=checked, within=within)


@dataclass(frozen=True)
class Certificate:
    """Episode whose policy pair has the smallest duality gap (1-based) and that gap."""

    episode: int
    gap: float


def policy_certificate(gaps: Union[Sequence[float], FloatArray]) -> Certificate:
    """Pick the episode with the smallest gap (earliest on ties).

    Raises:
        ValueError: If no episode was played.
    """
    gaps = np.asarray(gaps, dtype=float)
    if gaps.size == 0:
        raise ValueError("`gaps` must contain at least one episode")
    k = int(np.argmin(gaps))
    return Certificate(episode=k + 1, gap=float(gaps[k]))


@dataclass
class RegretLedger:
    """Running record of per-episode duality gaps."""

    gaps: List[float] = field(default_factory=list)
    _total: float = field(default=0.0, repr=False)

    def record(self, gap: float) -> float:
        """Append a gap and return the cumulative regret.

        Raises:
            EvaluationInvariantError: If the gap violates weak duality.
        """
        if gap < -WEAK_DUALITY_TOL:
            raise EvaluationInvariantError(f"Episode {len(self.gaps) + 1} has negative duality gap {gap:.3e}")
        self.gaps.append(float(gap))
        self._total += float(gap)
        return self._total

    @property
    def regret(self) -> float:
        """`float`: Cumulative regret so far, accumulated in episode order."""
        return self._total

    @property
    def cumulative(self) -> FloatArray:
        """Prefix sums of the gaps."""
        return np.cumsum(np.asarray(self.gaps, dtype=float))

    def certificate(self) -> Certificate:
        """Online-to-batch certificate of the recorded gaps."""
        return policy_certificate(self.gaps)
