""" Optimistic self-play learning with value-targeted regression.

This module implements the learning loop for linear mixture Markov games. Every episode the
learner plans backwards with an optimistic (max-player) and a pessimistic (min-player) action
value table, extracts a per-state equilibrium policy, plays one trajectory, and after every step
refits two weighted ridge regressions per player side: one on the integrated next-state value
and one on its square, whose difference drives the variance-aware sample weights.

The simultaneous-move loop (`run_episode`) plans with an epsilon-CCE at every state. The
turn-based loop (`run_turn_based_episode`) replaces the CCE with greedy argmax/argmin policies at
the states each player owns. `NashVTRLearner` wraps either loop in a stateful session.

Steps are 0-based throughout; value tables carry H + 1 rows with a zero terminal row.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from nash_vtr.data_structures import (
    AlgorithmKind,
    BetaConstants,
    FloatArray,
    Side,
    StateOwner,
    VarianceFloor,
)
from nash_vtr.equilibrium import CCESolver, JointDistribution, epsilon_cce, is_distribution, marginals
from nash_vtr.game_model import (
    LinearMixtureMG,
    TurnBasedMG,
    integrate_features,
    phi_v_table,
    sample_index,
)
from nash_vtr.linalg import (
    CorrelationVector,
    RegressionHistory,
    WeightedCovariance,
    batch_ridge_solution,
    bonus_norm,
    bonus_norms,
    rank_one_update,
    ridge_solve,
)

logger = logging.getLogger(__name__)

PlayableGame = Union[LinearMixtureMG, TurnBasedMG]


@dataclass(frozen=True)
class LearnerConfig:
    """Hyper-parameters of a learning run.

    Args:
        lam: Ridge regularizer.
        delta: Confidence level in (0, 1).
        horizon: Episode length H.
        episodes: Planned number of episodes K (enters the second confidence radius).
        cce_epsilon: Equilibrium tolerance.
        param_bound: Parameter norm bound B.
        variance_floor: Lower clip of the variance surrogate.
        beta_constants: Logarithmic constants of the confidence radii.
        beta_scale: Multiplier applied to every confidence radius.
        initial_state: Initial-state distribution; state 0 is used when omitted.
        record_history: Keep every regression sample for auditing.
        retain_tables: Attach the full planning tables to every episode record.
    """

    lam: float
    delta: float
    horizon: int
    episodes: int
    cce_epsilon: float
    param_bound: float
    variance_floor: VarianceFloor = VarianceFloor.MAIN_TEXT
    beta_constants: BetaConstants = BetaConstants.LEMMA
    beta_scale: float = 1.0
    initial_state: Optional[Tuple[float, ...]] = None
    record_history: bool = False
    retain_tables: bool = False

    def __post_init__(self) -> None:
        if self.lam <= 0:
            raise ValueError(f"`lam` must be positive, got {self.lam}")
        if not 0 < self.delta < 1:
            raise ValueError(f"`delta` must lie in (0, 1), got {self.delta}")
        if self.cce_epsilon < 0:
            raise ValueError(f"`cce_epsilon` must be nonnegative, got {self.cce_epsilon}")
        if self.horizon < 1 or self.episodes < 1:
            raise ValueError("`horizon` and `episodes` must be positive")
        if self.param_bound <= 0:
            raise ValueError(f"`param_bound` must be positive, got {self.param_bound}")
        if self.beta_scale < 0:
            raise ValueError(f"`beta_scale` must be nonnegative, got {self.beta_scale}")
        if self.initial_state is not None:
            dist = np.asarray(self.initial_state, dtype=float)
            if dist.ndim != 1 or not is_distribution(dist):
                raise ValueError("`initial_state` must be a probability vector over states")
            object.__setattr__(self, "initial_state", tuple(float(p) for p in dist))


class BetaSchedule(NamedTuple):
    beta0: float
    beta1: float
    beta2: float


@dataclass
class StepRegression:
    """Both regression systems of one player side at one step.

    The first system regresses the integrated next-state value with variance weights, the second
    regresses the integrated squared value with unit weights.
    """

    cov0: WeightedCovariance
    b0: CorrelationVector
    theta0: FloatArray
    cov1: WeightedCovariance
    b1: CorrelationVector
    theta1: FloatArray
    history0: Optional[RegressionHistory] = None
    history1: Optional[RegressionHistory] = None

    @classmethod
    def initial(cls, dim: int, lam: float, record_history: bool = False) -> "StepRegression":
        """Create one step with both covariances at `lam * I` and zero correlation vectors."""
        return cls(
            cov0=WeightedCovariance.identity(dim, lam),
            b0=CorrelationVector.zeros(dim),
            theta0=np.zeros(dim),
            cov1=WeightedCovariance.identity(dim, lam),
            b1=CorrelationVector.zeros(dim),
            theta1=np.zeros(dim),
            history0=RegressionHistory() if record_history else None,
            history1=RegressionHistory() if record_history else None,
        )


@dataclass
class RegressionState:
    """Per-side, per-step regression statistics of a learning run."""

    dim: int
    horizon: int
    lam: float
    steps: Dict[Side, List[StepRegression]] = field(default_factory=dict)

    @classmethod
    def initial(cls, dim: int, horizon: int, lam: float, record_history: bool = False) -> "RegressionState":
        """Create the state with covariances `lam * I` and zero vectors everywhere."""
        steps = {side: [StepRegression.initial(dim, lam, record_history) for _ in range(horizon)] for side in Side}
        return cls(dim=dim, horizon=horizon, lam=lam, steps=steps)

    def step(self, side: Side, h: int) -> StepRegression:
        """Regression statistics of `side` at step `h`."""
        return self.steps[side][h]

    def thetas(self, side: Side) -> FloatArray:
        """Stacked first-moment estimates of one side, shape (H, d)."""
        return np.stack([s.theta0 for s in self.steps[side]])


@dataclass
class PlanningTables:
    """Output of one planning pass.

    Simultaneous games carry Q tables of shape (H, S, A, B); turn-based games carry (H, S, A).
    `joint` always has shape (H, S, A_max, A_min) and is a point mass in the turn-based case.
    """

    q_up: FloatArray
    q_lo: FloatArray
    v_up: FloatArray
    v_lo: FloatArray
    joint: FloatArray
    policy_max: FloatArray
    policy_min: FloatArray
    bonus_up: FloatArray
    bonus_lo: FloatArray

    def joint_at(self, h: int, s: int) -> JointDistribution:
        return JointDistribution(table=self.joint[h, s])


@dataclass(frozen=True)
class StepDiagnostics:
    """Variance estimate, offset and weight of both sides at one step, indexed by `Side.index`."""

    var_est: Tuple[float, float]
    offset: Tuple[float, float]
    sigma_bar: Tuple[float, float]


@dataclass(frozen=True)
class EpisodeRecord:
    """Everything observed and decided in one episode.

    Args:
        episode: 1-based episode index k.
        states: Visited states s_0..s_H, length H + 1.
        actions_max: Max-player actions, length H.
        actions_min: Min-player actions, length H.
        v_up_init: Optimistic value at the initial state.
        v_lo_init: Pessimistic value at the initial state.
        bonus_up: Optimistic bonus at every visited step.
        bonus_lo: Pessimistic bonus at every visited step.
        betas: Confidence radii used by this episode.
        diagnostics: Per-step regression diagnostics.
        v_up: Optimistic value table, shape (H + 1, S).
        v_lo: Pessimistic value table, shape (H + 1, S).
        policy_max: Max-player policy, shape (H, S, A_max).
        policy_min: Min-player policy, shape (H, S, A_min).
        joint: Per-state joint policy, shape (H, S, A_max, A_min).
        tables: Full planning tables when retained.
    """

    episode: int
    states: Tuple[int, ...]
    actions_max: Tuple[int, ...]
    actions_min: Tuple[int, ...]
    v_up_init: float
    v_lo_init: float
    bonus_up: Tuple[float, ...]
    bonus_lo: Tuple[float, ...]
    betas: BetaSchedule
    diagnostics: Tuple[StepDiagnostics, ...]
    v_up: FloatArray
    v_lo: FloatArray
    policy_max: FloatArray
    policy_min: FloatArray
    joint: FloatArray
    tables: Optional[PlanningTables] = None

    @property
    def initial_state(self) -> int:
        """`int`: State the episode started from."""
        return self.states[0]


def beta_schedule(
    k: int,
    dim: int,
    horizon: int,
    lam: float,
    delta: float,
    bound: float,
    episodes: Optional[int] = None,
    constants: BetaConstants = BetaConstants.LEMMA,
    scale: float = 1.0,
) -> BetaSchedule:
    """Confidence radii of episode `k`.

    Natural logarithms throughout. The second radius depends on the planned number of episodes
    `episodes` (K) under the lemma constants; it defaults to `k` when K is not known.

    Args:
        k: 1-based episode index.
        dim: Feature dimension d.
        horizon: Episode length H.
        lam: Ridge regularizer.
        delta: Confidence level.
        bound: Parameter norm bound B.
        episodes: Planned number of episodes K.
        constants: Which logarithmic constants to use.
        scale: Multiplier applied to all three radii.

    Returns:
        :obj:`BetaSchedule` with radii (beta0, beta1, beta2).

    Raises:
        ValueError: If `k` is not positive.
    """
    if k < 1:
        raise ValueError(f"`k` must be at least 1, got {k}")
    total = k if episodes is None else episodes
    h4 = float(horizon) ** 4
    tail = math.sqrt(lam) * bound
    growth = math.log(1.0 + k / lam)
    if constants == BetaConstants.LEMMA:
        log_k = math.log(4.0 * k * k * horizon / delta)
        log_d = max(math.log(4.0 * k * k * horizon / (dim * delta)), 0.0)
        growth_h = math.log(1.0 + total * h4 / (dim * lam))
    elif constants == BetaConstants.PROOF:
        log_k = math.log(8.0 * k * k * horizon / delta)
        log_d = log_k
        growth_h = math.log(1.0 + k * h4 / (dim * lam))
    else:
        raise ValueError(f"Unsupported beta constants {constants}")

    beta0 = 16.0 * math.sqrt(dim * growth * log_k) + 8.0 * math.sqrt(dim) * log_k + tail
    beta1 = 16.0 * math.sqrt(dim * h4 * growth_h * log_d) + 8.0 * horizon**2 * log_k + tail
    beta2 = 16.0 * dim * math.sqrt(growth * log_k) + 8.0 * math.sqrt(dim) * log_k + tail
    return BetaSchedule(scale * beta0, scale * beta1, scale * beta2)


def cce_epsilon_default(horizon: int, episodes: int) -> float:
    """Default equilibrium tolerance H / sqrt(KH) = sqrt(H / K)."""
    if horizon < 1 or episodes < 1:
        raise ValueError("`horizon` and `episodes` must be positive")
    return math.sqrt(horizon / episodes)


def _side_values(tables: PlanningTables, side: Side) -> FloatArray:
    return tables.v_up if side == Side.MAX else tables.v_lo


def _cell_index(game: PlayableGame, s: int, a: int, b: int) -> Tuple[int, ...]:
    # Turn-based cells are indexed by the acting player's action only.
    if isinstance(game, TurnBasedMG):
        return (s, a if game.state_owner[s] == StateOwner.MAX else b)
    return (s, a, b)


def _cell_features(game: PlayableGame, s: int, a: int, b: int) -> FloatArray:
    # (S', d) slice of the features at one visited cell.
    return game.features[(slice(None),) + _cell_index(game, s, a, b)]


def _mean(phi: FloatArray, theta: FloatArray) -> FloatArray:
    # Elementwise product then a reduction over the last axis keeps every cell independent.
    return (phi * theta).sum(axis=-1)


def variance_estimate(
    reg: RegressionState, game: PlayableGame, values_next: FloatArray, h: int, s: int, a: int, b: int, side: Side
) -> float:
    """Estimated variance of the next-state value at one cell.

    The clipped second-moment estimate minus the square of the clipped first-moment estimate;
    the result may be negative.

    Args:
        reg: Regression state.
        game: Game whose features are integrated.
        values_next: Next-step value of `side`, shape (S,).
        h: Step index.
        s: State.
        a: Max-player action.
        b: Min-player action (ignored where the max-player acts alone).
        side: Player side whose estimates are used.
    """
    horizon = reg.horizon
    step = reg.step(side, h)
    cell = _cell_features(game, s, a, b)
    phi = integrate_features(cell, values_next)
    phi_sq = integrate_features(cell, values_next**2)
    second = float(np.clip(_mean(phi_sq, step.theta1), 0.0, horizon**2))
    first = float(np.clip(_mean(phi, step.theta0), -horizon, horizon))
    return second - first**2


def offset_e(
    reg: RegressionState,
    game: PlayableGame,
    values_next: FloatArray,
    h: int,
    s: int,
    a: int,
    b: int,
    beta1: float,
    beta2: float,
    side: Side,
) -> float:
    """Confidence offset that turns the variance estimate into an upper bound, in [0, 2H²]."""
    horizon = reg.horizon
    step = reg.step(side, h)
    cell = _cell_features(game, s, a, b)
    phi = integrate_features(cell, values_next)
    phi_sq = integrate_features(cell, values_next**2)
    second = min(horizon**2, beta1 * bonus_norm(step.cov1, phi_sq))
    first = min(horizon**2, 2.0 * horizon * beta2 * bonus_norm(step.cov0, phi))
    return float(second + first)


def sigma_bar(
    var_est: float, offset: float, horizon: int, dim: int, floor: VarianceFloor = VarianceFloor.MAIN_TEXT
) -> float:
    """Regression weight scale sqrt(max(floor, var_est + offset))."""
    return math.sqrt(max(floor.floor(horizon, dim), var_est + offset))


def _update_side(
    reg: RegressionState,
    game: PlayableGame,
    values_next: FloatArray,
    h: int,
    s: int,
    a: int,
    b: int,
    s_next: int,
    beta1: float,
    beta2: float,
    side: Side,
    floor: VarianceFloor,
) -> Tuple[float, float, float]:
    var = variance_estimate(reg, game, values_next, h, s, a, b, side)
    offset = offset_e(reg, game, values_next, h, s, a, b, beta1, beta2, side)
    scale = sigma_bar(var, offset, reg.horizon, reg.dim, floor)

    step = reg.step(side, h)
    cell = _cell_features(game, s, a, b)
    phi = integrate_features(cell, values_next)
    phi_sq = integrate_features(cell, values_next**2)
    target = float(values_next[s_next])
    weight = scale**-2
    if np.any(phi):
        rank_one_update(step.cov0, phi, weight)
        step.b0.accumulate(phi, target, weight)
        if step.history0 is not None:
            step.history0.append(phi, target, weight)
    if np.any(phi_sq):
        rank_one_update(step.cov1, phi_sq, 1.0)
        step.b1.accumulate(phi_sq, target**2, 1.0)
        if step.history1 is not None:
            step.history1.append(phi_sq, target**2, 1.0)
    step.theta0 = ridge_solve(step.cov0, step.b0)
    step.theta1 = ridge_solve(step.cov1, step.b1)
    return var, offset, scale


def update_after_step(
    reg: RegressionState,
    game: PlayableGame,
    tables: PlanningTables,
    h: int,
    s: int,
    a: int,
    b: int,
    s_next: int,
    beta1: float,
    beta2: float,
    floor: VarianceFloor = VarianceFloor.MAIN_TEXT,
) -> StepDiagnostics:
    """Refit both regression systems of both sides after observing one transition.

    The max side regresses the optimistic next-step value and the min side the pessimistic one.
    Zero feature vectors leave their system unchanged.

    Args:
        reg: Regression state, updated in place.
        game: Game whose features are integrated.
        tables: Planning tables of the current episode.
        h: Step index.
        s: State.
        a: Max-player action.
        b: Min-player action.
        s_next: Observed next state.
        beta1: Second-moment confidence radius.
        beta2: First-moment radius used inside the offset.
        floor: Lower clip of the variance surrogate.

    Returns:
        :obj:`StepDiagnostics` of the update.
    """
    if not 0 <= s_next < game.num_states:
        raise IndexError(f"Next state `s_next`={s_next} out of range [0, {game.num_states})")
    results = [
        _update_side(reg, game, _side_values(tables, side)[h + 1], h, s, a, b, s_next, beta1, beta2, side, floor)
        for side in (Side.MAX, Side.MIN)
    ]
    return StepDiagnostics(
        var_est=(results[0][0], results[1][0]),
        offset=(results[0][1], results[1][1]),
        sigma_bar=(results[0][2], results[1][2]),
    )


def _bounded_q(
    game: PlayableGame, reg: RegressionState, values_next: FloatArray, h: int, side: Side, beta0: float
) -> Tuple[FloatArray, FloatArray]:
    step = reg.step(side, h)
    phi = phi_v_table(game, values_next)
    bonus = beta0 * bonus_norms(step.cov0, phi)
    sign = 1.0 if side == Side.MAX else -1.0
    q = np.clip(game.reward[h] + _mean(phi, step.theta0) + sign * bonus, -reg.horizon, reg.horizon)
    return q, bonus


def build_q_tables(
    mg: LinearMixtureMG,
    reg: RegressionState,
    beta0: float,
    epsilon: float,
    solver: CCESolver = epsilon_cce,
) -> PlanningTables:
    """Plan backwards with optimistic and pessimistic Q tables and per-state equilibria.

    Args:
        mg: Simultaneous-move game (features and rewards only; the kernel is never read).
        reg: Regression state.
        beta0: First-moment confidence radius.
        epsilon: Equilibrium tolerance.
        solver: Per-state equilibrium routine.

    Returns:
        :obj:`PlanningTables`.
    """
    horizon, num_states = mg.horizon, mg.num_states
    num_a, num_b = mg.num_actions_max, mg.num_actions_min
    cell_shape = (horizon, num_states, num_a, num_b)
    q_up, q_lo = np.zeros(cell_shape), np.zeros(cell_shape)
    bonus_up, bonus_lo = np.zeros(cell_shape), np.zeros(cell_shape)
    v_up, v_lo = np.zeros((horizon + 1, num_states)), np.zeros((horizon + 1, num_states))
    joint = np.zeros(cell_shape)
    policy_max = np.zeros((horizon, num_states, num_a))
    policy_min = np.zeros((horizon, num_states, num_b))

    for h in reversed(range(horizon)):
        q_up[h], bonus_up[h] = _bounded_q(mg, reg, v_up[h + 1], h, Side.MAX, beta0)
        q_lo[h], bonus_lo[h] = _bounded_q(mg, reg, v_lo[h + 1], h, Side.MIN, beta0)
        for s in range(num_states):
            sigma = solver(q_up[h, s], q_lo[h, s], epsilon)
            joint[h, s] = sigma.table
            v_up[h, s] = float((sigma.table * q_up[h, s]).sum())
            v_lo[h, s] = float((sigma.table * q_lo[h, s]).sum())
            pair = marginals(sigma)
            policy_max[h, s] = pair.row
            policy_min[h, s] = pair.col

    return PlanningTables(
        q_up=q_up,
        q_lo=q_lo,
        v_up=v_up,
        v_lo=v_lo,
        joint=joint,
        policy_max=policy_max,
        policy_min=policy_min,
        bonus_up=bonus_up,
        bonus_lo=bonus_lo,
    )


def build_turn_based_tables(tb: TurnBasedMG, reg: RegressionState, beta0: float) -> PlanningTables:
    """Plan backwards on a turn-based game with greedy policies.

    At a max-owned state the max-player plays the lowest-index maximizer `a*` of the optimistic
    table; the optimistic value is its maximum and the pessimistic value is read at `a*`. At a
    min-owned state the roles swap. The idle player's policy is the point mass on action 0.

    Args:
        tb: Turn-based game.
        reg: Regression state.
        beta0: First-moment confidence radius.

    Returns:
        :obj:`PlanningTables` with Q tables of shape (H, S, A).
    """
    horizon, num_states, num_actions = tb.horizon, tb.num_states, tb.num_actions
    cell_shape = (horizon, num_states, num_actions)
    q_up, q_lo = np.zeros(cell_shape), np.zeros(cell_shape)
    bonus_up, bonus_lo = np.zeros(cell_shape), np.zeros(cell_shape)
    v_up, v_lo = np.zeros((horizon + 1, num_states)), np.zeros((horizon + 1, num_states))
    joint = np.zeros((horizon, num_states, num_actions, num_actions))
    policy_max, policy_min = np.zeros(cell_shape), np.zeros(cell_shape)

    for h in reversed(range(horizon)):
        q_up[h], bonus_up[h] = _bounded_q(tb, reg, v_up[h + 1], h, Side.MAX, beta0)
        q_lo[h], bonus_lo[h] = _bounded_q(tb, reg, v_lo[h + 1], h, Side.MIN, beta0)
        for s in range(num_states):
            if tb.state_owner[s] == StateOwner.MAX:
                a, b = int(np.argmax(q_up[h, s])), 0
                greedy = a
            else:
                a, b = 0, int(np.argmin(q_lo[h, s]))
                greedy = b
            v_up[h, s] = q_up[h, s, greedy]
            v_lo[h, s] = q_lo[h, s, greedy]
            policy_max[h, s, a] = 1.0
            policy_min[h, s, b] = 1.0
            joint[h, s, a, b] = 1.0

    return PlanningTables(
        q_up=q_up,
        q_lo=q_lo,
        v_up=v_up,
        v_lo=v_lo,
        joint=joint,
        policy_max=policy_max,
        policy_min=policy_min,
        bonus_up=bonus_up,
        bonus_lo=bonus_lo,
    )


def _initial_state(config: LearnerConfig, num_states: int, rng: np.random.Generator) -> int:
    if config.initial_state is None:
        return 0
    if len(config.initial_state) != num_states:
        raise ValueError(f"`initial_state` has {len(config.initial_state)} entries for {num_states} states")
    return sample_index(np.asarray(config.initial_state), rng)


def _episode_betas(game: PlayableGame, config: LearnerConfig, k: int) -> BetaSchedule:
    return beta_schedule(
        k,
        game.dim,
        game.horizon,
        config.lam,
        config.delta,
        config.param_bound,
        episodes=config.episodes,
        constants=config.beta_constants,
        scale=config.beta_scale,
    )


def _play(
    game: PlayableGame,
    reg: RegressionState,
    config: LearnerConfig,
    k: int,
    rng: np.random.Generator,
    tables: PlanningTables,
    betas: BetaSchedule,
) -> EpisodeRecord:
    num_b = tables.joint.shape[-1]
    s = _initial_state(config, game.num_states, rng)
    states, actions_max, actions_min = [s], [], []
    bonus_up, bonus_lo, diagnostics = [], [], []
    for h in range(game.horizon):
        a, b = divmod(sample_index(tables.joint[h, s].ravel(), rng), num_b)
        cell = (h,) + _cell_index(game, s, a, b)
        s_next = sample_index(game.transition_tensor[cell], rng)
        bonus_up.append(float(tables.bonus_up[cell]))
        bonus_lo.append(float(tables.bonus_lo[cell]))
        diagnostics.append(
            update_after_step(reg, game, tables, h, s, a, b, s_next, betas.beta1, betas.beta2, config.variance_floor)
        )
        actions_max.append(a)
        actions_min.append(b)
        states.append(s_next)
        s = s_next

    return EpisodeRecord(
        episode=k,
        states=tuple(states),
        actions_max=tuple(actions_max),
        actions_min=tuple(actions_min),
        v_up_init=float(tables.v_up[0, states[0]]),
        v_lo_init=float(tables.v_lo[0, states[0]]),
        bonus_up=tuple(bonus_up),
        bonus_lo=tuple(bonus_lo),
        betas=betas,
        diagnostics=tuple(diagnostics),
        v_up=tables.v_up,
        v_lo=tables.v_lo,
        policy_max=tables.policy_max,
        policy_min=tables.policy_min,
        joint=tables.joint,
        tables=tables if config.retain_tables else None,
    )


def run_episode(
    mg: LinearMixtureMG,
    reg: RegressionState,
    config: LearnerConfig,
    k: int,
    rng: np.random.Generator,
    solver: CCESolver = epsilon_cce,
) -> Tuple[EpisodeRecord, RegressionState]:
    """Run episode `k` of the simultaneous-move loop.

    Plans with the radii of episode `k`, draws the initial state, then at every step samples a
    joint action from the flattened equilibrium table with one uniform draw, samples the next
    state with another, and refits the regressions of that step.

    Args:
        mg: Simultaneous-move game.
        reg: Regression state, updated in place.
        config: Learner hyper-parameters.
        k: 1-based episode index.
        rng: Seeded generator owned by this run.
        solver: Per-state equilibrium routine.

    Returns:
        Pair of the :obj:`EpisodeRecord` and the updated regression state.
    """
    betas = _episode_betas(mg, config, k)
    tables = build_q_tables(mg, reg, betas.beta0, config.cce_epsilon, solver)
    return _play(mg, reg, config, k, rng, tables, betas), reg


def run_turn_based_episode(
    tb: TurnBasedMG, reg: RegressionState, config: LearnerConfig, k: int, rng: np.random.Generator
) -> Tuple[EpisodeRecord, RegressionState]:
    """Run episode `k` of the turn-based loop.

    Identical in structure to `run_episode`; planning uses greedy policies and each step's
    regression uses the features of the acting player's action. The joint action is still drawn
    from the (point-mass) joint table, so a turn-based run consumes random numbers exactly like a
    simultaneous run on the embedded game.

    Returns:
        Pair of the :obj:`EpisodeRecord` and the updated regression state.
    """
    betas = _episode_betas(tb, config, k)
    tables = build_turn_based_tables(tb, reg, betas.beta0)
    return _play(tb, reg, config, k, rng, tables, betas), reg


@dataclass
class NashVTRLearner:
    """A learning session against one game instance.

    Args:
        game: Instance the learner plays; only its features and rewards are read for planning.
        config: Learner hyper-parameters.
        seed: Seed of the run's random generator.
        algorithm: Simultaneous-move or turn-based loop.
        solver: Per-state equilibrium routine of the simultaneous loop.
    """

    game: PlayableGame
    config: LearnerConfig
    seed: int
    algorithm: AlgorithmKind = AlgorithmKind.SIMULTANEOUS
    solver: CCESolver = epsilon_cce
    regression: RegressionState = field(init=False)
    rng: np.random.Generator = field(init=False, repr=False)
    episode: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        if self.algorithm == AlgorithmKind.TURN_BASED and not isinstance(self.game, TurnBasedMG):
            raise ValueError("The turn-based loop needs a `TurnBasedMG` instance")
        if self.algorithm == AlgorithmKind.SIMULTANEOUS and not isinstance(self.game, LinearMixtureMG):
            raise ValueError("The simultaneous loop needs a `LinearMixtureMG` instance")
        if self.config.horizon != self.game.horizon:
            raise ValueError(f"Config horizon {self.config.horizon} does not match game horizon {self.game.horizon}")
        self.regression = RegressionState.initial(
            self.game.dim, self.game.horizon, self.config.lam, record_history=self.config.record_history
        )
        self.rng = np.random.default_rng(self.seed)

    def betas(self, k: Optional[int] = None) -> BetaSchedule:
        """Confidence radii of episode `k` (the next episode by default)."""
        return _episode_betas(self.game, self.config, self.episode + 1 if k is None else k)

    def play_episode(self) -> EpisodeRecord:
        """Plan, play and learn from the next episode."""
        self.episode += 1
        if self.algorithm == AlgorithmKind.TURN_BASED:
            assert isinstance(self.game, TurnBasedMG)
            record, _ = run_turn_based_episode(self.game, self.regression, self.config, self.episode, self.rng)
        else:
            assert isinstance(self.game, LinearMixtureMG)
            record, _ = run_episode(self.game, self.regression, self.config, self.episode, self.rng, self.solver)
        logger.debug(
            "Episode %d: v_up=%.6f v_lo=%.6f from state %d",
            record.episode,
            record.v_up_init,
            record.v_lo_init,
            record.initial_state,
        )
        return record

    def play(self, episodes: int) -> List[EpisodeRecord]:
        """Play `episodes` consecutive episodes."""
        return [self.play_episode() for _ in range(episodes)]


def regression_audit(reg: RegressionState, side: Side, h: int) -> Tuple[FloatArray, FloatArray]:
    """Direct ridge minimizers of both systems at (side, h) assembled from the stored history.

    Raises:
        ValueError: If the state was created without history recording.
    """
    step = reg.step(side, h)
    if step.history0 is None or step.history1 is None:
        raise ValueError("Regression history was not recorded; enable `record_history`")
    return (
        batch_ridge_solution(step.history0, reg.dim, reg.lam),
        batch_ridge_solution(step.history1, reg.dim, reg.lam),
    )
