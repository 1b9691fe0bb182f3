""" Episodic linear mixture Markov games.

This module defines the game instances the learner is run against: simultaneous-move linear
mixture Markov games, their turn-based counterpart, and single-agent linear mixture MDPs. It
also provides the instance constructors (tabular one-hot, random mixtures, turn-based and
dummy-min-player embeddings) and a JSON document format for saving and loading instances.

Transition probabilities are never stored directly. An instance holds a feature tensor
`features[s', s, a, b, :]` and per-step parameters `theta_star[h, :]`, and the kernel is the
inner product of the two. Steps are 0-based: step index `h` in `0..H-1`.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple, Union

import numpy as np

from nash_vtr.data_structures import KERNEL_TOL, NEGATIVE_PROB_TOL, FloatArray, InstanceKind, StateOwner

_NORMALIZATION_TOL: float = 1e-9
_NORMALIZATION_SAMPLES: int = 64


class InstanceValidationError(Exception):
    pass


class InstanceFormatError(Exception):
    pass


def _frozen_copy(values: Any) -> FloatArray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


def integrate_features(features: FloatArray, values: FloatArray) -> FloatArray:
    """Integrate a value function against a feature tensor over its leading next-state axis.

    The sum runs over next states in enumeration order, so two feature tensors holding the same
    vectors produce bit-identical results regardless of the shape of the remaining axes.

    Args:
        features: Tensor with next-state axis first and feature axis last.
        values: Value per next state.

    Returns:
        Tensor with the next-state axis summed out.
    """
    acc = np.zeros(features.shape[1:], dtype=float)
    for t in range(features.shape[0]):
        acc += values[t] * features[t]
    return acc


def sample_index(probabilities: FloatArray, rng: np.random.Generator) -> int:
    """Draw an index from a flat distribution by inverse CDF using a single uniform draw.

    Args:
        probabilities: Flat probability vector.
        rng: Seeded generator; exactly one `random()` draw is consumed.

    Returns:
        Sampled index.
    """
    u = rng.random()
    cdf = np.cumsum(probabilities)
    idx = int(np.searchsorted(cdf, u, side="right"))
    if idx < len(probabilities):
        return idx
    # Round-off left u past the end of the cdf.
    return int(np.flatnonzero(np.asarray(probabilities) > 0)[-1])


def _normalization_probes(num_states: int) -> FloatArray:
    rng = np.random.default_rng(0)
    interior = rng.uniform(-1.0, 1.0, size=(_NORMALIZATION_SAMPLES, num_states))
    vertices = rng.choice([-1.0, 1.0], size=(_NORMALIZATION_SAMPLES, num_states))
    extremes = np.stack([np.ones(num_states), -np.ones(num_states)])
    return np.concatenate([interior, vertices, extremes])


def _raw_kernel(features: FloatArray, theta_star: FloatArray) -> FloatArray:
    # (S', *cells, d) against (H, d) -> (H, *cells, S'), unclamped.
    return np.stack([np.moveaxis(np.tensordot(features, th, axes=(-1, 0)), 0, -1) for th in theta_star])


def _check_kernel(kernel: FloatArray) -> None:
    min_entry = float(kernel.min())
    if min_entry < -NEGATIVE_PROB_TOL:
        raise InstanceValidationError(f"Transition kernel has a negative entry {min_entry:.3e}")
    worst = float(np.abs(kernel.sum(axis=-1) - 1.0).max())
    if worst > KERNEL_TOL:
        raise InstanceValidationError(f"Transition kernel rows do not sum to one (worst deviation {worst:.3e})")


def _check_normalization(features: FloatArray) -> None:
    num_states = features.shape[0]
    flat = features.reshape(num_states, -1, features.shape[-1])
    for v in _normalization_probes(num_states):
        norms = np.linalg.norm(integrate_features(flat, v), axis=-1)
        worst = float(norms.max())
        if worst > 1.0 + _NORMALIZATION_TOL:
            raise InstanceValidationError(f"Integrated feature norm {worst:.6f} exceeds 1 for a value in [-1, 1]")


def _check_parameters(theta_star: FloatArray, reward: FloatArray, param_bound: float) -> None:
    norms = np.linalg.norm(theta_star, axis=-1)
    if float(norms.max()) > param_bound + KERNEL_TOL:
        raise InstanceValidationError(f"Parameter norm {float(norms.max()):.6f} exceeds bound {param_bound:.6f}")
    if float(np.abs(reward).max()) > 1.0:
        raise InstanceValidationError("Rewards must lie in [-1, 1]")


@dataclass(frozen=True, eq=False)
class LinearMixtureMG:
    """A finite-state episodic two-player zero-sum linear mixture Markov game.

    The instance validates itself on construction and is immutable afterwards.

    Args:
        features: Feature tensor of shape (S, S, A_max, A_min, d), indexed [s', s, a, b, i].
        theta_star: Per-step parameters of shape (H, d).
        reward: Per-step rewards of shape (H, S, A_max, A_min), entries in [-1, 1].
        param_bound: Bound B on every parameter norm.
        kind: Provenance tag.
    """

    features: FloatArray
    theta_star: FloatArray
    reward: FloatArray
    param_bound: float
    kind: InstanceKind = InstanceKind.LINEAR
    _kernel: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        features = _frozen_copy(self.features)
        theta_star = _frozen_copy(self.theta_star)
        reward = _frozen_copy(self.reward)
        if features.ndim != 5 or features.shape[0] != features.shape[1]:
            raise ValueError(f"`features` must have shape (S, S, A, B, d), got {features.shape}")
        if theta_star.ndim != 2 or theta_star.shape[1] != features.shape[-1]:
            raise ValueError(f"`theta_star` must have shape (H, {features.shape[-1]}), got {theta_star.shape}")
        if reward.shape != (theta_star.shape[0],) + features.shape[1:4]:
            raise ValueError(f"`reward` must have shape (H, S, A, B), got {reward.shape}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "theta_star", theta_star)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "param_bound", float(self.param_bound))
        raw = _raw_kernel(features, theta_star)
        self._validate_kernel_and_bounds(raw)
        kernel = np.clip(raw, 0.0, 1.0)
        kernel.setflags(write=False)
        object.__setattr__(self, "_kernel", kernel)

    @property
    def num_states(self) -> int:
        """`int`: Number of enumerated states."""
        return int(self.features.shape[0])

    @property
    def num_actions_max(self) -> int:
        """`int`: Number of max-player actions."""
        return int(self.features.shape[2])

    @property
    def num_actions_min(self) -> int:
        """`int`: Number of min-player actions."""
        return int(self.features.shape[3])

    @property
    def horizon(self) -> int:
        """`int`: Episode length H."""
        return int(self.theta_star.shape[0])

    @property
    def dim(self) -> int:
        """`int`: Feature dimension d."""
        return int(self.features.shape[-1])

    @property
    def transition_tensor(self) -> FloatArray:
        """Clamped transition kernel of shape (H, S, A_max, A_min, S')."""
        return self._kernel

    def validate(self) -> None:
        """Re-check the kernel, normalization, bound and reward invariants.

        Raises:
            InstanceValidationError: If any invariant is violated.
        """
        self._validate_kernel_and_bounds(_raw_kernel(self.features, self.theta_star))

    def _validate_kernel_and_bounds(self, raw_kernel: FloatArray) -> None:
        _check_kernel(raw_kernel)
        _check_parameters(self.theta_star, self.reward, self.param_bound)
        _check_normalization(self.features)


@dataclass(frozen=True, eq=False)
class _SingleActionGame:
    features: FloatArray
    theta_star: FloatArray
    reward: FloatArray
    param_bound: float
    _kernel: FloatArray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        features = _frozen_copy(self.features)
        theta_star = _frozen_copy(self.theta_star)
        reward = _frozen_copy(self.reward)
        if features.ndim != 4 or features.shape[0] != features.shape[1]:
            raise ValueError(f"`features` must have shape (S, S, A, d), got {features.shape}")
        if theta_star.ndim != 2 or theta_star.shape[1] != features.shape[-1]:
            raise ValueError(f"`theta_star` must have shape (H, {features.shape[-1]}), got {theta_star.shape}")
        if reward.shape != (theta_star.shape[0],) + features.shape[1:3]:
            raise ValueError(f"`reward` must have shape (H, S, A), got {reward.shape}")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "theta_star", theta_star)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "param_bound", float(self.param_bound))
        self.validate()
        kernel = np.clip(_raw_kernel(features, theta_star), 0.0, 1.0)
        kernel.setflags(write=False)
        object.__setattr__(self, "_kernel", kernel)

    def validate(self) -> None:
        """Re-check the kernel, normalization, bound and reward invariants.

        Raises:
            InstanceValidationError: If any invariant is violated.
        """
        _check_kernel(_raw_kernel(self.features, self.theta_star))
        _check_parameters(self.theta_star, self.reward, self.param_bound)
        _check_normalization(self.features)

    @property
    def num_states(self) -> int:
        """`int`: Number of enumerated states."""
        return int(self.features.shape[0])

    @property
    def num_actions(self) -> int:
        """`int`: Size of the single action axis."""
        return int(self.features.shape[2])

    @property
    def horizon(self) -> int:
        """`int`: Episode length H."""
        return int(self.theta_star.shape[0])

    @property
    def dim(self) -> int:
        """`int`: Feature dimension d."""
        return int(self.features.shape[-1])

    @property
    def transition_tensor(self) -> FloatArray:
        """Clamped transition kernel of shape (H, S, A, S')."""
        return self._kernel


@dataclass(frozen=True, eq=False)
class LinearMixtureMDP(_SingleActionGame):
    """A single-agent episodic linear mixture MDP.

    Args:
        features: Feature tensor of shape (S, S, A, d), indexed [s', s, a, i].
        theta_star: Per-step parameters of shape (H, d).
        reward: Rewards of shape (H, S, A).
        param_bound: Bound B on every parameter norm.
    """


@dataclass(frozen=True, eq=False)
class TurnBasedMG(_SingleActionGame):
    """A turn-based linear mixture Markov game; exactly one player acts at each state.

    Args:
        features: Feature tensor of shape (S, S, A, d), indexed [s', s, a, i].
        theta_star: Per-step parameters of shape (H, d).
        reward: Rewards of shape (H, S, A).
        param_bound: Bound B on every parameter norm.
        state_owner: Acting player per state.
    """

    state_owner: Tuple[StateOwner, ...] = ()

    def __post_init__(self) -> None:
        super().__post_init__()
        owners = tuple(self.state_owner)
        if len(owners) != self.num_states or not all(isinstance(o, StateOwner) for o in owners):
            raise InstanceValidationError("`state_owner` must assign one `StateOwner` to every state")
        object.__setattr__(self, "state_owner", owners)

    @property
    def max_states(self) -> List[int]:
        """:obj:`list` of :obj:`int`: States owned by the max-player."""
        return [s for s, o in enumerate(self.state_owner) if o == StateOwner.MAX]

    @property
    def min_states(self) -> List[int]:
        """:obj:`list` of :obj:`int`: States owned by the min-player."""
        return [s for s, o in enumerate(self.state_owner) if o == StateOwner.MIN]


Game = Union[LinearMixtureMG, TurnBasedMG, LinearMixtureMDP]


def _check_state_action(mg: LinearMixtureMG, s: int, a: int, b: int) -> None:
    if not 0 <= s < mg.num_states:
        raise IndexError(f"State `s`={s} out of range [0, {mg.num_states})")
    if not 0 <= a < mg.num_actions_max:
        raise IndexError(f"Max action `a`={a} out of range [0, {mg.num_actions_max})")
    if not 0 <= b < mg.num_actions_min:
        raise IndexError(f"Min action `b`={b} out of range [0, {mg.num_actions_min})")


def phi_v(mg: LinearMixtureMG, values: FloatArray, s: int, a: int, b: int) -> FloatArray:
    """Integrate a value function against the features at one state-action triple.

    Args:
        mg: Game instance.
        values: Value per state, shape (S,).
        s: State.
        a: Max-player action.
        b: Min-player action.

    Returns:
        The d-vector sum over s' of features[s', s, a, b] * values[s'].

    Raises:
        IndexError: If `s`, `a` or `b` is out of range.
        ValueError: If `values` does not cover every state.
    """
    _check_state_action(mg, s, a, b)
    values = np.asarray(values, dtype=float)
    if values.shape != (mg.num_states,):
        raise ValueError(f"`values` must have shape ({mg.num_states},), got {values.shape}")
    return integrate_features(mg.features[:, s, a, b, :], values)


def phi_v_table(game: Game, values: FloatArray) -> FloatArray:
    """Integrate a value function against the features at every state-action cell.

    Args:
        game: Any game instance.
        values: Value per state, shape (S,).

    Returns:
        Tensor of shape (S, A, B, d) for simultaneous games or (S, A, d) for single-axis games.
    """
    return integrate_features(game.features, np.asarray(values, dtype=float))


def transition_prob(mg: LinearMixtureMG, h: int, s: int, a: int, b: int, s_next: int) -> float:
    """Transition probability of moving to `s_next` from (s, a, b) at step `h`.

    Returns:
        The inner product of the features and the step parameter, clamped to [0, 1]. Validation
        on construction guarantees the clamp never moves a value by more than 1e-9.
    """
    _check_state_action(mg, s, a, b)
    if not 0 <= s_next < mg.num_states:
        raise IndexError(f"Next state `s_next`={s_next} out of range [0, {mg.num_states})")
    return float(mg.transition_tensor[h, s, a, b, s_next])


def sample_next_state(mg: LinearMixtureMG, h: int, s: int, a: int, b: int, rng: np.random.Generator) -> int:
    """Draw the next state from the true kernel with a single uniform draw.

    Args:
        mg: Game instance.
        h: Step index.
        s: Current state.
        a: Max-player action.
        b: Min-player action.
        rng: Seeded generator.

    Returns:
        Sampled next state.
    """
    _check_state_action(mg, s, a, b)
    return sample_index(mg.transition_tensor[h, s, a, b], rng)


def _as_kernel(kernel: Any) -> FloatArray:
    arr = np.asarray(kernel, dtype=float)
    if arr.ndim != 5 or arr.shape[1] != arr.shape[-1]:
        raise InstanceValidationError(f"Kernel must have shape (H, S, A, B, S), got {arr.shape}")
    try:
        _check_kernel(arr)
    except InstanceValidationError as e:
        raise InstanceValidationError("Malformed tabular kernel") from e
    return arr


def make_tabular(kernel: Any, reward: Any) -> LinearMixtureMG:
    """Build the one-hot linear mixture representation of a tabular game.

    Features are indicators of the flattened (s, a, b, s') index scaled by 1/sqrt(S) and the
    parameters are the flattened kernel scaled by sqrt(S), which keeps every integrated feature
    norm at most one for values in [-1, 1] while leaving the kernel unchanged.

    Args:
        kernel: Transition tables of shape (H, S, A, B, S).
        reward: Reward tables of shape (H, S, A, B).

    Returns:
        Tabular :obj:`LinearMixtureMG` with d = S^2 * A * B.

    Raises:
        InstanceValidationError: If the kernel or rewards are malformed.
    """
    p = _as_kernel(kernel)
    horizon, num_states, num_a, num_b, _ = p.shape
    dim = num_states * num_states * num_a * num_b
    scale = np.sqrt(num_states)
    eye = np.eye(dim).reshape(num_states, num_a, num_b, num_states, dim)
    features = np.moveaxis(eye, 3, 0) / scale
    theta_star = scale * p.reshape(horizon, dim)
    bound = float(np.linalg.norm(theta_star, axis=-1).max())
    return LinearMixtureMG(
        features=features, theta_star=theta_star, reward=reward, param_bound=bound, kind=InstanceKind.TABULAR
    )


def _random_basis_kernels(dim: int, cells: Tuple[int, ...], num_states: int, rng: np.random.Generator) -> FloatArray:
    # (d, *cells, S')
    return rng.dirichlet(np.ones(num_states), size=(dim,) + cells)


def _mixture_features(basis: FloatArray) -> FloatArray:
    dim = basis.shape[0]
    # basis is (d, *cells, S'); features are (S', *cells, d).
    return np.moveaxis(np.moveaxis(basis, -1, 0), 1, -1) / np.sqrt(dim)


def random_instance(
    dim: int, num_states: int, actions: Tuple[int, int], horizon: int, rng: np.random.Generator
) -> LinearMixtureMG:
    """Sample a random linear mixture game.

    Draws `dim` basis kernels with Dirichlet rows and per-step simplex weights, then rescales the
    features by 1/sqrt(d) and the weights by sqrt(d). Rewards are uniform in [-1, 1].

    Args:
        dim: Feature dimension (number of basis kernels).
        num_states: Number of states.
        actions: Pair (A_max, A_min).
        horizon: Episode length.
        rng: Seeded generator.

    Returns:
        Valid :obj:`LinearMixtureMG` with B = sqrt(d).

    Raises:
        ValueError: If `dim` is not positive.
    """
    if dim < 1:
        raise ValueError(f"`dim` must be positive, got {dim}")
    num_a, num_b = actions
    basis = _random_basis_kernels(dim, (num_states, num_a, num_b), num_states, rng)
    weights = rng.dirichlet(np.ones(dim), size=horizon)
    reward = rng.uniform(-1.0, 1.0, size=(horizon, num_states, num_a, num_b))
    return LinearMixtureMG(
        features=_mixture_features(basis),
        theta_star=np.sqrt(dim) * weights,
        reward=reward,
        param_bound=float(np.sqrt(dim)),
        kind=InstanceKind.LINEAR,
    )


def random_tabular_instance(
    num_states: int, actions: Tuple[int, int], horizon: int, rng: np.random.Generator
) -> LinearMixtureMG:
    """Sample a random tabular game (Dirichlet kernel rows, uniform rewards) in one-hot form."""
    num_a, num_b = actions
    kernel = rng.dirichlet(np.ones(num_states), size=(horizon, num_states, num_a, num_b))
    reward = rng.uniform(-1.0, 1.0, size=(horizon, num_states, num_a, num_b))
    return make_tabular(kernel, reward)


def random_mdp(dim: int, num_states: int, num_actions: int, horizon: int, rng: np.random.Generator) -> LinearMixtureMDP:
    """Sample a random single-agent linear mixture MDP with the same construction as `random_instance`."""
    if dim < 1:
        raise ValueError(f"`dim` must be positive, got {dim}")
    basis = _random_basis_kernels(dim, (num_states, num_actions), num_states, rng)
    weights = rng.dirichlet(np.ones(dim), size=horizon)
    reward = rng.uniform(-1.0, 1.0, size=(horizon, num_states, num_actions))
    return LinearMixtureMDP(
        features=_mixture_features(basis),
        theta_star=np.sqrt(dim) * weights,
        reward=reward,
        param_bound=float(np.sqrt(dim)),
    )


def random_turn_based_instance(
    dim: int, num_states: int, num_actions: int, horizon: int, rng: np.random.Generator
) -> TurnBasedMG:
    """Sample a random turn-based game; every state gets an owner uniformly at random."""
    mdp = random_mdp(dim, num_states, num_actions, horizon, rng)
    owners = tuple(StateOwner.MAX if bit else StateOwner.MIN for bit in rng.integers(0, 2, size=num_states))
    return TurnBasedMG(
        features=mdp.features,
        theta_star=mdp.theta_star,
        reward=mdp.reward,
        param_bound=mdp.param_bound,
        state_owner=owners,
    )


def embed_turn_based(tb: TurnBasedMG) -> LinearMixtureMG:
    """Embed a turn-based game into a simultaneous-move game.

    At max-owned states the min action is ignored and at min-owned states the max action is
    ignored, for both features and rewards.

    Args:
        tb: Turn-based game.

    Returns:
        :obj:`LinearMixtureMG` with A_max = A_min = A and the same parameters.
    """
    num_actions = tb.num_actions
    shape = (tb.num_states, tb.num_states, num_actions, num_actions, tb.dim)
    max_view = np.broadcast_to(tb.features[:, :, :, None, :], shape)
    min_view = np.broadcast_to(tb.features[:, :, None, :, :], shape)
    is_max = np.array([o == StateOwner.MAX for o in tb.state_owner])
    features = np.where(is_max[None, :, None, None, None], max_view, min_view)

    r_shape = (tb.horizon, tb.num_states, num_actions, num_actions)
    r_max = np.broadcast_to(tb.reward[:, :, :, None], r_shape)
    r_min = np.broadcast_to(tb.reward[:, :, None, :], r_shape)
    reward = np.where(is_max[None, :, None, None], r_max, r_min)
    return LinearMixtureMG(
        features=features,
        theta_star=tb.theta_star,
        reward=reward,
        param_bound=tb.param_bound,
        kind=InstanceKind.TURN_BASED_EMBEDDING,
    )


def make_dummy_min_player(mdp: LinearMixtureMDP, num_actions_min: int = 2) -> LinearMixtureMG:
    """Turn a single-agent MDP into a game whose min-player has no influence.

    Args:
        mdp: Single-agent linear mixture MDP.
        num_actions_min: Size of the duplicated min-action axis.

    Returns:
        :obj:`LinearMixtureMG` whose transitions and rewards do not depend on the min action.

    Raises:
        ValueError: If `num_actions_min` is not positive.
    """
    if num_actions_min < 1:
        raise ValueError(f"`num_actions_min` must be positive, got {num_actions_min}")
    shape = mdp.features.shape[:3] + (num_actions_min, mdp.dim)
    features = np.broadcast_to(mdp.features[:, :, :, None, :], shape)
    reward = np.broadcast_to(mdp.reward[:, :, :, None], mdp.reward.shape + (num_actions_min,))
    return LinearMixtureMG(
        features=features,
        theta_star=mdp.theta_star,
        reward=reward,
        param_bound=mdp.param_bound,
        kind=InstanceKind.DUMMY_MDP,
    )


def instance_to_document(game: Game) -> Dict[str, Any]:
    """Serialize an instance into a JSON-compatible document.

    Args:
        game: Any game instance.

    Returns:
        Document with dims, nested features (row-major [s'][s][a][b][i]), parameters, rewards,
        bound and kind tag.
    """
    if isinstance(game, LinearMixtureMG):
        kind = game.kind.value
        actions = [game.num_actions_max, game.num_actions_min]
    elif isinstance(game, TurnBasedMG):
        kind = InstanceKind.TURN_BASED.value
        actions = [game.num_actions]
    else:
        kind = InstanceKind.MDP.value
        actions = [game.num_actions]
    doc: Dict[str, Any] = {
        "kind": kind,
        "dim": game.dim,
        "num_states": game.num_states,
        "actions": actions,
        "horizon": game.horizon,
        "features": game.features.tolist(),
        "theta_star": game.theta_star.tolist(),
        "reward": game.reward.tolist(),
        "param_bound": game.param_bound,
    }
    if isinstance(game, TurnBasedMG):
        doc["state_owner"] = [o.name for o in game.state_owner]
    return doc


def _declared_shape(doc: Dict[str, Any], key: str, expected: Sequence[int]) -> FloatArray:
    arr = np.asarray(doc[key], dtype=float)
    if arr.shape != tuple(expected):
        raise InstanceFormatError(f"`{key}` has shape {arr.shape}, expected {tuple(expected)}")
    return arr


def instance_from_document(doc: Dict[str, Any]) -> Game:
    """Rebuild an instance from a document produced by `instance_to_document`.

    Raises:
        InstanceFormatError: If required fields are missing or shapes disagree with declared dims.
        InstanceValidationError: If the decoded instance violates an invariant.
    """
    try:
        kind = InstanceKind(doc["kind"])
        dim = int(doc["dim"])
        num_states = int(doc["num_states"])
        actions = [int(x) for x in doc["actions"]]
        horizon = int(doc["horizon"])
        bound = float(doc["param_bound"])
    except (KeyError, TypeError, ValueError) as e:
        raise InstanceFormatError("Instance document is missing or has malformed header fields") from e
    try:
        theta_star = _declared_shape(doc, "theta_star", (horizon, dim))
        if kind in (InstanceKind.TURN_BASED, InstanceKind.MDP):
            if len(actions) != 1:
                raise InstanceFormatError(f"`actions` must list one action count for kind `{kind.value}`")
            features = _declared_shape(doc, "features", (num_states, num_states, actions[0], dim))
            reward = _declared_shape(doc, "reward", (horizon, num_states, actions[0]))
        else:
            if len(actions) != 2:
                raise InstanceFormatError(f"`actions` must list two action counts for kind `{kind.value}`")
            features = _declared_shape(doc, "features", (num_states, num_states, actions[0], actions[1], dim))
            reward = _declared_shape(doc, "reward", (horizon, num_states, actions[0], actions[1]))
    except (KeyError, TypeError, ValueError) as e:
        raise InstanceFormatError("Instance document has malformed array fields") from e

    if kind == InstanceKind.TURN_BASED:
        try:
            owners = tuple(StateOwner[name] for name in doc["state_owner"])
        except (KeyError, TypeError) as e:
            raise InstanceFormatError("Turn-based document needs a `state_owner` list of MAX/MIN tags") from e
        return TurnBasedMG(
            features=features, theta_star=theta_star, reward=reward, param_bound=bound, state_owner=owners
        )
    if kind == InstanceKind.MDP:
        return LinearMixtureMDP(features=features, theta_star=theta_star, reward=reward, param_bound=bound)
    return LinearMixtureMG(features=features, theta_star=theta_star, reward=reward, param_bound=bound, kind=kind)


def save_instance(game: Game, path: Union[str, Path]) -> None:
    """Write an instance document to `path` as JSON."""
    with open(path, "w") as f:
        json.dump(instance_to_document(game), f)


def load_instance(path: Union[str, Path]) -> Game:
    """Load and validate an instance document from `path`.

    Raises:
        InstanceFormatError: If the file is not valid JSON or is malformed.
        InstanceValidationError: If the decoded instance violates an invariant.
    """
    try:
        with open(path, "r") as f:
            doc = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise InstanceFormatError(f"Could not read instance document at `{path}`") from e
    if not isinstance(doc, dict):
        raise InstanceFormatError(f"Instance document at `{path}` must be a JSON object")
    return instance_from_document(doc)
