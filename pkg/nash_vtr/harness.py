""" Regret experiment orchestration.

This module turns a JSON experiment document into runs of the learner: it validates and
defaults the configuration, builds the game instance, derives one seed per run, plays every run
on a thread pool while recording exact duality gaps (and, when monitoring is on, the event
monitors), aggregates regret curves across runs and writes per-run CSV tables plus a JSON
summary. Given the same configuration every output byte is the same.
"""

import concurrent.futures
import json
import logging
import math
import time
from dataclasses import dataclass
from importlib import metadata
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tqdm import tqdm

from nash_vtr.data_structures import AlgorithmKind, BetaConstants, VarianceFloor
from nash_vtr.evaluation import (
    Certificate,
    EventMonitor,
    RegretLedger,
    confidence_membership,
    episode_gap,
    optimism_sandwich,
    variance_offset_check,
)
from nash_vtr.game_model import (
    Game,
    LinearMixtureMDP,
    LinearMixtureMG,
    TurnBasedMG,
    embed_turn_based,
    load_instance,
    make_dummy_min_player,
    random_instance,
    random_mdp,
    random_tabular_instance,
    random_turn_based_instance,
)
from nash_vtr.learner import LearnerConfig, NashVTRLearner, PlayableGame, cce_epsilon_default

logger = logging.getLogger(__name__)

MAX_STATES: int = 64
MAX_ACTIONS: int = 8
MAX_HORIZON: int = 10
MAX_DIM: int = 128
DENSE_CADENCE_LIMIT: int = 5000
SPARSE_CADENCE: int = 10

CSV_COLUMNS: List[str] = ["episode", "gap", "cum_regret", "v_up_s1", "v_lo_s1", "conf_member", "e1_margin", "e2_margin"]
FLOAT_FORMAT: str = "%.17g"
SUMMARY_FILENAME: str = "summary.json"

_MASK64: int = (1 << 64) - 1
_GOLDEN_GAMMA: int = 0x9E3779B97F4A7C15


class ConfigError(Exception):
    def __init__(self, message: str, path: Optional[str] = None) -> None:
        super().__init__(message)
        self.path = path


class OutputError(Exception):
    pass


class ExperimentRunError(Exception):
    def __init__(self, message: str, failed_seeds: Sequence[int] = ()) -> None:
        super().__init__(message)
        self.failed_seeds = list(failed_seeds)


InstanceSource = Literal["tabular-random", "linear-random", "dummy-mdp", "turn-based-random", "file"]

_REQUIRED_DIMS: Dict[str, Tuple[str, ...]] = {
    "tabular-random": ("num_states", "num_actions_max", "num_actions_min", "horizon"),
    "linear-random": ("dim", "num_states", "num_actions_max", "num_actions_min", "horizon"),
    "dummy-mdp": ("dim", "num_states", "num_actions_max", "horizon"),
    "turn-based-random": ("dim", "num_states", "num_actions_max", "horizon"),
    "file": ("path",),
}


class InstanceSpec(BaseModel):
    """How to obtain the game instance of an experiment."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    kind: InstanceSource
    num_states: Optional[int] = Field(default=None, alias="S", ge=1, le=MAX_STATES)
    num_actions_max: Optional[int] = Field(default=None, alias="A", ge=1, le=MAX_ACTIONS)
    num_actions_min: Optional[int] = Field(default=None, alias="B", ge=1, le=MAX_ACTIONS)
    horizon: Optional[int] = Field(default=None, alias="H", ge=1, le=MAX_HORIZON)
    dim: Optional[int] = Field(default=None, alias="d", ge=1, le=MAX_DIM)
    seed: int = Field(default=0, ge=0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check_dims(self) -> "InstanceSpec":
        missing = [name for name in _REQUIRED_DIMS[self.kind] if getattr(self, name) is None]
        if missing:
            raise ValueError(f"Instance kind `{self.kind}` requires {', '.join(f'`{m}`' for m in missing)}")
        if self.kind == "tabular-random":
            assert self.num_states and self.num_actions_max and self.num_actions_min
            tabular_dim = self.num_states**2 * self.num_actions_max * self.num_actions_min
            if tabular_dim > MAX_DIM:
                raise ValueError(f"Tabular feature dimension S^2*A*B={tabular_dim} exceeds {MAX_DIM}")
        return self


class ExperimentConfig(BaseModel):
    """A regret experiment: one instance, one algorithm, several seeded runs.

    After `parse_config` every optional hyper-parameter is resolved.
    """

    model_config = ConfigDict(extra="forbid", populate_by_name=True, frozen=True)

    instance: InstanceSpec
    algorithm: AlgorithmKind = AlgorithmKind.SIMULTANEOUS
    episodes: int = Field(alias="K", ge=1)
    delta: float = Field(default=0.05, gt=0.0, lt=1.0)
    lam: Optional[float] = Field(default=None, alias="lambda", gt=0.0)
    epsilon: Optional[float] = Field(default=None, ge=0.0)
    master_seed: int = Field(default=0, ge=0)
    num_seeds: int = Field(default=1, ge=1)
    seeds: Optional[List[int]] = None
    monitor: bool = False
    eval_every: Optional[int] = Field(default=None, ge=1)
    out: str = "results"
    beta_constants: BetaConstants = BetaConstants.LEMMA
    variance_floor: VarianceFloor = VarianceFloor.MAIN_TEXT
    beta_scale: float = Field(default=1.0, ge=0.0)
    initial_state: Optional[List[float]] = None
    workers: Optional[int] = Field(default=None, ge=1)

    @property
    def run_seeds(self) -> List[int]:
        """Learner seeds of all runs, explicit or derived from the master seed."""
        if self.seeds is not None:
            return list(self.seeds)
        return [derive_seed(self.master_seed, i) for i in range(self.num_seeds)]


def derive_seed(master_seed: int, run_index: int) -> int:
    """Derive the seed of run `run_index` with one splitmix64 step.

    The generator state is `master_seed + (run_index + 1) * 0x9E3779B97F4A7C15` (mod 2^64), so
    adding runs never changes the seeds of existing ones.
    """
    z = (master_seed + (run_index + 1) * _GOLDEN_GAMMA) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def _error_path(error: Dict[str, Any]) -> str:
    return ".".join(str(part) for part in error["loc"]) or "<root>"


def build_instance(spec: InstanceSpec) -> Game:
    """Generate or load the instance described by `spec`.

    Raises:
        InstanceFormatError: If a file instance cannot be decoded.
        InstanceValidationError: If a file instance violates an invariant.
    """
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "file":
        assert spec.path is not None
        return load_instance(spec.path)
    assert spec.num_states is not None and spec.num_actions_max is not None and spec.horizon is not None
    if spec.kind == "tabular-random":
        assert spec.num_actions_min is not None
        return random_tabular_instance(
            spec.num_states, (spec.num_actions_max, spec.num_actions_min), spec.horizon, rng
        )
    assert spec.dim is not None
    if spec.kind == "linear-random":
        assert spec.num_actions_min is not None
        actions = (spec.num_actions_max, spec.num_actions_min)
        return random_instance(spec.dim, spec.num_states, actions, spec.horizon, rng)
    if spec.kind == "dummy-mdp":
        mdp = random_mdp(spec.dim, spec.num_states, spec.num_actions_max, spec.horizon, rng)
        return make_dummy_min_player(mdp, spec.num_actions_min or 2)
    return random_turn_based_instance(spec.dim, spec.num_states, spec.num_actions_max, spec.horizon, rng)


def _check_caps(game: Game) -> None:
    actions = [game.num_actions_max, game.num_actions_min] if isinstance(game, LinearMixtureMG) else [game.num_actions]
    if game.num_states > MAX_STATES or max(actions) > MAX_ACTIONS:
        raise ConfigError(f"Instance exceeds {MAX_STATES} states or {MAX_ACTIONS} actions", path="instance")
    if game.horizon > MAX_HORIZON or game.dim > MAX_DIM:
        raise ConfigError(f"Instance exceeds horizon {MAX_HORIZON} or dimension {MAX_DIM}", path="instance")


def parse_config(document: Dict[str, Any]) -> ExperimentConfig:
    """Validate an experiment document and resolve every default.

    Defaults: `lambda` = 1/B^2 with B the bound of the built instance, `epsilon` = sqrt(H/K),
    `eval_every` = 1 when K <= 5000 and 10 otherwise.

    Args:
        document: Decoded JSON document.

    Returns:
        Fully-defaulted :obj:`ExperimentConfig`.

    Raises:
        ConfigError: If the document violates the schema; `path` names the offending key.
    """
    try:
        config = ExperimentConfig.model_validate(document)
    except ValidationError as e:
        first = e.errors()[0]
        path = _error_path(first)
        raise ConfigError(f"Invalid config at `{path}`: {first['msg']}", path=path) from e

    game = build_instance(config.instance)
    _check_caps(game)
    if config.algorithm == AlgorithmKind.TURN_BASED and not isinstance(game, TurnBasedMG):
        raise ConfigError("The turn-based algorithm needs a turn-based instance", path="algorithm")
    if config.initial_state is not None and len(config.initial_state) != game.num_states:
        raise ConfigError(f"`initial_state` must list {game.num_states} probabilities", path="initial_state")

    updates: Dict[str, Any] = {}
    if config.lam is None:
        updates["lam"] = 1.0 / game.param_bound**2
    if config.epsilon is None:
        updates["epsilon"] = cce_epsilon_default(game.horizon, config.episodes)
    if config.eval_every is None:
        updates["eval_every"] = 1 if config.episodes <= DENSE_CADENCE_LIMIT else SPARSE_CADENCE
    return config.model_copy(update=updates)


def load_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Read an experiment document from disk.

    Raises:
        ConfigError: If the file cannot be read or is not a JSON object.
    """
    try:
        with open(path, "r") as f:
            document = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"Could not read config at `{path}`", path="<file>") from e
    if not isinstance(document, dict):
        raise ConfigError(f"Config at `{path}` must be a JSON object", path="<root>")
    return document


def playable_games(game: Game, algorithm: AlgorithmKind) -> Tuple[PlayableGame, LinearMixtureMG]:
    """The game the learner plays and the simultaneous-move game it is evaluated on."""
    if isinstance(game, LinearMixtureMDP):
        game = make_dummy_min_player(game)
    if isinstance(game, TurnBasedMG):
        embedded = embed_turn_based(game)
        return (game if algorithm == AlgorithmKind.TURN_BASED else embedded), embedded
    return game, game


def learner_config(config: ExperimentConfig, game: Game) -> LearnerConfig:
    """Learner hyper-parameters of a resolved experiment."""
    assert config.lam is not None and config.epsilon is not None
    return LearnerConfig(
        lam=config.lam,
        delta=config.delta,
        horizon=game.horizon,
        episodes=config.episodes,
        cce_epsilon=config.epsilon,
        param_bound=game.param_bound,
        variance_floor=config.variance_floor,
        beta_constants=config.beta_constants,
        beta_scale=config.beta_scale,
        initial_state=None if config.initial_state is None else tuple(config.initial_state),
        retain_tables=config.monitor,
    )


def evaluated_episodes(episodes: int, eval_every: int) -> List[int]:
    """1-based episodes that get a CSV row: every `eval_every`-th one and the last."""
    return [k for k in range(1, episodes + 1) if k % eval_every == 0 or k == episodes]


@dataclass
class RunSummary:
    """Outcome of one seeded run.

    Args:
        run_index: Position of the run in the experiment.
        seed: Learner seed.
        table: Per-episode rows at the evaluated episodes, columns `CSV_COLUMNS`.
        gaps: Duality gap of every episode.
        regret: Cumulative regret after the last episode.
        certificate: Episode with the smallest gap.
        membership_holds: Confidence-set membership at every episode (None without monitoring).
        e1_holds: Martingale event (None without monitoring).
        e2_holds: Variance-sum event (None without monitoring).
        sandwich_holds: Optimism sandwich at every episode (None without monitoring).
        variance_offset_fraction: Share of visited steps within the offset (None without monitoring).
        wall_time: Seconds spent on the run; logged only.
    """

    run_index: int
    seed: int
    table: pd.DataFrame
    gaps: np.ndarray
    regret: float
    certificate: Certificate
    membership_holds: Optional[bool]
    e1_holds: Optional[bool]
    e2_holds: Optional[bool]
    sandwich_holds: Optional[bool]
    variance_offset_fraction: Optional[float]
    wall_time: float

    def to_document(self) -> Dict[str, Any]:
        return {
            "run_index": self.run_index,
            "seed": self.seed,
            "regret": self.regret,
            "mean_gap": float(np.mean(self.gaps)),
            "certificate": {"episode": self.certificate.episode, "gap": self.certificate.gap},
            "membership": self.membership_holds,
            "e1": self.e1_holds,
            "e2": self.e2_holds,
            "sandwich": self.sandwich_holds,
            "variance_offset_fraction": self.variance_offset_fraction,
        }


def run_seed(
    config: ExperimentConfig, game: Game, run_index: int, seed: int, quiet: bool = False
) -> RunSummary:
    """Play all episodes of one seeded run and evaluate them exactly."""
    start = time.perf_counter()
    play_game, eval_game = playable_games(game, config.algorithm)
    learner = NashVTRLearner(
        game=play_game, config=learner_config(config, play_game), seed=seed, algorithm=config.algorithm
    )
    assert config.eval_every is not None and config.epsilon is not None
    rows = set(evaluated_episodes(config.episodes, config.eval_every))
    ledger = RegretLedger()
    monitor = EventMonitor(mg=eval_game, delta=config.delta) if config.monitor else None
    membership_all, sandwich_all = True, True
    offsets_checked = offsets_within = 0
    records: List[Dict[str, Any]] = []

    for k in tqdm(range(1, config.episodes + 1), desc=f"run {run_index}", disable=quiet, leave=False):
        membership = None
        if monitor is not None:
            membership = confidence_membership(learner.regression, eval_game.theta_star, learner.betas().beta0)
            membership_all = membership_all and membership.member
        record = learner.play_episode()
        gap = episode_gap(eval_game, record.policy_max, record.policy_min, record.initial_state)
        cum_regret = ledger.record(gap)
        row: Dict[str, Any] = {
            "episode": k,
            "gap": gap,
            "cum_regret": cum_regret,
            "v_up_s1": record.v_up_init,
            "v_lo_s1": record.v_lo_init,
            "conf_member": None,
            "e1_margin": math.nan,
            "e2_margin": math.nan,
        }
        if monitor is not None and membership is not None:
            margins = monitor.observe(record)
            sandwich = optimism_sandwich(eval_game, record, config.epsilon)
            sandwich_all = sandwich_all and sandwich.holds
            offsets = variance_offset_check(eval_game, record)
            offsets_checked += offsets.checked
            offsets_within += offsets.within
            row.update(conf_member=int(membership.member), e1_margin=margins.e1_margin, e2_margin=margins.e2_margin)
        if k in rows:
            records.append(row)

    table = pd.DataFrame.from_records(records, columns=CSV_COLUMNS)
    table["conf_member"] = pd.array([r["conf_member"] for r in records], dtype="Int64")
    wall_time = time.perf_counter() - start
    logger.info("Run %d (seed %d) finished: regret %.6f in %.2fs", run_index, seed, ledger.regret, wall_time)
    monitored = monitor is not None
    return RunSummary(
        run_index=run_index,
        seed=seed,
        table=table,
        gaps=np.asarray(ledger.gaps),
        regret=ledger.regret,
        certificate=ledger.certificate(),
        membership_holds=membership_all if monitored else None,
        e1_holds=monitor.e1_holds() if monitor is not None else None,
        e2_holds=monitor.e2_holds() if monitor is not None else None,
        sandwich_holds=sandwich_all if monitored else None,
        variance_offset_fraction=(offsets_within / offsets_checked if offsets_checked else 1.0) if monitored else None,
        wall_time=wall_time,
    )


def _frequency(flags: Sequence[Optional[bool]]) -> Optional[float]:
    known = [f for f in flags if f is not None]
    return float(np.mean(known)) if known else None


def package_version() -> str:
    try:
        return metadata.version("nash-vtr")
    except metadata.PackageNotFoundError:
        return "unknown"


def aggregate(config: ExperimentConfig, summaries: Sequence[RunSummary]) -> Dict[str, Any]:
    """Build the JSON summary: config echo, per-run stats, regret curves and event frequencies.

    Curves are pointwise mean/min/max of the cumulative regret over runs at the evaluated
    episodes.
    """
    ordered = sorted(summaries, key=lambda s: s.run_index)
    curves: Dict[str, Any] = {"episode": [], "mean": [], "min": [], "max": []}
    if ordered:
        stacked = np.stack([s.table["cum_regret"].to_numpy(dtype=float) for s in ordered])
        curves = {
            "episode": [int(k) for k in ordered[0].table["episode"]],
            "mean": stacked.mean(axis=0).tolist(),
            "min": stacked.min(axis=0).tolist(),
            "max": stacked.max(axis=0).tolist(),
        }
    return {
        "version": package_version(),
        "config": config.model_dump(mode="json", by_alias=True),
        "eval_every": config.eval_every,
        "runs": [s.to_document() for s in ordered],
        "curves": curves,
        "event_frequencies": {
            "membership": _frequency([s.membership_holds for s in ordered]),
            "e1": _frequency([s.e1_holds for s in ordered]),
            "e2": _frequency([s.e2_holds for s in ordered]),
            "sandwich": _frequency([s.sandwich_holds for s in ordered]),
        },
    }


def emit_outputs(summaries: Sequence[RunSummary], document: Dict[str, Any], out_dir: Union[str, Path]) -> List[Path]:
    """Write one CSV per run and the JSON summary into `out_dir`.

    Returns:
        Paths of the written files.

    Raises:
        OutputError: If a file cannot be written.
    """
    out = Path(out_dir)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OutputError(f"Could not create output directory `{out}`") from e
    for summary in sorted(summaries, key=lambda s: s.run_index):
        path = out / f"run_{summary.run_index:03d}.csv"
        try:
            summary.table.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        except OSError as e:
            raise OutputError(f"Could not write run table `{path}`") from e
        written.append(path)
    path = out / SUMMARY_FILENAME
    try:
        with open(path, "w") as f:
            json.dump(document, f, indent=2)
            f.write("\n")
    except OSError as e:
        raise OutputError(f"Could not write summary `{path}`") from e
    written.append(path)
    return written


@dataclass
class ExperimentResult:
    """Per-run summaries and the aggregate document of an experiment."""

    summaries: List[RunSummary]
    document: Dict[str, Any]


def run_experiment(
    config: ExperimentConfig, out_dir: Optional[Union[str, Path]] = None, quiet: bool = False
) -> ExperimentResult:
    """Run every seed of a resolved experiment concurrently and aggregate the results.

    When `out_dir` is given the outputs are written there; if some runs fail, the outputs of the
    successful ones are still written before the failure is raised.

    Args:
        config: Experiment resolved by `parse_config`.
        out_dir: Output directory, or None to skip writing.
        quiet: Disable progress bars.

    Returns:
        :obj:`ExperimentResult`.

    Raises:
        ExperimentRunError: If any run fails.
    """
    game = build_instance(config.instance)
    seeds = config.run_seeds
    start = time.perf_counter()
    summaries: List[RunSummary] = []
    failed: List[int] = []
    errors: List[BaseException] = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=config.workers) as executor:
        future_to_run = {
            executor.submit(run_seed, config, game, i, seed, quiet): (i, seed) for i, seed in enumerate(seeds)
        }
        for future in concurrent.futures.as_completed(future_to_run.keys()):
            _, seed = future_to_run[future]
            try:
                summaries.append(future.result())
            except Exception as e:
                logger.error("Run with seed %d failed: %s", seed, e)
                failed.append(seed)
                errors.append(e)

    summaries.sort(key=lambda s: s.run_index)
    document = aggregate(config, summaries)
    logger.info("Experiment finished %d/%d runs in %.2fs", len(summaries), len(seeds), time.perf_counter() - start)
    if out_dir is not None:
        emit_outputs(summaries, document, out_dir)
    if failed:
        raise ExperimentRunError(
            f"{len(failed)} of {len(seeds)} runs failed\nFailed seeds: {sorted(failed)}", failed_seeds=sorted(failed)
        ) from errors[0]
    return ExperimentResult(summaries=summaries, document=document)


def regret_growth_slope(episodes: Sequence[int], regrets: Sequence[float]) -> float:
    """Least-squares slope of log regret against log episode count.

    Raises:
        ValueError: If fewer than two points are given or a value is not positive.
    """
    x = np.asarray(episodes, dtype=float)
    y = np.asarray(regrets, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("Need at least two (episodes, regret) points of matching length")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("Episode counts and regrets must be positive")
    slope, _ = np.polyfit(np.log(x), np.log(y), 1)
    return float(slope)
