""" Matrix-game equilibria on a dense simplex core.

This module computes the per-state equilibria the learner plans with: epsilon-coarse correlated
equilibria (CCE) of general-sum bimatrix payoffs, exact values of zero-sum matrix games, and the
greedy point-mass specialization used on turn-based embeddings. All of them reduce to small
dense linear programs solved by `lp_solve`, a two-phase tableau simplex with Bland's rule.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from nash_vtr.data_structures import DIST_TOL, NEGATIVE_PROB_TOL, FloatArray, LPStatus

logger = logging.getLogger(__name__)

LP_TOL: float = 1e-9
LP_MAX_ITER: int = 1_000_000
DUALITY_TOL: float = 1e-8
CCE_SLACK_TOL: float = 1e-9
FEASIBILITY_TOL: float = 1e-7
DUMMY_AXIS_TOL: float = 1e-12


class LPSolveError(Exception):
    pass


class EquilibriumInvariantError(Exception):
    pass


@dataclass(frozen=True)
class LPSolution:
    """Result of `lp_solve`.

    Args:
        status: Termination status.
        x: Optimal point (None unless `status` is OPTIMAL).
        objective: Optimal objective value (None unless `status` is OPTIMAL).
        iterations: Total pivots over both phases.
    """

    status: LPStatus
    x: Optional[FloatArray]
    objective: Optional[float]
    iterations: int


@dataclass(frozen=True)
class JointDistribution:
    """A joint distribution over max-player and min-player actions, shape (A_max, A_min)."""

    table: FloatArray

    @property
    def shape(self) -> Tuple[int, int]:
        """`tuple`: (A_max, A_min)."""
        return self.table.shape[0], self.table.shape[1]


@dataclass(frozen=True)
class MarginalPair:
    """Row and column marginals of a :obj:`JointDistribution`."""

    row: FloatArray
    col: FloatArray


@dataclass(frozen=True)
class MatrixGameSolution:
    """Value and optimal strategies of a zero-sum matrix game (row player maximizes)."""

    value: float
    row_strategy: FloatArray
    col_strategy: FloatArray


CCESolver = Callable[[FloatArray, FloatArray, float], JointDistribution]


def _pivot(tableau: FloatArray, row: int, col: int) -> None:
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])


def _simplex(tableau: FloatArray, basis: FloatArray, num_cols: int, tol: float, max_iter: int) -> Tuple[LPStatus, int]:
    # Maximization tableau: last row holds z_j - c_j, last column the right-hand side.
    # Tolerances scale with the entries the phase starts from.
    pivot_tol = tol * max(1.0, float(np.abs(tableau[:-1, :num_cols]).max(initial=0.0)))
    cost_tol = tol * max(1.0, float(np.abs(tableau[-1, :num_cols]).max(initial=0.0)))
    for it in range(max_iter):
        candidates = np.flatnonzero(tableau[-1, :num_cols] < -cost_tol)
        if candidates.size == 0:
            return LPStatus.OPTIMAL, it
        col = int(candidates[0])
        column = tableau[:-1, col]
        rows = np.flatnonzero(column > pivot_tol)
        if rows.size == 0:
            return LPStatus.UNBOUNDED, it
        ratios = tableau[rows, -1] / column[rows]
        best = ratios.min()
        ties = rows[ratios <= best + tol * max(1.0, abs(best))]
        row = int(ties[np.argmin(basis[ties])])
        _pivot(tableau, row, col)
        basis[row] = col
    raise LPSolveError(f"Simplex did not terminate within {max_iter} iterations")


def _set_objective(tableau: FloatArray, basis: FloatArray, c: FloatArray) -> None:
    tableau[-1, :] = 0.0
    tableau[-1, : len(c)] = -c
    for i, j in enumerate(basis):
        if tableau[-1, j] != 0.0:
            tableau[-1] -= tableau[-1, j] * tableau[i]


def lp_solve(
    c: FloatArray,
    a_ub: Optional[FloatArray] = None,
    b_ub: Optional[FloatArray] = None,
    a_eq: Optional[FloatArray] = None,
    b_eq: Optional[FloatArray] = None,
    tol: float = LP_TOL,
    max_iter: int = LP_MAX_ITER,
) -> LPSolution:
    """Maximize `c @ x` subject to `a_ub @ x <= b_ub`, `a_eq @ x == b_eq` and `x >= 0`.

    Dense two-phase tableau simplex. Entering and leaving variables follow Bland's rule, so the
    method terminates on degenerate problems. Phase one drives artificial variables out of the
    basis and drops redundant equality rows before phase two starts.

    Args:
        c: Objective coefficients, length n.
        a_ub: Inequality matrix of shape (m_ub, n).
        b_ub: Inequality right-hand side, length m_ub.
        a_eq: Equality matrix of shape (m_eq, n).
        b_eq: Equality right-hand side, length m_eq.
        tol: Pivoting and optimality tolerance on reduced costs.
        max_iter: Pivot cap per phase.

    Returns:
        :obj:`LPSolution`.

    Raises:
        ValueError: If the constraint shapes are inconsistent.
        LPSolveError: If the iteration cap is reached or inputs are non-finite.
    """
    c = np.asarray(c, dtype=float)
    n = c.shape[0]
    a_ub = np.zeros((0, n)) if a_ub is None else np.atleast_2d(np.asarray(a_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    a_eq = np.zeros((0, n)) if a_eq is None else np.atleast_2d(np.asarray(a_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    if a_ub.shape != (b_ub.shape[0], n) or a_eq.shape != (b_eq.shape[0], n):
        raise ValueError(f"Constraint shapes {a_ub.shape}/{a_eq.shape} do not match {n} variables")
    for name, arr in (("c", c), ("a_ub", a_ub), ("b_ub", b_ub), ("a_eq", a_eq), ("b_eq", b_eq)):
        if not np.all(np.isfinite(arr)):
            raise LPSolveError(f"`{name}` contains non-finite entries")

    m_ub, m_eq = a_ub.shape[0], a_eq.shape[0]
    m = m_ub + m_eq
    if m == 0:
        if np.any(c > tol):
            return LPSolution(status=LPStatus.UNBOUNDED, x=None, objective=None, iterations=0)
        return LPSolution(status=LPStatus.OPTIMAL, x=np.zeros(n), objective=0.0, iterations=0)

    # Columns: originals, one slack per inequality, one artificial per row, right-hand side.
    num_struct = n + m_ub
    tableau = np.zeros((m + 1, num_struct + m + 1))
    tableau[:m_ub, :n] = a_ub
    tableau[:m_ub, n:num_struct] = np.eye(m_ub)
    tableau[m_ub:m, :n] = a_eq
    tableau[:m, -1] = np.concatenate([b_ub, b_eq])
    flip = tableau[:m, -1] < 0
    tableau[:m][flip] *= -1.0
    tableau[:m, num_struct : num_struct + m] = np.eye(m)
    basis = np.arange(num_struct, num_struct + m)

    phase_one_c = np.concatenate([np.zeros(num_struct), -np.ones(m)])
    _set_objective(tableau, basis, phase_one_c)
    status, it_one = _simplex(tableau, basis, num_struct + m, tol, max_iter)
    if status != LPStatus.OPTIMAL:
        raise LPSolveError("Phase one of the simplex is unbounded")
    infeasibility = -tableau[-1, -1]
    if infeasibility > FEASIBILITY_TOL * max(1.0, float(np.abs(tableau[:m, -1]).sum())):
        return LPSolution(status=LPStatus.INFEASIBLE, x=None, objective=None, iterations=it_one)

    keep = np.ones(m, dtype=bool)
    for i in range(m):
        if basis[i] < num_struct:
            continue
        nonzero = np.flatnonzero(np.abs(tableau[i, :num_struct]) > tol)
        if nonzero.size:
            col = int(nonzero[0])
            _pivot(tableau, i, col)
            basis[i] = col
        else:
            keep[i] = False
    rows = np.concatenate([np.flatnonzero(keep), [m]])
    tableau = np.delete(tableau[rows], np.s_[num_struct : num_struct + m], axis=1)
    basis = basis[keep]
    np.maximum(tableau[:-1, -1], 0.0, out=tableau[:-1, -1])

    _set_objective(tableau, basis, np.concatenate([c, np.zeros(m_ub)]))
    status, it_two = _simplex(tableau, basis, num_struct, tol, max_iter)
    iterations = it_one + it_two
    if status != LPStatus.OPTIMAL:
        return LPSolution(status=status, x=None, objective=None, iterations=iterations)

    solution = np.zeros(num_struct)
    solution[basis] = tableau[:-1, -1]
    x = solution[:n]
    return LPSolution(status=LPStatus.OPTIMAL, x=x, objective=float(c @ x), iterations=iterations)


def _clean_distribution(weights: FloatArray) -> FloatArray:
    cleaned = np.where(weights < NEGATIVE_PROB_TOL, 0.0, weights)
    total = cleaned.sum()
    if total <= 0:
        raise EquilibriumInvariantError("Solver returned a distribution with no positive mass")
    return cleaned / total


def _check_tables(q_max: FloatArray, q_min: FloatArray) -> Tuple[FloatArray, FloatArray]:
    q_max = np.asarray(q_max, dtype=float)
    q_min = np.asarray(q_min, dtype=float)
    if q_max.ndim != 2 or q_max.shape != q_min.shape:
        raise ValueError(f"Payoff tables must be 2-D and share a shape, got {q_max.shape} and {q_min.shape}")
    if not (np.all(np.isfinite(q_max)) and np.all(np.isfinite(q_min))):
        raise ValueError("Payoff tables must be finite")
    return q_max, q_min


def epsilon_cce(q_max: FloatArray, q_min: FloatArray, epsilon: float) -> JointDistribution:
    """Compute an epsilon-coarse correlated equilibrium of a bimatrix game.

    The max-player maximizes `q_max` and the min-player minimizes `q_min`. The joint
    distribution is found by maximizing the smallest slack over both families of deviation
    constraints; a solution whose slack is at least `-epsilon` is accepted. A Nash equilibrium
    is a 0-CCE, so the program is always feasible.

    Args:
        q_max: Max-player payoff table of shape (A_max, A_min).
        q_min: Min-player payoff table of the same shape.
        epsilon: Nonnegative tolerance.

    Returns:
        :obj:`JointDistribution` with entries below 1e-12 clamped to zero.

    Raises:
        ValueError: If the tables are malformed or `epsilon` is negative.
        EquilibriumInvariantError: If the program is reported infeasible or the slack is too small.
    """
    q_max, q_min = _check_tables(q_max, q_min)
    if epsilon < 0:
        raise ValueError(f"`epsilon` must be nonnegative, got {epsilon}")
    num_a, num_b = q_max.shape
    if num_a * num_b == 1:
        return JointDistribution(table=np.ones((1, 1)))

    # Deviation gain of the max-player switching to a' is sum sigma(a, b) [q(a', b) - q(a, b)].
    gains_max = np.stack([(q_max[dev][None, :] - q_max).ravel() for dev in range(num_a)])
    gains_min = np.stack([(q_min - q_min[:, dev][:, None]).ravel() for dev in range(num_b)])
    gains = np.concatenate([gains_max, gains_min])
    # The slack t is free; shift it by a bound on every gain so the LP variable is nonnegative.
    shift = float(np.ptp(q_max) + np.ptp(q_min)) + 1.0

    num_vars = num_a * num_b + 1
    a_ub = np.concatenate([gains, np.ones((gains.shape[0], 1))], axis=1)
    b_ub = np.full(gains.shape[0], shift)
    a_eq = np.concatenate([np.ones((1, num_a * num_b)), np.zeros((1, 1))], axis=1)
    c = np.zeros(num_vars)
    c[-1] = 1.0
    solution = lp_solve(c, a_ub=a_ub, b_ub=b_ub, a_eq=a_eq, b_eq=np.ones(1))
    if solution.status != LPStatus.OPTIMAL or solution.x is None:
        raise EquilibriumInvariantError(f"CCE program terminated with status {solution.status.name}")

    slack = solution.x[-1] - shift
    if slack < -epsilon - CCE_SLACK_TOL:
        raise EquilibriumInvariantError(f"CCE slack {slack:.3e} is below -epsilon={-epsilon:.3e}")
    table = _clean_distribution(solution.x[:-1]).reshape(num_a, num_b)
    return JointDistribution(table=table)


def marginals(sigma: JointDistribution) -> MarginalPair:
    """Row and column sums of a joint distribution."""
    return MarginalPair(row=sigma.table.sum(axis=1), col=sigma.table.sum(axis=0))


def cce_violation(sigma: JointDistribution, q_max: FloatArray, q_min: FloatArray) -> float:
    """Largest unilateral deviation gain of either player against `sigma`."""
    q_max, q_min = _check_tables(q_max, q_min)
    table = sigma.table
    pair = marginals(sigma)
    gain_max = float(np.max(q_max @ pair.col) - (table * q_max).sum())
    gain_min = float((table * q_min).sum() - np.min(pair.row @ q_min))
    return max(gain_max, gain_min)


def verify_cce(sigma: JointDistribution, q_max: FloatArray, q_min: FloatArray, epsilon: float) -> Tuple[bool, float]:
    """Check both CCE constraint families exactly.

    Returns:
        Pair of (passes at tolerance `epsilon + 1e-9`, worst violation).
    """
    if sigma.table.shape != np.shape(q_max):
        raise ValueError(f"`sigma` shape {sigma.table.shape} does not match payoffs {np.shape(q_max)}")
    worst = cce_violation(sigma, q_max, q_min)
    return worst <= epsilon + CCE_SLACK_TOL, worst


def zero_sum_value(q: FloatArray) -> MatrixGameSolution:
    """Solve a zero-sum matrix game where the row player maximizes.

    The payoff is rescaled affinely onto [1, 2], then the row player's program and the column
    player's program are solved separately; their optimal values must agree within 1e-8 on the
    rescaled table. A constant table is solved directly with uniform strategies.

    Args:
        q: Payoff table of shape (A_max, A_min).

    Returns:
        :obj:`MatrixGameSolution`.

    Raises:
        LPSolveError: If either program fails or strong duality does not hold numerically.
    """
    q = np.asarray(q, dtype=float)
    if q.ndim != 2 or not np.all(np.isfinite(q)):
        raise ValueError(f"`q` must be a finite 2-D table, got shape {q.shape}")
    num_a, num_b = q.shape
    low = float(q.min())
    spread = float(np.ptp(q))
    if spread == 0.0:
        uniform_row, uniform_col = np.full(num_a, 1.0 / num_a), np.full(num_b, 1.0 / num_b)
        return MatrixGameSolution(value=low, row_strategy=uniform_row, col_strategy=uniform_col)
    scaled = (q - low) / spread + 1.0

    # Row player: max v s.t. v - x^T q[:, b] <= 0 for all b, sum x = 1.
    c = np.zeros(num_a + 1)
    c[-1] = 1.0
    a_ub = np.concatenate([-scaled.T, np.ones((num_b, 1))], axis=1)
    a_eq = np.concatenate([np.ones((1, num_a)), np.zeros((1, 1))], axis=1)
    primal = lp_solve(c, a_ub=a_ub, b_ub=np.zeros(num_b), a_eq=a_eq, b_eq=np.ones(1))

    # Column player: min w s.t. q[a, :] y - w <= 0 for all a, sum y = 1.
    c = np.zeros(num_b + 1)
    c[-1] = -1.0
    a_ub = np.concatenate([scaled, -np.ones((num_a, 1))], axis=1)
    a_eq = np.concatenate([np.ones((1, num_b)), np.zeros((1, 1))], axis=1)
    dual = lp_solve(c, a_ub=a_ub, b_ub=np.zeros(num_a), a_eq=a_eq, b_eq=np.ones(1))

    if primal.x is None or dual.x is None:
        raise LPSolveError(f"Matrix game programs terminated with {primal.status.name}/{dual.status.name}")
    v, w = float(primal.x[-1]), float(dual.x[-1])
    if abs(v - w) > DUALITY_TOL * max(1.0, abs(v)):
        raise LPSolveError(f"Primal value {v:.12g} and dual value {w:.12g} disagree")
    row = _clean_distribution(primal.x[:-1])
    col = _clean_distribution(dual.x[:-1])
    return MatrixGameSolution(value=(v - 1.0) * spread + low, row_strategy=row, col_strategy=col)


def _constant_along(q: FloatArray, axis: int) -> bool:
    return bool(np.all(np.abs(q - q.take([0], axis=axis)) <= DUMMY_AXIS_TOL * max(1.0, float(np.abs(q).max()))))


def greedy_turn_cce(q_max: FloatArray, q_min: FloatArray, epsilon: float) -> JointDistribution:
    """Point-mass CCE for payoffs where one player's action is irrelevant.

    When both tables are constant along the min-player axis, the max-player acts alone: the
    result is the point mass on the lowest-index maximizer of `q_max` paired with column 0.
    When both are constant along the max-player axis, the min-player acts alone and the result
    pairs row 0 with the lowest-index minimizer of `q_min`. Any other payoff falls back to
    `epsilon_cce`.

    Args:
        q_max: Max-player payoff table of shape (A_max, A_min).
        q_min: Min-player payoff table of the same shape.
        epsilon: Tolerance forwarded to the fallback solver.

    Returns:
        :obj:`JointDistribution`.
    """
    q_max, q_min = _check_tables(q_max, q_min)
    table = np.zeros(q_max.shape)
    if _constant_along(q_max, 1) and _constant_along(q_min, 1):
        table[int(np.argmax(q_max[:, 0])), 0] = 1.0
    elif _constant_along(q_max, 0) and _constant_along(q_min, 0):
        table[0, int(np.argmin(q_min[0, :]))] = 1.0
    else:
        logger.debug("Payoffs depend on both actions; falling back to the CCE program")
        return epsilon_cce(q_max, q_min, epsilon)
    return JointDistribution(table=table)


def is_distribution(weights: FloatArray) -> bool:
    """Whether `weights` is nonnegative and sums to one within tolerance."""
    weights = np.asarray(weights, dtype=float)
    return bool(weights.min() >= -NEGATIVE_PROB_TOL and abs(weights.sum() - 1.0) <= DIST_TOL)
