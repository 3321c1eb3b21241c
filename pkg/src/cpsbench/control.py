"""Controller design and execution.

Design path: central-difference linearization of the plant, exact
zero-order-hold discretization, discrete algebraic Riccati equation by
fixed-point iteration, LQR gain. Execution path: model-based prediction
across network delay and loss, lookahead input sequences, and two
synchronization laws (stacked LQR and nearest-neighbor consensus).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .exceptions import ConvergenceError, HistoryError, InvalidArgumentError
from .plant import Disturbance, PlantParams, PlantState, cartpole_derivative

UPRIGHT = np.zeros(4)
HANGING = np.array([math.pi, 0.0, 0.0, 0.0])
DEFAULT_Q = np.diag([5.0, 10.0, 0.1, 0.5])
DEFAULT_R = 1.0


@dataclass(frozen=True)
class LinearModel:
    """Discrete deviation model ``dx+ = A dx + B du`` about ``(x_eq, u_eq)``."""

    A: np.ndarray
    B: np.ndarray
    Ts: float
    x_eq: np.ndarray = field(default_factory=lambda: UPRIGHT.copy())
    u_eq: float = 0.0

    def __post_init__(self):
        if not self.Ts > 0:
            raise InvalidArgumentError("Ts must be positive")
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        B = np.asarray(self.B, dtype=float).reshape(A.shape[0], -1)
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(B))):
            raise InvalidArgumentError("model matrices must be finite")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "x_eq", np.asarray(self.x_eq, dtype=float).ravel())


@dataclass(frozen=True)
class LqrDesign:
    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray


def linearize(p: PlantParams, x_eq=UPRIGHT, u_eq: float = 0.0, h: float = 1e-6):
    """Continuous-time Jacobians ``(A_c, B_c)`` by central differences."""
    if not h > 0:
        raise InvalidArgumentError("h must be positive")
    x_eq = np.asarray(x_eq, dtype=float).ravel()
    zero = Disturbance()

    def f(x, u):
        return cartpole_derivative(PlantState.from_array(x), u, zero, p)

    if np.max(np.abs(f(x_eq, u_eq))) >= 1e-9:
        raise InvalidArgumentError(f"({x_eq}, {u_eq}) is not an equilibrium")
    A_c = np.empty((4, 4))
    for j in range(4):
        step = np.zeros(4)
        step[j] = h
        A_c[:, j] = (f(x_eq + step, u_eq) - f(x_eq - step, u_eq)) / (2 * h)
    B_c = ((f(x_eq, u_eq + h) - f(x_eq, u_eq - h)) / (2 * h)).reshape(4, 1)
    return A_c, B_c


def expm_series(M, tol: float = 1e-14) -> np.ndarray:
    """Matrix exponential by scaling, truncated Taylor series, and squaring."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    norm = np.linalg.norm(M, np.inf)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    X = M / 2.0**squarings
    result = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    k = 1
    while True:
        term = term @ X / k
        result = result + term
        if np.linalg.norm(term, np.inf) < tol:
            break
        k += 1
    for _ in range(squarings):
        result = result @ result
    return result


def discretize(A_c, B_c, Ts: float):
    """Exact zero-order-hold discretization via the augmented exponential."""
    if not Ts > 0:
        raise InvalidArgumentError("Ts must be positive")
    A_c = np.atleast_2d(np.asarray(A_c, dtype=float))
    n = A_c.shape[0]
    B_c = np.asarray(B_c, dtype=float).reshape(n, -1)
    m = B_c.shape[1]
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = A_c
    aug[:n, n:] = B_c
    E = expm_series(aug * Ts)
    return E[:n, :n], E[:n, n:]


def plant_model(p: PlantParams, Ts: float, x_eq=UPRIGHT) -> LinearModel:
    A, B = discretize(*linearize(p, x_eq, 0.0), Ts)
    return LinearModel(A, B, Ts, np.asarray(x_eq, dtype=float), 0.0)


def _as_weight(R, m):
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if R.shape == (1, 1) and m > 1:
        R = R[0, 0] * np.eye(m)
    return R


def riccati_map(A, B, Q, R, P) -> np.ndarray:
    """One application of ``P -> Q + A'PA - A'PB (R + B'PB)^-1 B'PA``."""
    PA = P @ A
    PB = P @ B
    nxt = Q + A.T @ PA - PA.T @ B @ np.linalg.solve(R + B.T @ PB, PB.T @ A)
    return 0.5 * (nxt + nxt.T)


def solve_dare(A, B, Q, R, tol: float = 1e-10, max_iter: int = 100_000) -> np.ndarray:
    """Stabilizing solution of the discrete algebraic Riccati equation.

    Iterates the Riccati map from ``P = Q`` until the max-norm residual of
    the current iterate is at most ``tol``.

    Raises
    ------
    InvalidArgumentError
        If ``Q`` is not symmetric positive semidefinite or ``R`` is not
        positive definite.
    ConvergenceError
        If the residual stays above ``tol`` after ``max_iter`` iterations.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = _as_weight(R, B.shape[1])
    if not np.allclose(Q, Q.T, atol=1e-12):
        raise InvalidArgumentError("Q must be symmetric")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.min(np.linalg.eigvalsh(Q)) < -1e-12 * scale:
        raise InvalidArgumentError("Q must be positive semidefinite")
    if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(R)) <= 0:
        raise InvalidArgumentError("R must be positive definite")
    P = 0.5 * (Q + Q.T)
    for _ in range(max_iter):
        nxt = riccati_map(A, B, Q, R, P)
        if np.max(np.abs(nxt - P)) <= tol:
            return P
        P = nxt
    raise ConvergenceError(f"Riccati iteration did not converge in {max_iter} iterations")


def lqr_gain(A, B, P, R) -> np.ndarray:
    """``K = (R + B'PB)^-1 B'PA``; the control law is ``u = u_eq - K (x - x_eq)``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    R = _as_weight(R, B.shape[1])
    P = np.asarray(P, dtype=float)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def spectral_radius(M) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def design_lqr(model: LinearModel, Q=DEFAULT_Q, R=DEFAULT_R, tol=1e-10, max_iter=100_000) -> LqrDesign:
    P = solve_dare(model.A, model.B, Q, R, tol, max_iter)
    K = lqr_gain(model.A, model.B, P, R)
    return LqrDesign(np.asarray(Q, dtype=float), _as_weight(R, model.B.shape[1]), P, K)


# -- prediction ------------------------------------------------------------

@dataclass
class PredictorState:
    """What a controller knows about one plant.

    ``inputs`` maps round numbers to the input the plant applied (or is
    believed to apply) during that round.
    """

    last_state: Optional[np.ndarray] = None
    last_round: Optional[int] = None
    inputs: Dict[int, float] = field(default_factory=dict)
    consecutive_losses: int = 0

    def receive(self, state, round_index: int, applied_input: Optional[float] = None):
        self.last_state = np.asarray(state, dtype=float).copy()
        self.last_round = round_index
        self.consecutive_losses = 0
        if applied_input is not None:
            self.inputs[round_index] = applied_input
        for r in [r for r in self.inputs if r < round_index]:
            del self.inputs[r]

    def miss(self):
        self.consecutive_losses += 1


def predict_state(pred: PredictorState, model: LinearModel, n: int) -> np.ndarray:
    """Roll the last received state ``n`` rounds forward through the model."""
    if n < 0:
        raise InvalidArgumentError("n must be non-negative")
    if pred.last_state is None:
        raise HistoryError("no state has been received yet")
    dx = pred.last_state - model.x_eq
    for k in range(n):
        r = pred.last_round + k
        if r not in pred.inputs:
            raise HistoryError(f"no input recorded for round {r}")
        dx = model.A @ dx + model.B[:, 0] * (pred.inputs[r] - model.u_eq)
    return dx + model.x_eq


def rollout_inputs(states, policy: Callable[[np.ndarray], np.ndarray], model: LinearModel,
                   lookahead: int, voltage_limit: float = math.inf) -> np.ndarray:
    """Lookahead input sequences for a group of identical agents.

    ``states`` has one row per agent. ``policy`` maps that array to one
    input per agent. Each input is saturated before it drives the model
    rollout. Returns an array of shape ``(lookahead, n_agents)``.
    """
    if lookahead < 1:
        raise InvalidArgumentError("lookahead must be at least 1")
    X = np.atleast_2d(np.asarray(states, dtype=float)).copy()
    out = np.empty((lookahead, X.shape[0]))
    for j in range(lookahead):
        u = np.clip(np.asarray(policy(X), dtype=float).reshape(-1), -voltage_limit, voltage_limit)
        out[j] = u
        if j + 1 < lookahead:
            dX = X - model.x_eq
            X = dX @ model.A.T + np.outer(u - model.u_eq, model.B[:, 0]) + model.x_eq
    return out


def stabilizing_inputs(x_hat, design: LqrDesign, model: LinearModel, lookahead: int = 1,
                       voltage_limit: float = math.inf) -> np.ndarray:
    """LQR inputs for the next ``lookahead`` rounds, starting from ``x_hat``."""
    K = design.K[0]

    def policy(X):
        return model.u_eq - (X - model.x_eq) @ K

    return rollout_inputs(x_hat, policy, model, lookahead, voltage_limit)[:, 0]


# -- synchronization -------------------------------------------------------

def sync_error(s_i: float, s_j: float) -> float:
    return s_i - s_j


def complete_graph(n: int):
    return [tuple(j for j in range(n) if j != i) for i in range(n)]


def laplacian(neighbors: Sequence[Sequence[int]]) -> np.ndarray:
    n = len(neighbors)
    L = np.zeros((n, n))
    for i, nbrs in enumerate(neighbors):
        for j in nbrs:
            L[i, j] -= 1.0
            L[i, i] += 1.0
    return L


def check_graph(neighbors: Sequence[Sequence[int]]):
    """Raise unless the neighbor relation is symmetric, loop-free and connected."""
    n = len(neighbors)
    sets = [set(nb) for nb in neighbors]
    for i, nb in enumerate(sets):
        if i in nb:
            raise InvalidArgumentError(f"agent {i} lists itself as a neighbor")
        for j in nb:
            if not 0 <= j < n:
                raise InvalidArgumentError(f"agent {i} has unknown neighbor {j}")
            if i not in sets[j]:
                raise InvalidArgumentError(f"neighbor relation not symmetric for ({i},{j})")
    seen, stack = {0}, [0]
    while stack:
        for j in sets[stack.pop()]:
            if j not in seen:
                seen.add(j)
                stack.append(j)
    if len(seen) != n:
        raise InvalidArgumentError("communication graph is not connected")


def build_augmented_sync_design(n: int, model: LinearModel, w_sync: float = 10.0, R=DEFAULT_R,
                                eps: float = 1.0, tol: float = 1e-10,
                                max_iter: int = 100_000) -> LqrDesign:
    """LQR over the stacked state of ``n`` identical agents.

    The state cost is ``w_sync * sum_{i<j} (s_i - s_j)^2`` plus
    ``eps * 0.01 * (theta_dot_i^2 + pos_dot_i^2)`` per agent; uniform
    translation of all carts is left free.
    """
    if n < 1:
        raise InvalidArgumentError("need at least one agent")
    if w_sync < 0:
        raise InvalidArgumentError("w_sync must be non-negative")
    A_aug = np.kron(np.eye(n), model.A)
    B_aug = np.kron(np.eye(n), model.B)
    Q_aug = np.kron(np.eye(n), eps * np.diag([0.0, 0.0, 0.01, 0.01]))
    pos = [4 * i + 1 for i in range(n)]
    Q_aug[np.ix_(pos, pos)] += w_sync * laplacian(complete_graph(n))
    R_aug = _as_weight(R, n)
    P = solve_dare(A_aug, B_aug, Q_aug, R_aug, tol, max_iter)
    K = lqr_gain(A_aug, B_aug, P, R_aug)
    return LqrDesign(Q_aug, R_aug, P, K)


def consensus_input(i: int, s_i: float, neighbor_positions: Sequence[float], k: float, *,
                    v_i: float = 0.0, neighbor_velocities: Optional[Sequence[float]] = None,
                    damping: float = 0.0) -> float:
    """Nearest-neighbor consensus ``-k * sum_j (s_i - s_j)``.

    With ``damping > 0`` the velocity disagreement ``-damping * sum_j
    (v_i - v_j)`` is added, which a cart with little friction needs to
    settle.
    """
    if len(neighbor_positions) == 0:
        raise InvalidArgumentError(f"agent {i} has no neighbors")
    u = -k * sum(s_i - s_j for s_j in neighbor_positions)
    if damping:
        if neighbor_velocities is None or len(neighbor_velocities) != len(neighbor_positions):
            raise InvalidArgumentError("damping needs one velocity per neighbor")
        u -= damping * sum(v_i - v_j for v_j in neighbor_velocities)
    return u


# -- estimator-style wrappers ----------------------------------------------

class LQRController(BaseEstimator):
    """Discrete LQR state feedback as an estimator.

    Parameters
    ----------
    Q : array-like of shape (n_states, n_states), default=None
        State weight; ``None`` selects ``diag(5, 10, 0.1, 0.5)``.
    R : float or array-like, default=1.0
        Input weight.
    tol, max_iter
        Riccati iteration controls.

    ``fit(A, B)`` solves the design; ``predict(X)`` maps deviation states
    (one per row) to inputs ``-K x``.
    """

    def __init__(self, Q=None, R=1.0, tol=1e-10, max_iter=100_000):
        self.Q = Q
        self.R = R
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, A, B):
        A = check_array(A)
        B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
        Q = DEFAULT_Q if self.Q is None else np.asarray(self.Q, dtype=float)
        self.P_ = solve_dare(A, B, Q, self.R, self.tol, self.max_iter)
        self.K_ = lqr_gain(A, B, self.P_, self.R)
        self.closed_loop_radius_ = spectral_radius(A - B @ self.K_)
        self.n_features_in_ = A.shape[0]
        return self

    def predict(self, X):
        check_is_fitted(self, "K_")
        X = check_array(X)
        u = -X @ self.K_.T
        return u[:, 0] if u.shape[1] == 1 else u


class ConsensusController(BaseEstimator):
    """Position consensus with optional velocity-disagreement damping.

    ``fit`` fixes the agent count and validates the graph; ``predict``
    takes one row per agent, either ``(pos,)`` or ``(pos, vel)``, and
    returns one input per agent.
    """

    def __init__(self, graph="complete", gain=2.0, damping=0.0):
        self.graph = graph
        self.gain = gain
        self.damping = damping

    def fit(self, X, y=None):
        X = check_array(np.asarray(X, dtype=float).reshape(len(X), -1))
        n = X.shape[0]
        if n < 2:
            raise InvalidArgumentError("consensus needs at least two agents")
        neighbors = complete_graph(n) if self.graph == "complete" else [tuple(nb) for nb in self.graph]
        if len(neighbors) != n:
            raise InvalidArgumentError("graph size does not match the number of agents")
        check_graph(neighbors)
        if not self.gain > 0:
            raise InvalidArgumentError("gain must be positive")
        self.neighbors_ = neighbors
        self.laplacian_ = laplacian(neighbors)
        return self

    def predict(self, X):
        check_is_fitted(self, "neighbors_")
        X = np.asarray(X, dtype=float).reshape(len(self.neighbors_), -1)
        pos = X[:, 0]
        vel = X[:, 1] if X.shape[1] > 1 else np.zeros_like(pos)
        return np.array([
            consensus_input(i, pos[i], pos[list(nb)], self.gain, v_i=vel[i],
                            neighbor_velocities=vel[list(nb)], damping=self.damping)
            for i, nb in enumerate(self.neighbors_)
        ])
