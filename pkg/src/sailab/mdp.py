"""Exact finite-MDP machinery: returns, Bellman backups, advantage learning.

Values use the max convention ``V(s) = max_a Q(s, a)`` everywhere. Argmax ties
are broken toward the lowest action index. Terminal states are absorbing with
zero reward and contribute no continuation value.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

DEFAULT_TOL = 1e-10
MAX_ITERATIONS = 1_000_000


class ConfigurationError(ValueError):
    """Inputs that violate an operator's preconditions."""


class ConvergenceError(RuntimeError):
    pass


class MdpParseError(ValueError):
    def __init__(self, message: str, lineno: int | None = None, path: str | None = None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


@dataclass(frozen=True)
class TabularMdp:
    transition: np.ndarray  # P[s, a, s']
    reward: np.ndarray  # R[s, a]
    gamma: float
    terminal: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=np.float64)
        R = np.asarray(self.reward, dtype=np.float64)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ConfigurationError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ConfigurationError(f"reward shape {R.shape} does not match transition {P.shape[:2]}")
        if P.shape[0] < 1 or P.shape[1] < 1:
            raise ConfigurationError("need at least one state and one action")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigurationError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.any(P < 0.0) or np.any(P > 1.0):
            raise ConfigurationError("transition probabilities must lie in [0, 1]")
        if np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ConfigurationError("transition rows must sum to 1 (within 1e-12)")
        if not np.all(np.isfinite(R)):
            raise ConfigurationError("rewards must be finite")
        term = np.zeros(P.shape[0], dtype=bool) if self.terminal is None else np.asarray(self.terminal, dtype=bool)
        if term.shape != (P.shape[0],):
            raise ConfigurationError(f"terminal flags must have shape ({P.shape[0]},)")
        for s in np.flatnonzero(term):
            if np.any(P[s, :, s] != 1.0) or np.any(R[s] != 0.0):
                raise ConfigurationError(f"terminal state {s} must self-loop with zero reward")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "terminal", term)
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


def discounted_returns(rewards: Sequence[float], gamma: float) -> np.ndarray:
    """Discounted return-to-go for every step, in one backward pass.

    ``out[t] = sum_{t' >= t} gamma**(t' - t) * rewards[t']``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    out = np.empty_like(r)
    acc = 0.0
    for t in range(len(r) - 1, -1, -1):
        acc = r[t] + gamma * acc
        out[t] = acc
    return out


def state_values(q: np.ndarray) -> np.ndarray:
    return np.max(q, axis=1)


def _check_q(q: np.ndarray, mdp: TabularMdp) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (mdp.n_states, mdp.n_actions):
        raise ConfigurationError(f"Q shape {q.shape} does not match MDP ({mdp.n_states}, {mdp.n_actions})")
    return q


def bellman_optimality_backup(q: np.ndarray, mdp: TabularMdp) -> np.ndarray:
    q = _check_q(q, mdp)
    v_next = np.where(mdp.terminal, 0.0, state_values(q))
    return mdp.reward + mdp.gamma * (mdp.transition @ v_next)


def al_backup(q: np.ndarray, mdp: TabularMdp, alpha: float) -> np.ndarray:
    """Advantage-learning backup: ``T*q + alpha * (q - max_a q)``."""
    if not 0.0 <= alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1), got {alpha}")
    q = _check_q(q, mdp)
    out = bellman_optimality_backup(q, mdp)
    if alpha == 0.0:
        return out
    return out + alpha * (q - state_values(q)[:, None])


def _iterate(backup, q0: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    if tol <= 0:
        raise ConfigurationError("tol must be positive")
    q = q0
    for _ in range(max_iter):
        q_new = backup(q)
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    raise ConvergenceError(f"no convergence within {max_iter} iterations")


def value_iteration(mdp: TabularMdp, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITERATIONS) -> np.ndarray:
    """Q* up to a sup-norm Bellman residual below ``tol``."""
    # Stop when the step change is below tol*(1-gamma) so the residual of the
    # returned iterate is below tol by the contraction property.
    q = _iterate(lambda x: bellman_optimality_backup(x, mdp),
                 np.zeros((mdp.n_states, mdp.n_actions)),
                 tol * (1.0 - mdp.gamma) if mdp.gamma > 0 else tol, max_iter)
    return q


def al_fixed_point(mdp: TabularMdp, alpha: float, tol: float = DEFAULT_TOL,
                   max_iter: int = MAX_ITERATIONS) -> np.ndarray:
    if not 0.0 <= alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in [0, 1), got {alpha}")
    contraction = max(mdp.gamma, alpha)
    step_tol = tol * (1.0 - contraction) if contraction > 0 else tol
    return _iterate(lambda x: al_backup(x, mdp, alpha),
                    np.zeros((mdp.n_states, mdp.n_actions)), step_tol, max_iter)


def action_gap(q: np.ndarray, s: int) -> np.ndarray:
    row = np.asarray(q, dtype=np.float64)[s]
    return row.max() - row


def advantage(q: np.ndarray, s: int, a: int) -> float:
    row = np.asarray(q, dtype=np.float64)[s]
    return float(row[a] - row.max())


def greedy_policy(q: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximal index, which is the tie-break we want.
    return np.argmax(np.asarray(q), axis=1)


def random_mdp(n_states: int, n_actions: int, gamma: float, rng: np.random.Generator) -> TabularMdp:
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    R = rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return TabularMdp(P, R, gamma)


def parse_mdp(text: str, path: str | None = None) -> TabularMdp:
    """Parse the plain-text MDP format.

    First non-comment line: ``states actions gamma``. Then one line per
    (s, a) pair in state-major order: the reward followed by ``states``
    transition probabilities. An optional ``terminal i j ...`` line flags
    absorbing states. ``#`` starts a comment.
    """
    header = None
    rows: list[tuple[int, list[float]]] = []
    terminal: list[int] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0] == "terminal":
            try:
                terminal.extend(int(t) for t in tokens[1:])
            except ValueError:
                raise MdpParseError(f"bad terminal state list: {line!r}", lineno, path) from None
            continue
        if header is None:
            if len(tokens) != 3:
                raise MdpParseError("header must be 'states actions gamma'", lineno, path)
            try:
                header = (int(tokens[0]), int(tokens[1]), float(tokens[2]))
            except ValueError:
                raise MdpParseError(f"malformed header: {line!r}", lineno, path) from None
            if header[0] < 1 or header[1] < 1:
                raise MdpParseError("states and actions must be positive", lineno, path)
            continue
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            raise MdpParseError(f"non-numeric entry: {line!r}", lineno, path) from None
        if len(values) != header[0] + 1:
            raise MdpParseError(f"expected reward + {header[0]} probabilities, got {len(values)} values",
                                lineno, path)
        rows.append((lineno, values))
    if header is None:
        raise MdpParseError("missing header line", None, path)
    n_s, n_a, gamma = header
    if len(rows) != n_s * n_a:
        last = rows[-1][0] if rows else None
        raise MdpParseError(f"expected {n_s * n_a} (state, action) lines, got {len(rows)}", last, path)
    data = np.array([v for _, v in rows]).reshape(n_s, n_a, n_s + 1)
    for idx, (lineno, values) in enumerate(rows):
        probs = np.asarray(values[1:])
        if np.any(probs < 0) or np.any(probs > 1) or abs(probs.sum() - 1.0) > 1e-12:
            raise MdpParseError("transition probabilities must be in [0, 1] and sum to 1", lineno, path)
    term = np.zeros(n_s, dtype=bool)
    for s in terminal:
        if not 0 <= s < n_s:
            raise MdpParseError(f"terminal state {s} out of range", None, path)
        term[s] = True
    try:
        return TabularMdp(data[:, :, 1:], data[:, :, 0], gamma, term)
    except ConfigurationError as exc:
        raise MdpParseError(str(exc), None, path) from None


def load_mdp(path: str | Path) -> TabularMdp:
    path = Path(path)
    return parse_mdp(path.read_text(), str(path))


def format_mdp(mdp: TabularMdp) -> str:
    lines = [f"{mdp.n_states} {mdp.n_actions} {mdp.gamma!r}"]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(" ".join(repr(float(x)) for x in [mdp.reward[s, a], *mdp.transition[s, a]]))
    if mdp.terminal.any():
        lines.append("terminal " + " ".join(str(s) for s in np.flatnonzero(mdp.terminal)))
    return "\n".join(lines) + "\n"
