"""Value-based learners: Q-function approximators, loss variants, optimizers.

All parameters of a :class:`QFunction` live in one flat float64 vector
``theta``; named arrays (``W1``, ``b1``, ...) are views into it, and gradients
come back as flat vectors of the same shape. States are one-hot encoded, which
for the first layer amounts to selecting a weight row.
"""

from __future__ import annotations

import enum
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels
from .replay import Batch

CONSISTENCY_TOL = 1e-9


class LossVariant(str, enum.Enum):
    DQN = "dqn"
    AL = "al"
    STRSIL = "strsil"
    SAIL = "sail"

    @classmethod
    def parse(cls, value: "str | LossVariant") -> "LossVariant":
        if isinstance(value, LossVariant):
            return value
        try:
            return cls(value.lower())
        except ValueError:
            raise ValueError(f"unknown loss variant {value!r}; choose from {[v.value for v in cls]}") from None


NO_CLIP = (-math.inf, math.inf)


@dataclass(frozen=True)
class AgentConfig:
    alpha: float = 0.9
    gamma: float = 0.99
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_steps: int = 20_000
    target_sync_period: int = 500
    bonus_clip: tuple[float, float] = (-1.0, 1.0)
    learning_rate: float = 5e-4
    batch_size: int = 32
    loss_variant: LossVariant = LossVariant.SAIL
    optimizer: str = "adam"
    representation: str = "mlp"
    hidden: int = 64
    buffer_capacity: int = 50_000
    warmup: int = 1_000

    def __post_init__(self):
        object.__setattr__(self, "loss_variant", LossVariant.parse(self.loss_variant))
        object.__setattr__(self, "bonus_clip", (float(self.bonus_clip[0]), float(self.bonus_clip[1])))
        if not 0.0 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0, 1), got {self.alpha}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        low, high = self.bonus_clip
        if not low <= 0.0 <= high:
            raise ValueError(f"bonus clip must satisfy low <= 0 <= high, got {self.bonus_clip}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.representation not in ("tabular", "linear", "mlp"):
            raise ValueError(f"unknown representation {self.representation!r}")
        for name in ("target_sync_period", "batch_size", "hidden", "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epsilon_decay_steps < 0 or self.warmup < 0:
            raise ValueError("epsilon_decay_steps and warmup must be non-negative")

    def replace(self, **changes) -> "AgentConfig":
        return replace(self, **changes)


def epsilon_at(step: int, cfg: AgentConfig) -> float:
    if cfg.epsilon_decay_steps == 0 or step >= cfg.epsilon_decay_steps:
        return cfg.epsilon_end
    frac = step / cfg.epsilon_decay_steps
    return cfg.epsilon_start + frac * (cfg.epsilon_end - cfg.epsilon_start)


# ---------------------------------------------------------------------------
# Q-function representations


class QFunction:
    """Action values for one-hot encoded discrete states."""

    def __init__(self, kind: str, n_states: int, n_actions: int, hidden: int = 64,
                 rng: np.random.Generator | None = None):
        if kind not in ("tabular", "linear", "mlp"):
            raise ValueError(f"unknown representation {kind!r}")
        self.kind = kind
        self.n_states = n_states
        self.n_actions = n_actions
        self.hidden = hidden if kind == "mlp" else 0
        self.shapes = self._shapes()
        self._layout()
        self.theta = np.zeros(self._size)
        self.params = self._views(self.theta)
        if rng is not None:
            self.init_uniform(rng)

    def _shapes(self) -> dict[str, tuple[int, ...]]:
        S, A, H = self.n_states, self.n_actions, self.hidden
        if self.kind == "tabular":
            return {"table": (S, A)}
        if self.kind == "linear":
            return {"W": (S, A), "b": (A,)}
        return {"W1": (S, H), "b1": (H,), "W2": (H, A), "b2": (A,)}

    def _layout(self) -> None:
        self._spans, offset = [], 0
        for name, shape in self.shapes.items():
            n = math.prod(shape)
            self._spans.append((name, offset, offset + n, shape))
            offset += n
        self._size = offset
        self._grad = None  # scratch gradient reused by backward(reuse=True)
        self._dirty: np.ndarray | None = None

    def _views(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {name: flat[lo:hi].reshape(shape) for name, lo, hi, shape in self._spans}

    def _scratch(self) -> tuple[np.ndarray, dict[str, np.ndarray]]:
        """The reusable gradient buffer, with last call's entries cleared."""
        if self._grad is None:
            self._grad = np.zeros_like(self.theta)
            self._grad_views = self._views(self._grad)
        elif self._dirty is not None:
            n_rows, width = self.row_block
            lead = self._grad[:n_rows * width].reshape(n_rows, width)
            lead[self._dirty] = 0.0
            self._grad[n_rows * width:] = 0.0
        return self._grad, self._grad_views

    @property
    def row_block(self) -> tuple[int, int]:
        """(n_states, width) of the leading per-state parameter block.

        Row ``s`` of that block only receives gradient from records whose
        state is ``s``.
        """
        first = next(iter(self.shapes.values()))
        return first[0], first[1]

    def init_uniform(self, rng: np.random.Generator) -> None:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for non-tabular weights; tables start at zero."""
        if self.kind == "tabular":
            self.theta[:] = 0.0
            return
        fan_in = {"W": self.n_states, "b": self.n_states, "W1": self.n_states, "b1": self.n_states,
                  "W2": self.hidden, "b2": self.hidden}
        for name, view in self.params.items():
            bound = 1.0 / math.sqrt(fan_in[name])
            view[...] = rng.uniform(-bound, bound, size=view.shape)

    def copy(self) -> "QFunction":
        other = QFunction(self.kind, self.n_states, self.n_actions, max(self.hidden, 1))
        other.hidden = self.hidden
        other.shapes = self.shapes
        other._layout()
        other.theta = self.theta.copy()
        other.params = other._views(other.theta)
        return other

    def load_from(self, other: "QFunction") -> None:
        if other.theta.shape != self.theta.shape or other.kind != self.kind:
            raise ValueError("parameter layouts differ")
        np.copyto(self.theta, other.theta)

    def __call__(self, states) -> np.ndarray:
        return self.forward(np.asarray(states))

    def forward(self, states: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "tabular":
            return p["table"][states]
        if self.kind == "linear":
            return p["W"][states] + p["b"]
        h = p["W1"][states] + p["b1"]
        np.maximum(h, 0.0, out=h)
        return h @ p["W2"] + p["b2"]

    def q_values(self, state: int) -> np.ndarray:
        return self.forward(np.asarray([state]))[0]

    def backward(self, states: np.ndarray, actions: np.ndarray, dq: np.ndarray, reuse: bool = False) -> np.ndarray:
        """Flat gradient of ``sum_i dq[i] * Q(states[i], actions[i])`` w.r.t. theta.

        With ``reuse`` the result lives in a buffer owned by this object and
        is overwritten by the next ``reuse`` call.
        """
        states = np.asarray(states, dtype=np.int64)
        actions = np.asarray(actions, dtype=np.int64)
        dq = np.asarray(dq, dtype=np.float64)
        if reuse:
            grad, g = self._scratch()
            self._dirty = states
        else:
            grad = np.zeros_like(self.theta)
            g = self._views(grad)
        if self.kind == "tabular":
            _kernels.scatter_add_entries(g["table"], states, actions, dq)
            return grad
        if self.kind == "linear":
            _kernels.scatter_add_entries(g["W"], states, actions, dq)
            np.add.at(g["b"], actions, dq)
            return grad
        p = self.params
        pre = p["W1"][states] + p["b1"]
        h = np.maximum(pre, 0.0)
        dout = np.zeros((len(states), self.n_actions))
        dout[np.arange(len(states)), actions] = dq
        g["W2"][...] = h.T @ dout
        g["b2"][...] = dout.sum(axis=0)
        dh = dout @ p["W2"].T
        dh *= pre > 0.0
        _kernels.scatter_add_rows(g["W1"], states, dh)
        g["b1"][...] = dh.sum(axis=0)
        return grad


def sync_target(qf: QFunction, target_qf: QFunction) -> None:
    target_qf.load_from(qf)


# ---------------------------------------------------------------------------
# Modified rewards and TD targets. All accept scalars or equally shaped arrays.


def _check_order(q_sa, q_max) -> None:
    if np.any(np.asarray(q_sa) > np.asarray(q_max) + CONSISTENCY_TOL):
        raise ValueError("q_sa exceeds q_max: both must come from the same action-value vector")


def _finish(r, bonus, clip):
    out = r + np.clip(bonus, clip[0], clip[1])
    return float(out) if np.ndim(out) == 0 else out


def sail_modified_reward(r, G, q_sa, q_max, alpha: float, clip=(-1.0, 1.0)):
    """``r + clip(alpha * (max(G, q_sa) - q_max))``."""
    _check_order(q_sa, q_max)
    return _finish(r, alpha * (np.maximum(G, q_sa) - q_max), clip)


def al_modified_reward(r, q_sa, q_max, alpha: float, clip=(-1.0, 1.0)):
    _check_order(q_sa, q_max)
    return _finish(r, alpha * (np.subtract(q_sa, q_max)), clip)


def strsil_modified_reward(r, G, q_max, alpha: float, clip=(-1.0, 1.0)):
    """``r + clip(alpha * max(0, G - q_max))``; the bonus is never negative."""
    return _finish(r, alpha * np.maximum(np.subtract(G, q_max), 0.0), clip)


def td_target(r_mod, gamma: float, q_target_next_max, done):
    out = np.where(done, r_mod, r_mod + gamma * np.asarray(q_target_next_max))
    return float(out) if np.ndim(out) == 0 else out


def modified_rewards(batch: Batch, q_target_s: np.ndarray, cfg: AgentConfig) -> np.ndarray:
    """Per-record rewards for the configured variant, using target-network values."""
    variant = cfg.loss_variant
    if variant is LossVariant.DQN:
        return batch.rewards
    idx = np.arange(len(batch.actions))
    q_sa = q_target_s[idx, batch.actions]
    q_max = q_target_s.max(axis=1)
    if variant is LossVariant.AL:
        return al_modified_reward(batch.rewards, q_sa, q_max, cfg.alpha, cfg.bonus_clip)
    if variant is LossVariant.STRSIL:
        return strsil_modified_reward(batch.rewards, batch.returns, q_max, cfg.alpha, cfg.bonus_clip)
    return sail_modified_reward(batch.rewards, batch.returns, q_sa, q_max, cfg.alpha, cfg.bonus_clip)


@dataclass
class UpdateInfo:
    loss: float
    grad: np.ndarray
    q_online: np.ndarray
    q_target_s: np.ndarray
    r_mod: np.ndarray


def compute_update(qf: QFunction, target_qf: QFunction, batch: Batch, cfg: AgentConfig,
                   reuse_grad: bool = False) -> UpdateInfo:
    if cfg.loss_variant in (LossVariant.STRSIL, LossVariant.SAIL) and np.isnan(batch.returns).any():
        raise ValueError("batch contains placeholder returns; only finalized records may be sampled")
    n = len(batch.actions)
    both = target_qf.forward(np.concatenate([batch.states, batch.next_states]))
    q_target_s, q_target_next = both[:n], both[n:]
    r_mod = modified_rewards(batch, q_target_s, cfg)
    target = td_target(r_mod, cfg.gamma, q_target_next.max(axis=1), batch.dones)
    q_online = qf.forward(batch.states)
    delta = q_online[np.arange(n), batch.actions] - target
    loss = 0.5 * float(delta @ delta) / n
    grad = qf.backward(batch.states, batch.actions, delta / n, reuse=reuse_grad)
    return UpdateInfo(loss, grad, q_online, q_target_s, np.asarray(r_mod, dtype=np.float64))


def loss_and_grad(qf: QFunction, target_qf: QFunction, batch: Batch, cfg: AgentConfig) -> tuple[float, np.ndarray]:
    """Mean of ``0.5 * (target - Q(s, a))**2`` and its gradient w.r.t. the online parameters.

    The whole target, including the modified reward, is held constant.
    """
    info = compute_update(qf, target_qf, batch, cfg)
    return info.loss, info.grad


# ---------------------------------------------------------------------------
# Optimizers


class NonFiniteError(FloatingPointError):
    pass


class SGD:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        _check_finite(grad)
        theta -= self.lr * grad


class RMSProp:
    """Uncentered RMSProp in the style of the original DQN optimizer."""

    def __init__(self, lr: float, rho: float = 0.95, eps: float = 1e-6):
        self.lr, self.rho, self.eps = lr, rho, eps
        self.sq = None

    def step(self, theta: np.ndarray, grad: np.ndarray) -> None:
        _check_finite(grad)
        if self.sq is None:
            self.sq = np.zeros_like(theta)
        _kernels.rmsprop_update(theta, grad, self.sq, self.lr, self.rho, self.eps)


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = self.v = None
        self.t = 0
        self.touched: np.ndarray | None = None
        self.row_width = 0

    def track_rows(self, n_rows: int, width: int) -> None:
        """Enable skipping of per-state rows that have never received gradient."""
        self.touched = np.zeros(n_rows, dtype=np.bool_)
        self.row_width = width

    def _check(self, grad: np.ndarray, rows: np.ndarray | None) -> None:
        # with row tracking, every other leading row of ``grad`` is zero by contract
        if self.touched is not None and rows is not None:
            if not _kernels.rows_finite(grad, rows, self.touched.size, self.row_width):
                raise NonFiniteError("non-finite gradient")
        else:
            _check_finite(grad)

    def step(self, theta: np.ndarray, grad: np.ndarray, rows: np.ndarray | None = None) -> None:
        """``rows``: states whose leading-block rows may carry gradient this step."""
        self._check(grad, rows)
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        lr_t = self.lr * math.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        if self.touched is not None and rows is not None:
            self.touched[rows] = True
            _kernels.adam_update_rows(theta, grad, self.m, self.v, lr_t, self.beta1, self.beta2, self.eps,
                                      self.touched, self.row_width)
        else:
            _kernels.adam_update(theta, grad, self.m, self.v, lr_t, self.beta1, self.beta2, self.eps)


class LazyAdam(Adam):
    """Adam whose per-state rows are updated only when their state is in the batch.

    Moments of rows absent from a batch are left untouched (no decay), the
    usual treatment of embedding tables. All other parameters follow Adam.
    """

    def step(self, theta: np.ndarray, grad: np.ndarray, rows: np.ndarray | None = None) -> None:
        if self.touched is None or rows is None:
            return super().step(theta, grad)
        self._check(grad, rows)
        if self.m is None:
            self.m = np.zeros_like(theta)
            self.v = np.zeros_like(theta)
        self.t += 1
        lr_t = self.lr * math.sqrt(1.0 - self.beta2 ** self.t) / (1.0 - self.beta1 ** self.t)
        _kernels.lazy_adam_update(theta, grad, self.m, self.v, lr_t, self.beta1, self.beta2, self.eps,
                                  np.unique(rows), self.touched.size, self.row_width)


OPTIMIZERS = {"sgd": SGD, "rmsprop": RMSProp, "adam": Adam, "lazyadam": LazyAdam}


def make_optimizer(cfg: AgentConfig):
    return OPTIMIZERS[cfg.optimizer](cfg.learning_rate)


def _check_finite(grad: np.ndarray) -> None:
    if not _kernels.all_finite(grad):
        raise NonFiniteError("non-finite gradient")


# ---------------------------------------------------------------------------
# Acting


def epsilon_greedy(qvals: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(qvals)))
    return int(np.argmax(qvals))


@dataclass
class Agent:
    """Online and target Q-functions plus the optimizer for one training run."""

    config: AgentConfig
    qf: QFunction
    target_qf: QFunction = field(init=False)
    optimizer: object = field(init=False)

    def __post_init__(self):
        self.target_qf = self.qf.copy()
        self.optimizer = make_optimizer(self.config)
        if isinstance(self.optimizer, Adam):
            self.optimizer.track_rows(*self.qf.row_block)

    @classmethod
    def create(cls, config: AgentConfig, n_states: int, n_actions: int, rng: np.random.Generator) -> "Agent":
        qf = QFunction(config.representation, n_states, n_actions, config.hidden, rng=rng)
        return cls(config, qf)

    def act(self, state: int, epsilon: float, rng: np.random.Generator) -> int:
        if epsilon > 0.0 and rng.random() < epsilon:
            return int(rng.integers(self.qf.n_actions))
        return int(np.argmax(self.qf.q_values(state)))

    def update(self, batch: Batch) -> UpdateInfo:
        info = compute_update(self.qf, self.target_qf, batch, self.config, reuse_grad=True)
        if isinstance(self.optimizer, Adam):
            self.optimizer.step(self.qf.theta, info.grad, batch.states)
        else:
            self.optimizer.step(self.qf.theta, info.grad)
        return info

    def sync_target(self) -> None:
        sync_target(self.qf, self.target_qf)


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, representation tag, shapes, raw little-endian float64.

_MAGIC = b"SAILQF"
_VERSION = 1
_KIND_TAGS = {"tabular": 0, "linear": 1, "mlp": 2}
_HEADER = struct.Struct("<6sHBIIIQ")


def save_checkpoint(qf: QFunction, path: str | Path) -> None:
    header = _HEADER.pack(_MAGIC, _VERSION, _KIND_TAGS[qf.kind], qf.n_states, qf.n_actions,
                          qf.hidden, qf.theta.size)
    Path(path).write_bytes(header + qf.theta.astype("<f8").tobytes())


def load_checkpoint(path: str | Path) -> QFunction:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated checkpoint header")
    magic, version, tag, n_states, n_actions, hidden, n = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError(f"{path}: not a Q-function checkpoint")
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    kind = {v: k for k, v in _KIND_TAGS.items()}[tag]
    qf = QFunction(kind, n_states, n_actions, hidden)
    if qf.theta.size != n or len(data) != _HEADER.size + 8 * n:
        raise ValueError(f"{path}: parameter count does not match header")
    qf.theta[:] = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return qf
