"""Per-device double-Q learning agent.

State featurization, the flattened joint-action index space, epsilon-greedy
selection with validity masking, a FIFO replay ring, double-Q targets and
the periodic target-network sync.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import qnet
from .sysmodel import DeviceEnv, JointAction, NetworkState, SystemParams

REPLAY_CAPACITY = 5000
TARGET_SYNC_INTERVAL = 250
DISCOUNT = 0.9
LEARNING_RATE = 0.005
BATCH_SIZE = 32
MIN_BUFFER = 500


@dataclass
class Transition:
    features: np.ndarray
    action: int
    reward: float
    next_features: np.ndarray
    next_mask: np.ndarray


class ReplayBuffer:
    """Ring buffer of transitions, oldest overwritten first once full."""

    def __init__(self, capacity: int = REPLAY_CAPACITY):
        self.capacity = capacity
        self._data: list = []
        self._cursor = 0

    def __len__(self) -> int:
        return len(self._data)

    def append(self, t: Transition) -> None:
        if len(self._data) < self.capacity:
            self._data.append(t)
        else:
            self._data[self._cursor] = t
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, rng: np.random.Generator, n: int) -> list:
        idx = rng.integers(0, len(self._data), size=n)
        return [self._data[i] for i in idx]

    def oldest(self) -> Transition:
        if len(self._data) < self.capacity:
            return self._data[0]
        return self._data[self._cursor]


@dataclass
class DDQNAgent:
    """Value networks plus the counters that drive training and syncing."""

    current: qnet.QNetParams
    target: qnet.QNetParams
    epsilon: float = 0.01
    gamma: float = DISCOUNT
    learning_rate: float = LEARNING_RATE
    batch_size: int = BATCH_SIZE
    min_buffer: int = MIN_BUFFER
    sync_interval: int = TARGET_SYNC_INTERVAL
    step_count: int = 0
    train_count: int = 0
    buffer: ReplayBuffer = field(default_factory=ReplayBuffer)


def new_agent(input_dim: int, action_count: int, rng: np.random.Generator,
              epsilon: float = 0.01, **kwargs) -> DDQNAgent:
    params = qnet.init(input_dim, action_count, rng)
    return DDQNAgent(current=params, target=qnet.copy_params(params),
                     epsilon=epsilon, **kwargs)


def feature_dim(params: SystemParams) -> int:
    return 2 + 2 * params.num_edge_nodes


def encode_state(state: NetworkState, params: SystemParams) -> np.ndarray:
    """Map a network state to [0, 1]^d: scaled queues, one-hot node, scaled gains."""
    n = params.num_edge_nodes
    out = np.zeros(2 + 2 * n)
    out[0] = state.q_task / params.task_queue_cap
    out[1] = state.q_energy / params.energy_queue_cap
    out[2 + state.assoc - 1] = 1.0
    for i in range(n):
        out[2 + n + i] = state.gains[i] / params.gain_levels[i][-1]
    return out


def action_index(offload: int, energy: int, params: SystemParams) -> int:
    if not 0 <= offload <= params.num_edge_nodes:
        raise ValueError("offload decision out of range")
    if not 0 <= energy <= params.energy_queue_cap:
        raise ValueError("energy allocation out of range")
    return offload * (params.energy_queue_cap + 1) + energy


def decode_action(index: int, params: SystemParams) -> JointAction:
    if not 0 <= index < params.action_count:
        raise ValueError("action index out of range")
    width = params.energy_queue_cap + 1
    return JointAction(index // width, index % width)


def valid_action_mask(state: NetworkState, params: SystemParams,
                      local_only: bool = False) -> np.ndarray:
    """Boolean mask over the flat action space.

    An action is valid when it does not allocate more energy than queued
    and spends nothing while the task queue is empty. ``local_only``
    additionally removes every offloading target.
    """
    width = params.energy_queue_cap + 1
    mask = np.zeros(params.action_count, dtype=bool)
    e_max = min(state.q_energy, params.energy_queue_cap) if state.q_task > 0 else 0
    for c in range(params.num_edge_nodes + 1):
        if local_only and c > 0:
            continue
        base = c * width
        mask[base: base + e_max + 1] = True
    return mask


def select_action(agent: DDQNAgent, features: np.ndarray, valid_mask: np.ndarray,
                  rng: np.random.Generator) -> int:
    """Epsilon-greedy over valid actions; greedy ties go to the lowest index."""
    valid_idx = np.flatnonzero(valid_mask)
    if valid_idx.size == 0:
        raise ValueError("at least one action must be valid")
    if rng.random() < agent.epsilon:
        return int(valid_idx[rng.integers(valid_idx.size)])
    q = qnet.forward(agent.current, features)
    q = np.where(valid_mask, q, -np.inf)
    return int(np.argmax(q))


def double_q_target(agent: DDQNAgent, transition: Transition) -> float:
    """Bootstrap target: argmax by the current net, value by the target net."""
    q_next = qnet.forward(agent.current, transition.next_features)
    q_next = np.where(transition.next_mask, q_next, -np.inf)
    best = int(np.argmax(q_next))
    q_eval = qnet.forward(agent.target, transition.next_features)
    return transition.reward + agent.gamma * float(q_eval[best])


def _batch_targets(agent: DDQNAgent, next_features: np.ndarray,
                   next_masks: np.ndarray, rewards: np.ndarray) -> np.ndarray:
    q_next = qnet.forward(agent.current, next_features)
    q_next = np.where(next_masks, q_next, -np.inf)
    best = np.argmax(q_next, axis=1)
    q_eval = qnet.forward(agent.target, next_features)
    rows = np.arange(len(rewards))
    return rewards + agent.gamma * q_eval[rows, best]


def train_step(agent: DDQNAgent, batch: list) -> float:
    """One squared-error regression step toward the double-Q targets.

    Returns the batch loss. Every ``sync_interval`` steps the target net
    is replaced by a snapshot of the current net.
    """
    feats = np.stack([t.features for t in batch])
    actions = np.array([t.action for t in batch])
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    next_feats = np.stack([t.next_features for t in batch])
    next_masks = np.stack([t.next_mask for t in batch])

    y = _batch_targets(agent, next_feats, next_masks, rewards)
    q = qnet.forward(agent.current, feats)
    rows = np.arange(len(batch))
    err = q[rows, actions] - y
    loss = float(np.mean(err * err))

    upstream = np.zeros_like(q)
    upstream[rows, actions] = 2.0 * err
    grads = qnet.backward(agent.current, feats, upstream)
    qnet.apply_gradients(agent.current, grads, agent.learning_rate)

    agent.step_count += 1
    agent.train_count += 1
    if agent.step_count % agent.sync_interval == 0:
        agent.target = qnet.copy_params(agent.current)
    return loss


def maybe_train(agent: DDQNAgent, rng: np.random.Generator):
    """Train once if the buffer is warm; returns None while training is deferred."""
    if len(agent.buffer) < max(agent.min_buffer, agent.batch_size):
        return None
    return train_step(agent, agent.buffer.sample(rng, agent.batch_size))


def run_device_epoch(env: DeviceEnv, agent: DDQNAgent,
                     explore_rng: np.random.Generator,
                     replay_rng: np.random.Generator, *,
                     train: bool = True, local_only: bool = False):
    """Act for one epoch, record the transition, optionally train.

    Returns (outcome, loss, action_index); loss is None when no training
    step ran this epoch.
    """
    params = env.params
    feats = encode_state(env.state, params)
    mask = valid_action_mask(env.state, params, local_only)
    idx = select_action(agent, feats, mask, explore_rng)
    outcome = env.advance(decode_action(idx, params))
    next_feats = encode_state(env.state, params)
    next_mask = valid_action_mask(env.state, params, local_only)
    agent.buffer.append(
        Transition(feats, idx, outcome.utility, next_feats, next_mask)
    )
    loss = maybe_train(agent, replay_rng) if train else None
    return outcome, loss, idx


def discounted_return(rewards, gamma: float) -> float:
    """Sum of gamma^k * r_k; reporting helper, not used for learning."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    total = 0.0
    factor = 1.0
    for r in rewards:
        if factor < 1e-12:
            break
        total += factor * r
        factor *= gamma
    return total


def checkpoint_payload(agent: DDQNAgent) -> dict:
    """Serialized agent: weight payload plus the small training header."""
    return {
        "step_count": agent.step_count,
        "train_count": agent.train_count,
        "epsilon": agent.epsilon,
        "gamma": agent.gamma,
        "params": qnet.to_payload(agent.current),
    }


def load_checkpoint(payload: dict) -> DDQNAgent:
    params = qnet.from_payload(payload["params"])
    return DDQNAgent(
        current=params,
        target=qnet.copy_params(params),
        epsilon=float(payload["epsilon"]),
        gamma=float(payload["gamma"]),
        step_count=int(payload["step_count"]),
        train_count=int(payload["train_count"]),
    )
