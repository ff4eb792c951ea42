"""On-policy SARSA learner with softmax exploration and action masking.

Two copies of the value network exist: the inference copy picks actions and
records experience at the base station, the training copy is updated remotely
and periodically replaces the inference copy. Experience tuples carry the
next action that was actually selected, so stored samples stay usable for
on-policy updates no matter when they are replayed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from . import backend
from .config import SimConfig
from .env import valid_actions
from .nn import AdamState, ValueNet, adam_step, copy_net, forward, forward_batch, init_net, td_batch_grad


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    next_state: np.ndarray
    reward: float
    next_action: int


class ReplayMemory:
    """Fixed-capacity FIFO of transitions; eviction is strictly oldest-first."""

    def __init__(self, capacity: int = 5000):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: List[Optional[Transition]] = [None] * capacity
        self._start = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def record(self, t: Transition) -> None:
        if self._size < self.capacity:
            self._items[(self._start + self._size) % self.capacity] = t
            self._size += 1
        else:
            self._items[self._start] = t
            self._start = (self._start + 1) % self.capacity

    def __getitem__(self, index: int) -> Transition:
        if not 0 <= index < self._size:
            raise IndexError("memory index out of range")
        item = self._items[(self._start + index) % self.capacity]
        assert item is not None
        return item

    def entries(self) -> List[Transition]:
        """Oldest-first snapshot."""
        return [self[i] for i in range(self._size)]


def draw_for_upload(memory: ReplayMemory, budget: int, rng) -> List[Transition]:
    """Sample up to ``budget`` transitions uniformly, without replacement.

    The memory itself is never consumed; a zero budget draws nothing and
    leaves the random stream untouched.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    k = min(budget, len(memory))
    if k == 0:
        return []
    idx = rng.choice(len(memory), size=k, replace=False)
    return [memory[int(i)] for i in idx]


def softmax_probs(q_values: np.ndarray, valid: Sequence[int],
                  temperature: float) -> np.ndarray:
    """Softmax over the valid actions only; masked actions get exactly zero."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    probs = np.zeros(len(q_values), dtype=np.float64)
    qv = np.array([q_values[a] for a in valid], dtype=np.float64)
    qv = (qv - qv.max()) / temperature
    ex = np.exp(qv)
    ex /= ex.sum()
    for a, p in zip(valid, ex):
        probs[a] = p
    return probs


def select_action(net: ValueNet, state: np.ndarray, alloc: np.ndarray,
                  temperature: float, rng) -> int:
    """Sample an action from the masked softmax policy."""
    q = forward(net, state)
    valid = valid_actions(alloc)
    probs = softmax_probs(q, valid, temperature)
    u = rng.random()
    acc = 0.0
    for a in valid:
        acc += probs[a]
        if u < acc:
            return a
    return valid[-1]


def greedy_action(net: ValueNet, state: np.ndarray, alloc: np.ndarray) -> int:
    """Highest-valued valid action; ties break toward the lowest index."""
    q = forward(net, state)
    valid = valid_actions(alloc)
    best = valid[0]
    for a in valid[1:]:
        if q[a] > q[best]:
            best = a
    return best


@dataclass
class AgentPair:
    """Inference network (acting side) plus training network and optimizer."""

    inference_net: ValueNet
    training_net: ValueNet
    adam: AdamState
    temperature: float = 0.1
    discount: float = 0.95
    batch_size: int = 32

    @classmethod
    def create(cls, rng, cfg: SimConfig) -> "AgentPair":
        training = init_net(rng, cfg.state_size, cfg.num_actions)
        inference = copy_net(training)
        adam = AdamState.for_net(training, learning_rate=cfg.learning_rate)
        return cls(inference_net=inference, training_net=training, adam=adam,
                   temperature=cfg.temperature, discount=cfg.discount,
                   batch_size=cfg.batch_size)


def sarsa_train(pair: AgentPair, batch: Sequence[Transition]) -> None:
    """Minibatched SARSA updates on the training network.

    Targets ``r + gamma * Q(s', a')`` are recomputed right before each
    minibatch step and held fixed during it. The final partial minibatch is
    included; transitions are processed in the order given. The inference
    network is never touched.
    """
    if not batch:
        return
    n = len(batch)
    states = np.stack([t.state for t in batch]).astype(np.float64)
    actions = np.array([t.action for t in batch], dtype=np.int64)
    rewards = np.array([t.reward for t in batch], dtype=np.float64)
    next_states = np.stack([t.next_state for t in batch]).astype(np.float64)
    next_actions = np.array([t.next_action for t in batch], dtype=np.int64)
    net = pair.training_net
    adam = pair.adam
    # unit minibatches (by configuration, or a single-transition batch as in
    # the online ideal path) take the fused kernel
    if backend.use_compiled() and (pair.batch_size == 1 or n == 1):
        adam.step_count = backend.core().sarsa_chain(
            net.params, adam.m, adam.v, adam.step_count,
            states, actions, rewards, next_states, next_actions,
            pair.discount, adam.learning_rate, adam.beta1, adam.beta2, adam.eps,
            net.n_in, net.n_h1, net.n_h2, net.n_out)
        return
    b = pair.batch_size
    for lo in range(0, n, b):
        hi = min(lo + b, n)
        q_next = forward_batch(net, next_states[lo:hi])
        picked = q_next[np.arange(hi - lo), next_actions[lo:hi]]
        targets = rewards[lo:hi] + pair.discount * picked
        grad = td_batch_grad(net, states[lo:hi], actions[lo:hi], targets)
        adam_step(net, adam, grad)


def sync(pair: AgentPair) -> None:
    """Install a copy of the training network as the new inference network."""
    pair.inference_net = copy_net(pair.training_net)
