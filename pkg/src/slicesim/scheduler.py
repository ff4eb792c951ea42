"""Episode structure: exploitation and update phases, channel accounting.

Each episode splits into exploitation decision periods, where the agent
allocates link resources and records experience, and a trailing update phase,
where the user allocation is forced to zero and the whole link carries
training traffic instead. The number of transitions that fit through the
channel follows from the update-phase bit budget; every tenth training
episode additionally pays for downloading the refreshed model, which replaces
the inference network. The ideal variant ships experience through a free side
channel and never spends link time on training: each transition updates the
network as soon as it completes and the refreshed model is installed at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .agent import AgentPair, ReplayMemory, Transition, draw_for_upload, sarsa_train, select_action, sync
from .config import SimConfig, Strategy
from .env import SlicingEnv


@dataclass(frozen=True)
class EpisodePlan:
    total_decisions: int
    exploit_decisions: int
    update_decisions: int
    sync_episode: bool

    def __post_init__(self):
        if self.update_decisions < 0:
            raise ValueError("update_decisions must be >= 0")
        if self.exploit_decisions + self.update_decisions != self.total_decisions:
            raise ValueError("phase lengths must cover the episode")


@dataclass(frozen=True)
class ChannelBudget:
    bits_available: int
    transitions: int
    includes_model: bool


class ConvergenceDetector:
    """Fires, and stays fired, once the rolling reward stops increasing.

    After at least two full windows of episodes have been observed, the mean
    over the most recent window is compared against the mean over the window
    before it; a non-increase latches the detector.
    """

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("window must be >= 1")
        self.window = window
        self.history: List[float] = []
        self.fired = False
        self.fired_at: Optional[int] = None

    def update(self, episode_mean_reward: float) -> None:
        self.history.append(float(episode_mean_reward))
        if self.fired:
            return
        n = len(self.history)
        k = self.window
        if n < 2 * k:
            return
        w_now = float(np.mean(self.history[n - k:]))
        w_prev = float(np.mean(self.history[n - 2 * k:n - k]))
        if w_now <= w_prev:
            self.fired = True
            self.fired_at = n


def plan_episode(strategy: Strategy, episode_index: int,
                 detector: ConvergenceDetector, total_decisions: int = 100,
                 sync_every: int = 10) -> EpisodePlan:
    """Decide the phase split and whether this episode downloads the model.

    A training episode is one that performs an update phase (or, for the
    ideal variant, any episode, since every episode trains for free); every
    ``sync_every``-th training episode is a sync episode.
    """
    if episode_index < 0:
        raise ValueError("episode_index must be >= 0")
    if strategy.mode == "ideal":
        # the side channel is free, so the freshly trained model is always
        # installed; every ideal episode ends in sync
        return EpisodePlan(total_decisions, total_decisions, 0, True)
    if strategy.mode == "constant":
        update = strategy.t_rho
    else:  # adaptive
        update = 0 if detector.fired else strategy.t_rho
    if update > total_decisions:
        raise ValueError("update phase cannot exceed the episode")
    trains = update > 0
    sync_now = trains and (episode_index % sync_every == sync_every - 1)
    return EpisodePlan(
        total_decisions=total_decisions,
        exploit_decisions=total_decisions - update,
        update_decisions=update,
        sync_episode=sync_now,
    )


def channel_budget(plan: EpisodePlan, cfg: SimConfig) -> ChannelBudget:
    """Bits the update phase frees for training data, and what fits in them."""
    bits = plan.update_decisions * cfg.slots_per_decision * cfg.slot_bits
    usable = bits - (cfg.model_bits if plan.sync_episode else 0)
    transitions = max(usable, 0) // cfg.transition_bits
    return ChannelBudget(bits_available=bits, transitions=int(transitions),
                         includes_model=plan.sync_episode)


@dataclass
class EpisodeResult:
    mean_reward: float
    transitions_sent: int
    synced: bool
    transitions_recorded: int


def run_episode(env: SlicingEnv, pair: AgentPair, memory: ReplayMemory,
                plan: EpisodePlan, budget: ChannelBudget, rng,
                ideal: bool = False) -> EpisodeResult:
    """Play one full episode, training as the schedule dictates.

    During exploitation the inference network picks actions and one
    transition is recorded per decision; the tuple of the last exploitation
    decision is completed with the state at the phase boundary and the action
    that would have been selected there. Update decisions keep the
    environment running under a zero allocation without recording anything.

    Link-billed strategies train at the episode end on transitions drawn
    from the replay memory, within the channel budget, and only install the
    refreshed model on sync episodes. The ideal variant's side channel is
    free in both directions, so every transition trains the network the
    moment it completes and the result is installed immediately.
    """
    state = env.reset(rng)
    episode_transitions: List[Transition] = []
    n_exploit = plan.exploit_decisions
    if n_exploit > 0:
        action = select_action(pair.inference_net, state, env.alloc,
                               pair.temperature, rng)
        for _ in range(n_exploit):
            next_state, mean_phi = env.step_decision_interval(action)
            next_action = select_action(pair.inference_net, next_state, env.alloc,
                                        pair.temperature, rng)
            t = Transition(state, action, next_state, mean_phi, next_action)
            memory.record(t)
            episode_transitions.append(t)
            if ideal:
                sarsa_train(pair, [t])
                sync(pair)
            state, action = next_state, next_action
    if plan.update_decisions > 0:
        env.begin_update_phase()
        for _ in range(plan.update_decisions):
            env.step_update_interval()
    sent = 0
    synced = ideal and bool(episode_transitions)
    if not ideal:
        if budget.transitions > 0:
            drawn = draw_for_upload(memory, budget.transitions, rng)
            sent = len(drawn)
            sarsa_train(pair, drawn)
        if plan.sync_episode:
            sync(pair)
            synced = True
    return EpisodeResult(
        mean_reward=env.episode_mean_phi(),
        transitions_sent=sent,
        synced=synced,
        transitions_recorded=len(episode_transitions),
    )
