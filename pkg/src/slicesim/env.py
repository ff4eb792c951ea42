"""Sliced backhaul link: queueing dynamics, actions, reward and state encoding.

The link is divided into resource blocks that the agent reassigns between a
non-critical and a critical slice. Each slice owns a FIFO buffer; every slot
the head of each queue is drained according to the current allocation, new
packets arrive at the slot end, and overflowing buffers drop their oldest
packets. Per-slot system utility in [0, 1] combines per-packet delay utilities.

Within a slot the order is fixed: on-off transitions, transmission, packet
generation, enqueue with overflow, reward. Arrivals therefore never leave in
their arrival slot, so delivered packets always have a delay of at least one.

The functions in this module are the reference implementation; the compiled
core (``slicesim._core``) replays the same arithmetic over the same arrays
and must stay bit-compatible with it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import backend
from .config import NUM_SLICES, SimConfig
from .env_types import Packet
from .traffic import (
    ACTIVE,
    SILENT,
    UserState,
    assign_applications,
    generate_packets,
    make_fixed_users,
    step_onoff_with,
)

SLICE_NC = 0
SLICE_C = 1

# Ordered donor/receiver pairs; action k >= 1 maps to ACTION_PAIRS[k - 1],
# action 0 keeps the allocation unchanged.
ACTION_PAIRS: Tuple[Tuple[int, int], ...] = tuple(
    (i, j) for i in range(NUM_SLICES) for j in range(NUM_SLICES) if i != j
)
NUM_ACTIONS = 1 + len(ACTION_PAIRS)


class SliceBuffer:
    """Bounded FIFO of packets, stored in ring arrays shared with the core.

    ``capacity`` is the overflow limit; the rings are slightly larger so a
    slot's arrivals can be appended before the oldest packets are dropped.
    """

    def __init__(self, slice_id: int, capacity: int, ring_capacity: Optional[int] = None,
                 arrival: Optional[np.ndarray] = None, user: Optional[np.ndarray] = None,
                 meta: Optional[np.ndarray] = None):
        self.slice_id = slice_id
        self.capacity = capacity
        rc = ring_capacity if ring_capacity is not None else 2 * capacity + 64
        self._arrival = arrival if arrival is not None else np.zeros(rc, dtype=np.int64)
        self._user = user if user is not None else np.zeros(rc, dtype=np.int64)
        self._meta = meta if meta is not None else np.zeros(2, dtype=np.int64)
        self._rc = len(self._arrival)

    def __len__(self) -> int:
        return int(self._meta[1])

    def clear(self) -> None:
        self._meta[0] = 0
        self._meta[1] = 0

    def push(self, arrival_slot: int, user_id: int) -> None:
        if self._meta[1] >= self._rc:
            raise OverflowError("ring buffer exhausted; arrivals outgrew the ring")
        tail = (self._meta[0] + self._meta[1]) % self._rc
        self._arrival[tail] = arrival_slot
        self._user[tail] = user_id
        self._meta[1] += 1

    def pop_oldest(self) -> Packet:
        if self._meta[1] == 0:
            raise IndexError("pop from empty buffer")
        head = int(self._meta[0])
        pkt = Packet(int(self._user[head]), self.slice_id, int(self._arrival[head]))
        self._meta[0] = (head + 1) % self._rc
        self._meta[1] -= 1
        return pkt

    def peek(self, index: int) -> Packet:
        if not 0 <= index < self._meta[1]:
            raise IndexError("peek out of range")
        pos = (int(self._meta[0]) + index) % self._rc
        return Packet(int(self._user[pos]), self.slice_id, int(self._arrival[pos]))

    def packets(self) -> List[Packet]:
        """Oldest-first snapshot."""
        return [self.peek(i) for i in range(len(self))]


def transmit_capacity(n_blocks: int, cfg: SimConfig) -> int:
    """Packets deliverable in one slot with ``n_blocks`` assigned blocks."""
    return (n_blocks * cfg.slot_bits) // (cfg.packet_bits * cfg.num_blocks)


def transmit(buffer: SliceBuffer, n_blocks: int, current_slot: int,
             cfg: SimConfig) -> Tuple[int, List[Tuple[Packet, int]]]:
    """Drain the buffer head; returns the count and (packet, delay) pairs."""
    if not 0 <= n_blocks <= cfg.num_blocks:
        raise ValueError("n_blocks out of range")
    chi = min(len(buffer), transmit_capacity(n_blocks, cfg))
    delivered = []
    for _ in range(chi):
        pkt = buffer.pop_oldest()
        delivered.append((pkt, current_slot - pkt.arrival_slot))
    return chi, delivered


def enqueue_with_overflow(buffer: SliceBuffer,
                          arrivals: Sequence[Packet]) -> Tuple[int, List[Packet]]:
    """Append a slot's arrivals, then drop the oldest packets past capacity."""
    for pkt in arrivals:
        if pkt.slice_id != buffer.slice_id:
            raise ValueError(
                f"packet for slice {pkt.slice_id} enqueued on slice {buffer.slice_id}"
            )
        buffer.push(pkt.arrival_slot, pkt.user_id)
    omega = max(0, len(buffer) - buffer.capacity)
    dropped = [buffer.pop_oldest() for _ in range(omega)]
    return omega, dropped


def _utility_value(budget_slots: float, critical: bool, delay) -> float:
    if delay == math.inf:
        return 0.0
    if critical:
        return 1.0 if delay <= budget_slots else 0.0
    return 1.0 if delay <= budget_slots else budget_slots / delay


def utility(profile, delay, slot_seconds: float = 0.01) -> float:
    """Delay utility of one packet: hyperbolic decay past the budget for the
    non-critical slice, a hard deadline for the critical slice."""
    if delay != math.inf and delay < 0:
        raise ValueError("delay must be >= 0")
    budget = profile.delay_budget_slots(slot_seconds)
    return _utility_value(budget, profile.slice_id == SLICE_C, delay)


def slot_reward(delivered: Sequence[Sequence[Tuple[Packet, int]]],
                dropped: Sequence[Sequence[Packet]],
                users: Sequence[UserState],
                cfg: SimConfig) -> float:
    """System utility of one slot.

    A slice that handled packets scores the mean utility over everything it
    delivered or dropped this slot; a slice that handled nothing scores zero.
    Slices without any associated user are left out of the average.
    """
    budgets = [u.profile.delay_budget_slots(cfg.slot_seconds) for u in users]
    counted = [False] * NUM_SLICES
    for u in users:
        counted[u.profile.slice_id] = True
    total = 0.0
    n_counted = 0
    for s in range(NUM_SLICES):
        if not counted[s]:
            continue
        n_counted += 1
        handled = len(delivered[s]) + len(dropped[s])
        if handled == 0:
            continue
        util_sum = 0.0
        for pkt, delay in delivered[s]:
            util_sum += _utility_value(budgets[pkt.user_id], s == SLICE_C, delay)
        total += util_sum / handled
    if n_counted == 0:
        return 0.0
    return total / n_counted


def valid_actions(alloc: np.ndarray) -> List[int]:
    """Action 0 plus every move whose donor slice still owns a block."""
    acts = [0]
    for k, (i, _) in enumerate(ACTION_PAIRS, start=1):
        if alloc[i] >= 1:
            acts.append(k)
    return acts


def apply_action(alloc: np.ndarray, action: int) -> np.ndarray:
    """Move one block between slices in place; action 0 is the identity."""
    if action == 0:
        return alloc
    if not 1 <= action < NUM_ACTIONS:
        raise ValueError(f"action {action} out of range")
    i, j = ACTION_PAIRS[action - 1]
    if alloc[i] < 1:
        raise ValueError(f"action {action} invalid: slice {i} has no block to give")
    alloc[i] -= 1
    alloc[j] += 1
    return alloc


def build_state(buffers: Sequence[SliceBuffer], alloc: np.ndarray,
                users: Sequence[UserState], current_slot: int,
                cfg: SimConfig) -> np.ndarray:
    """Encode the observation: per slice, in slice order,
    (fill level, mean remaining time, min remaining time, deliverable now).

    Remaining times are clamped to the largest delay budget and scaled to
    [-1, 1]; empty buffers report the most-slack sentinel +1. The deliverable
    count is scaled by the full-link per-slot packet capacity.
    """
    dmax = cfg.max_delay_budget
    full_cap = cfg.full_link_packets_per_slot
    budgets = [u.profile.delay_budget_slots(cfg.slot_seconds) for u in users]
    out = np.zeros(4 * NUM_SLICES, dtype=np.float64)
    for s, buf in enumerate(buffers):
        n = len(buf)
        out[4 * s] = n / cfg.queue_capacity
        if n == 0:
            out[4 * s + 1] = 1.0
            out[4 * s + 2] = 1.0
        else:
            total = 0.0
            low = math.inf
            for i in range(n):
                pkt = buf.peek(i)
                rem = budgets[pkt.user_id] - (current_slot - pkt.arrival_slot)
                if rem > dmax:
                    rem = dmax
                elif rem < -dmax:
                    rem = -dmax
                total += rem
                if rem < low:
                    low = rem
            out[4 * s + 1] = (total / n) / dmax
            out[4 * s + 2] = low / dmax
        cap = transmit_capacity(int(alloc[s]), cfg)
        out[4 * s + 3] = min(n, cap) / full_cap
    return out


@dataclass
class SlotOutcome:
    """Everything one slot did, for traces and tests."""

    chi: List[int]
    omega: List[int]
    delivered: List[List[Tuple[Packet, int]]]
    dropped: List[List[Packet]]
    phi: float


class SlicingEnv:
    """One episode-at-a-time simulation of the sliced link.

    State lives in flat arrays shared with the compiled core; the Python path
    manipulates the same arrays through :class:`SliceBuffer` views, so both
    backends walk identical trajectories.
    """

    def __init__(self, cfg: SimConfig, backend_mode: str = "auto"):
        if backend_mode not in ("auto", "c", "python"):
            raise ValueError("backend_mode must be auto, c or python")
        if backend_mode == "c" and not backend.HAVE_COMPILED:
            raise RuntimeError("compiled core is not available")
        self.cfg = cfg
        self._backend_mode = backend_mode
        n_users = cfg.num_users
        max_pkts_per_slot = max(
            (p.bits_per_slot(cfg.slot_seconds) + cfg.packet_bits - 1) // cfg.packet_bits
            for p in cfg.profiles
        )
        rc = cfg.queue_capacity + n_users * max_pkts_per_slot + 1
        self._q_arrival = np.zeros((NUM_SLICES, rc), dtype=np.int64)
        self._q_user = np.zeros((NUM_SLICES, rc), dtype=np.int64)
        self._q_meta = np.zeros((NUM_SLICES, 2), dtype=np.int64)
        self.buffers = [
            SliceBuffer(s, cfg.queue_capacity,
                        arrival=self._q_arrival[s], user=self._q_user[s],
                        meta=self._q_meta[s])
            for s in range(NUM_SLICES)
        ]
        self.alloc = np.zeros(NUM_SLICES, dtype=np.int64)
        self.users: List[UserState] = []
        self.counters = np.zeros((NUM_SLICES, 3), dtype=np.int64)  # generated, delivered, dropped
        self._slot_phis = np.zeros(cfg.slots_per_episode, dtype=np.float64)
        self._uniforms = np.zeros((cfg.slots_per_episode, n_users), dtype=np.float64)
        self.slot = 0
        self.in_update_phase = False
        # per-user mirrors for the compiled core
        self._u_slice = np.zeros(n_users, dtype=np.int64)
        self._u_onoff = np.zeros(n_users, dtype=np.uint8)
        self._u_flip = np.zeros(n_users, dtype=np.float64)
        self._u_bps = np.zeros(n_users, dtype=np.int64)
        self._u_budget = np.zeros(n_users, dtype=np.float64)
        self._u_critical = np.zeros(n_users, dtype=np.uint8)
        self._u_accum = np.zeros(n_users, dtype=np.int64)
        self._u_active = np.zeros(n_users, dtype=np.uint8)
        self._counted = np.zeros(NUM_SLICES, dtype=np.uint8)

    # -- episode lifecycle -------------------------------------------------

    def reset(self, rng) -> np.ndarray:
        """Start a new episode: fresh users, empty buffers, even allocation."""
        cfg = self.cfg
        if cfg.fixed_profiles is not None:
            self.users = make_fixed_users(cfg.fixed_profiles, cfg.profiles, rng,
                                          cfg.slot_seconds)
        else:
            self.users = assign_applications(cfg.num_users, rng, cfg.profiles,
                                             cfg.slot_seconds)
        for u in self.users:
            uid = u.user_id
            self._u_slice[uid] = u.profile.slice_id
            self._u_onoff[uid] = 1 if u.profile.is_onoff else 0
            self._u_flip[uid] = 1.0 - u.profile.p_stay
            self._u_bps[uid] = u.profile.bits_per_slot(cfg.slot_seconds)
            self._u_budget[uid] = u.profile.delay_budget_slots(cfg.slot_seconds)
            self._u_critical[uid] = 1 if u.profile.slice_id == SLICE_C else 0
        self._counted[:] = 0
        for u in self.users:
            self._counted[u.profile.slice_id] = 1
        for buf in self.buffers:
            buf.clear()
        base, rem = divmod(cfg.num_blocks, NUM_SLICES)
        for s in range(NUM_SLICES):
            self.alloc[s] = base + (1 if s < rem else 0)
        self.counters[:] = 0
        self.slot = 0
        self.in_update_phase = False
        self._uniforms[:] = rng.random((cfg.slots_per_episode, cfg.num_users))
        return self.state()

    def state(self) -> np.ndarray:
        if self._use_compiled():
            out = np.zeros(4 * NUM_SLICES, dtype=np.float64)
            backend.core().build_state(
                self._q_arrival, self._q_user, self._q_meta, self.alloc,
                self._u_budget, self.slot, self.cfg.queue_capacity,
                self.cfg.packet_bits, self.cfg.slot_bits, self.cfg.num_blocks,
                self.cfg.max_delay_budget, out)
            return out
        return build_state(self.buffers, self.alloc, self.users, self.slot, self.cfg)

    # -- stepping ----------------------------------------------------------

    def step_decision_interval(self, action: int) -> Tuple[np.ndarray, float]:
        """Apply one action, hold it for a decision period, observe."""
        if self.in_update_phase:
            raise RuntimeError("no agent actions during the update phase")
        apply_action(self.alloc, action)
        mean_phi = self._run_slots(self.cfg.slots_per_decision)
        return self.state(), mean_phi

    def begin_update_phase(self) -> None:
        """Hand the whole link to training traffic: user allocation to zero."""
        self.alloc[:] = 0
        self.in_update_phase = True

    def step_update_interval(self) -> float:
        if not self.in_update_phase:
            raise RuntimeError("begin_update_phase must run first")
        return self._run_slots(self.cfg.slots_per_decision)

    def episode_mean_phi(self) -> float:
        if self.slot != self.cfg.slots_per_episode:
            raise RuntimeError("episode is not complete")
        return float(np.sum(self._slot_phis) / self.cfg.slots_per_episode)

    def slot_phis(self) -> np.ndarray:
        return self._slot_phis[: self.slot].copy()

    def queue_lengths(self) -> List[int]:
        return [len(b) for b in self.buffers]

    # -- internals ----------------------------------------------------------

    def _use_compiled(self) -> bool:
        if self._backend_mode == "auto":
            return backend.use_compiled()
        return self._backend_mode == "c"

    def _run_slots(self, n_slots: int) -> float:
        if self.slot + n_slots > self.cfg.slots_per_episode:
            raise RuntimeError("stepping past the end of the episode")
        start = self.slot
        if self._use_compiled():
            self._pack_users()
            backend.core().run_slots(
                self._q_arrival, self._q_user, self._q_meta, self.alloc,
                self._u_slice, self._u_onoff, self._u_flip, self._u_bps,
                self._u_accum, self._u_active, self._u_budget, self._u_critical,
                self._counted, self.counters, self._uniforms,
                self._slot_phis[start:start + n_slots],
                start, n_slots, self.cfg.packet_bits, self.cfg.slot_bits,
                self.cfg.num_blocks, self.cfg.queue_capacity)
            self._unpack_users()
            self.slot += n_slots
        else:
            for _ in range(n_slots):
                self._step_one_slot()
        return float(np.sum(self._slot_phis[start:start + n_slots]) / n_slots)

    def _step_one_slot(self) -> SlotOutcome:
        cfg = self.cfg
        slot = self.slot
        urow = self._uniforms[slot]
        for u in self.users:
            if u.profile.is_onoff:
                step_onoff_with(u, urow[u.user_id])
        chi = [0] * NUM_SLICES
        delivered: List[List[Tuple[Packet, int]]] = []
        for s in range(NUM_SLICES):
            c, dl = transmit(self.buffers[s], int(self.alloc[s]), slot, cfg)
            chi[s] = c
            delivered.append(dl)
        arrivals: List[List[Packet]] = [[] for _ in range(NUM_SLICES)]
        for u in self.users:
            for pkt in generate_packets(u, slot, cfg.packet_bits):
                arrivals[pkt.slice_id].append(pkt)
        omega = [0] * NUM_SLICES
        dropped: List[List[Packet]] = []
        for s in range(NUM_SLICES):
            om, dr = enqueue_with_overflow(self.buffers[s], arrivals[s])
            omega[s] = om
            dropped.append(dr)
            self.counters[s, 0] += len(arrivals[s])
            self.counters[s, 1] += chi[s]
            self.counters[s, 2] += om
        phi = slot_reward(delivered, dropped, self.users, cfg)
        self._slot_phis[slot] = phi
        self.slot += 1
        return SlotOutcome(chi, omega, delivered, dropped, phi)

    def run_slots_traced(self, n_slots: int) -> List[SlotOutcome]:
        """Python-path stepping that keeps per-slot outcomes (for tests)."""
        if self.slot + n_slots > self.cfg.slots_per_episode:
            raise RuntimeError("stepping past the end of the episode")
        return [self._step_one_slot() for _ in range(n_slots)]

    def _pack_users(self) -> None:
        for u in self.users:
            self._u_accum[u.user_id] = u.bit_accumulator
            self._u_active[u.user_id] = 1 if u.onoff_state == ACTIVE else 0

    def _unpack_users(self) -> None:
        for u in self.users:
            u.bit_accumulator = int(self._u_accum[u.user_id])
            u.onoff_state = ACTIVE if self._u_active[u.user_id] else SILENT
