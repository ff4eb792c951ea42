"""Per-user packet arrival processes.

Two application families are modeled: constant-bitrate sources that emit
packets whenever a full packet worth of bits has accumulated, and on-off
sources driven by a symmetric two-state Markov chain that only generate
while active. Bit accounting is exact: bits per slot are rounded to whole
bits once, so packet emission never drifts from the configured rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

from .env_types import Packet

SILENT = 0
ACTIVE = 1


@dataclass(frozen=True)
class AppProfile:
    """An application class: rate, deadline, slice and burstiness."""

    name: str
    slice_id: int                 # 0 = non-critical, 1 = critical
    bitrate_bps: float            # active-state rate for on-off apps
    delay_budget_ms: float
    is_onoff: bool
    p_stay: float = 1.0           # chance of keeping the on-off state each slot

    def __post_init__(self):
        if self.bitrate_bps <= 0:
            raise ValueError(f"profile {self.name}: bitrate must be positive")
        if not 0.0 <= self.p_stay <= 1.0:
            raise ValueError(f"profile {self.name}: p_stay must be in [0, 1]")

    def delay_budget_slots(self, slot_seconds: float = 0.01) -> float:
        budget = self.delay_budget_ms / (slot_seconds * 1000.0)
        if budget < 1.0:
            raise ValueError(f"profile {self.name}: delay budget below one slot")
        return budget

    def bits_per_slot(self, slot_seconds: float = 0.01) -> int:
        raw = self.bitrate_bps * slot_seconds
        bits = round(raw)
        if abs(raw - bits) > 1e-6:
            raise ValueError(
                f"profile {self.name}: bitrate*slot must be a whole number of bits"
            )
        return bits


DEFAULT_PROFILES: Tuple[AppProfile, ...] = (
    AppProfile("NCVO", slice_id=0, bitrate_bps=25_000.0, delay_budget_ms=100.0, is_onoff=False),
    AppProfile("NCVI", slice_id=0, bitrate_bps=384_000.0, delay_budget_ms=300.0, is_onoff=False),
    AppProfile("CVO", slice_id=1, bitrate_bps=25_000.0, delay_budget_ms=75.0, is_onoff=True, p_stay=0.9),
    AppProfile("CVI", slice_id=1, bitrate_bps=384_000.0, delay_budget_ms=100.0, is_onoff=True, p_stay=0.9),
)


@dataclass
class UserState:
    """Mutable generation state of one user within an episode."""

    user_id: int
    profile: AppProfile
    onoff_state: int = ACTIVE
    bit_accumulator: int = 0
    _bits_per_slot: int = field(default=0, repr=False)

    @property
    def active(self) -> bool:
        return self.onoff_state == ACTIVE


def make_user(user_id: int, profile: AppProfile, onoff_state: int,
              slot_seconds: float = 0.01) -> UserState:
    if not profile.is_onoff:
        onoff_state = ACTIVE
    return UserState(
        user_id=user_id,
        profile=profile,
        onoff_state=onoff_state,
        bit_accumulator=0,
        _bits_per_slot=profile.bits_per_slot(slot_seconds),
    )


def assign_applications(num_users: int, rng, profiles=DEFAULT_PROFILES,
                        slot_seconds: float = 0.01) -> List[UserState]:
    """Draw one application per user, uniformly and independently.

    On-off users start in a uniformly random state, the stationary
    distribution of the symmetric chain; everyone else starts active.
    """
    if num_users < 1:
        raise ValueError("num_users must be >= 1")
    picks = rng.integers(0, len(profiles), size=num_users)
    inits = rng.random(num_users)
    users = []
    for uid in range(num_users):
        profile = profiles[picks[uid]]
        state = ACTIVE if inits[uid] < 0.5 else SILENT
        users.append(make_user(uid, profile, state, slot_seconds))
    return users


def make_fixed_users(profile_names, profiles, rng, slot_seconds: float = 0.01) -> List[UserState]:
    """Deterministic profile list, random on-off initialization.

    Consumes the same number of uniforms as ``assign_applications`` minus the
    profile draw, keeping run streams well defined when assignments are frozen.
    """
    by_name = {p.name: p for p in profiles}
    inits = rng.random(len(profile_names))
    users = []
    for uid, name in enumerate(profile_names):
        profile = by_name[name]
        state = ACTIVE if inits[uid] < 0.5 else SILENT
        users.append(make_user(uid, profile, state, slot_seconds))
    return users


def step_onoff_with(state: UserState, u01: float) -> None:
    """Advance the on-off chain using a pre-drawn uniform in [0, 1)."""
    if not state.profile.is_onoff:
        raise ValueError("step_onoff called on a constant-bitrate user")
    if u01 < 1.0 - state.profile.p_stay:
        state.onoff_state = ACTIVE if state.onoff_state == SILENT else SILENT


def step_onoff(state: UserState, rng) -> None:
    step_onoff_with(state, rng.random())


def generate_packets(state: UserState, slot: int, packet_bits: int = 512) -> List[Packet]:
    """Emit the packets a user produces in one slot.

    Silent users produce nothing and keep their accumulator untouched. Active
    users add one slot of bits and emit a packet per full ``packet_bits``.
    """
    if state.onoff_state == SILENT:
        return []
    state.bit_accumulator += state._bits_per_slot
    count = state.bit_accumulator // packet_bits
    if count == 0:
        return []
    state.bit_accumulator -= count * packet_bits
    sid = state.profile.slice_id
    return [Packet(state.user_id, sid, slot) for _ in range(count)]
