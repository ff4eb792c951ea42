"""Simulation constants and experiment configuration.

All defaults describe a 1 Mb/s backhaul link split into 10 resource blocks,
10 ms slots, 512 b packets and per-slice FIFO buffers of 100 packets. Every
constant can be overridden through a flat ``key = value`` config file (see
``parse_config_file`` and the README for the key table).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .traffic import DEFAULT_PROFILES, AppProfile

NUM_SLICES = 2
SLICE_NAMES = ("NC", "C")


class ConfigError(Exception):
    """Raised for invalid configuration files or values."""


@dataclass(frozen=True)
class SimConfig:
    """Constants of the link, the episode structure and the agent."""

    slot_seconds: float = 0.01          # slot length
    link_bps: float = 1_000_000.0       # backhaul capacity
    num_blocks: int = 10                # resource blocks sharing the link
    packet_bits: int = 512
    queue_capacity: int = 100           # per-slice buffer, in packets
    slots_per_decision: int = 10        # allocation held fixed this long
    slots_per_episode: int = 1000
    num_users: int = 5

    # agent hyperparameters
    discount: float = 0.95
    learning_rate: float = 1e-5
    temperature: float = 0.1
    batch_size: int = 32
    memory_capacity: int = 5000
    sync_every: int = 10                # model download every N training episodes

    # bit accounting for the training channel
    transition_bits: int = 704
    model_bits: int = 92256

    profiles: tuple[AppProfile, ...] = DEFAULT_PROFILES
    # when set, users get exactly these profiles instead of a uniform draw
    fixed_profiles: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        if self.num_users < 1:
            raise ConfigError("num_users must be >= 1")
        for name, val in (
            ("slot_seconds", self.slot_seconds),
            ("link_bps", self.link_bps),
            ("num_blocks", self.num_blocks),
            ("packet_bits", self.packet_bits),
            ("queue_capacity", self.queue_capacity),
            ("slots_per_decision", self.slots_per_decision),
            ("slots_per_episode", self.slots_per_episode),
            ("transition_bits", self.transition_bits),
        ):
            if val <= 0:
                raise ConfigError(f"{name} must be positive")
        if self.slots_per_episode % self.slots_per_decision != 0:
            raise ConfigError("slots_per_episode must be a multiple of slots_per_decision")
        if self.fixed_profiles is not None:
            known = {p.name for p in self.profiles}
            for name in self.fixed_profiles:
                if name not in known:
                    raise ConfigError(f"fixed profile {name!r} is not a defined profile")
            if len(self.fixed_profiles) != self.num_users:
                raise ConfigError("fixed_profiles must list one profile per user")

    @property
    def slot_bits(self) -> int:
        """Bits the whole link carries per slot (integer by construction)."""
        raw = self.slot_seconds * self.link_bps
        bits = round(raw)
        if abs(raw - bits) > 1e-6:
            raise ConfigError("slot_seconds * link_bps must be an integer bit count")
        return bits

    @property
    def decisions_per_episode(self) -> int:
        return self.slots_per_episode // self.slots_per_decision

    @property
    def num_actions(self) -> int:
        return 1 + NUM_SLICES * (NUM_SLICES - 1)

    @property
    def state_size(self) -> int:
        return 4 * NUM_SLICES

    @property
    def full_link_packets_per_slot(self) -> int:
        """Packets deliverable per slot when one slice owns every block."""
        return (self.num_blocks * self.slot_bits) // (self.packet_bits * self.num_blocks)

    @property
    def max_delay_budget(self) -> float:
        return max(p.delay_budget_slots(self.slot_seconds) for p in self.profiles)

    def profile_by_name(self, name: str) -> AppProfile:
        for p in self.profiles:
            if p.name == name:
                return p
        raise ConfigError(f"unknown profile {name!r}")


@dataclass(frozen=True)
class Strategy:
    """How training time is scheduled inside each episode.

    mode 'constant' reserves a fixed number of decision periods per episode;
    'adaptive' does the same until the convergence detector fires, then stops;
    'ideal' never reserves link time (training data uses a free side channel).
    """

    mode: str
    t_rho: int = 0

    MODES = ("constant", "adaptive", "ideal")

    def __post_init__(self):
        if self.mode not in self.MODES:
            raise ConfigError(f"unknown strategy mode {self.mode!r}")
        if not 0 <= self.t_rho <= 5:
            raise ConfigError("t_rho must be in 0..5")

    @property
    def name(self) -> str:
        if self.mode == "ideal":
            return "ideal"
        return f"{self.mode}:{self.t_rho}"

    @property
    def file_tag(self) -> str:
        return self.name.replace(":", "_t")

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        text = text.strip()
        if text == "ideal":
            return cls("ideal")
        if ":" in text:
            mode, _, num = text.partition(":")
            try:
                return cls(mode.strip(), int(num))
            except ValueError:
                raise ConfigError(f"bad strategy spec {text!r}") from None
        raise ConfigError(f"bad strategy spec {text!r} (want 'ideal', 'constant:N' or 'adaptive:N')")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a reproducible experiment needs."""

    sim: SimConfig = field(default_factory=SimConfig)
    episodes: int = 10000               # coherence period length
    detector_window: int = 4000         # episodes per rolling window
    strategies: tuple[Strategy, ...] = (Strategy("ideal"),)
    num_runs: int = 1
    base_seed: int = 1
    output_dir: str = "results"
    sample_stride: int = 196
    common_random_numbers: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if self.num_runs < 1:
            raise ConfigError("num_runs must be >= 1")
        if self.sample_stride < 1:
            raise ConfigError("sample_stride must be >= 1")
        if self.detector_window < 1:
            raise ConfigError("detector_window must be >= 1")
        if not self.strategies:
            raise ConfigError("at least one strategy is required")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")


# Keys understood by the flat config file format; values give the coercion.
_SIM_KEYS = {
    "slot_seconds": float,
    "link_bps": float,
    "num_blocks": int,
    "packet_bits": int,
    "queue_capacity": int,
    "slots_per_decision": int,
    "slots_per_episode": int,
    "num_users": int,
    "discount": float,
    "learning_rate": float,
    "temperature": float,
    "batch_size": int,
    "memory_capacity": int,
    "sync_every": int,
    "transition_bits": int,
    "model_bits": int,
}
_EXP_KEYS = {
    "episodes": int,
    "detector_window": int,
    "num_runs": int,
    "base_seed": int,
    "output_dir": str,
    "sample_stride": int,
    "common_random_numbers": lambda s: s.lower() in ("1", "true", "yes"),
    "workers": int,
}


def _parse_profile_value(name: str, value: str) -> AppProfile:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 5:
        raise ConfigError(
            f"profile.{name} wants 'SLICE,bitrate_bps,delay_budget_ms,onoff,p_stay'"
        )
    slice_name, bitrate, delay_ms, onoff, p_stay = parts
    if slice_name not in SLICE_NAMES:
        raise ConfigError(f"profile.{name}: slice must be one of {SLICE_NAMES}")
    return AppProfile(
        name=name,
        slice_id=SLICE_NAMES.index(slice_name),
        bitrate_bps=float(bitrate),
        delay_budget_ms=float(delay_ms),
        is_onoff=onoff.lower() in ("1", "true", "yes"),
        p_stay=float(p_stay),
    )


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    sim_kwargs: dict = {}
    exp_kwargs: dict = {}
    profiles: dict[str, AppProfile] = {p.name: p for p in DEFAULT_PROFILES}
    profiles_touched = False
    fixed_profiles = None
    strategies: Optional[tuple[Strategy, ...]] = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key in _SIM_KEYS:
            try:
                sim_kwargs[key] = _SIM_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}") from None
        elif key in _EXP_KEYS:
            try:
                exp_kwargs[key] = _EXP_KEYS[key](value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: bad value for {key}") from None
        elif key == "strategies":
            strategies = tuple(Strategy.parse(s) for s in value.split(",") if s.strip())
        elif key == "fixed_profiles":
            fixed_profiles = tuple(s.strip() for s in value.split(",") if s.strip())
        elif key.startswith("profile."):
            name = key[len("profile."):]
            profiles[name] = _parse_profile_value(name, value)
            profiles_touched = True
        else:
            raise ConfigError(f"{source}:{lineno}: unknown config key {key!r}")

    if profiles_touched:
        sim_kwargs["profiles"] = tuple(profiles.values())
    if fixed_profiles is not None:
        sim_kwargs["fixed_profiles"] = fixed_profiles
    sim = SimConfig(**sim_kwargs)
    if strategies is not None:
        exp_kwargs["strategies"] = strategies
    return ExperimentConfig(sim=sim, **exp_kwargs)


def parse_config_file(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=path)


def resolve_output_dir(config: ExperimentConfig, flag_value: Optional[str] = None) -> str:
    """Flag beats the SLICESIM_OUT environment variable beats the config."""
    if flag_value:
        return flag_value
    env = os.environ.get("SLICESIM_OUT")
    if env:
        return env
    return config.output_dir


def with_overrides(config: ExperimentConfig, *, seed=None, runs=None,
                   out=None, strategies: Optional[Sequence[Strategy]] = None) -> ExperimentConfig:
    kwargs = {}
    if seed is not None:
        kwargs["base_seed"] = seed
    if runs is not None:
        kwargs["num_runs"] = runs
    if out is not None:
        kwargs["output_dir"] = out
    if strategies is not None:
        kwargs["strategies"] = tuple(strategies)
    return replace(config, **kwargs) if kwargs else config
