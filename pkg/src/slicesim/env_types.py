"""Shared plain data types, split out to keep imports acyclic."""

from typing import NamedTuple


class Packet(NamedTuple):
    user_id: int
    slice_id: int
    arrival_slot: int
