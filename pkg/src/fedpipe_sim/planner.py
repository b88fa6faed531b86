"""Two-stage adapter configuration: batch sizes from compute ratios, then a
greedy weight/rank scan under each server's per-sample FLOPs budget."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ContractViolation, InfeasibleMemoryError, ParameterError
from .model import SLOTS

Slot = tuple[int, str]  # (layer, weight name)

FULL_PRECISION_BYTES = 4
# weights + Adam first and second moments
ADAPTER_STATE_COPIES = 3


@dataclass(frozen=True)
class EdgeProfile:
    client_id: int
    c_max: float  # FLOPS
    m_max: float  # bytes
    dataset_size: int

    def __post_init__(self):
        if self.c_max <= 0 or self.m_max <= 0 or self.dataset_size < 1:
            raise ContractViolation(f"invalid profile for client {self.client_id}")


@dataclass(frozen=True)
class Selection:
    layer: int
    slot: str
    rank: int

    @property
    def target(self) -> Slot:
        return (self.layer, self.slot)


@dataclass(frozen=True)
class AdapterPlan:
    client_id: int
    batch: int
    selections: tuple[Selection, ...]
    residual: float  # leftover per-sample budget after the scan
    flops_per_sample: float

    def ranks(self) -> dict[Slot, int]:
        return {s.target: s.rank for s in self.selections}

    def to_dict(self) -> dict:
        return {
            "client_id": self.client_id,
            "batch": self.batch,
            "selections": [{"layer": s.layer, "slot": s.slot, "rank": s.rank} for s in self.selections],
            "flops_per_sample": self.flops_per_sample,
            "residual": self.residual,
        }


@dataclass(frozen=True)
class RankMenu:
    """Candidate ranks per weight name, strictly decreasing."""

    ranks: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for m, q in self.ranks.items():
            if not q or any(r < 1 for r in q) or any(a <= b for a, b in zip(q, q[1:])):
                raise ParameterError(f"rank menu for {m!r} must be non-empty, >= 1 and strictly decreasing")

    @classmethod
    def uniform(cls, ranks) -> "RankMenu":
        return cls({m: tuple(ranks) for m in SLOTS})

    def __getitem__(self, m: str) -> tuple[int, ...]:
        return self.ranks[m]


def allocate_batches(profiles: list[EdgeProfile], b_min: int, b_max: int) -> list[int]:
    """``b_i = floor(b_max * C_i / max_j C_j)``, raised to ``b_min`` where smaller."""
    if not profiles:
        raise ContractViolation("no profiles to allocate batches for")
    if b_min < 1 or b_max < b_min:
        raise ParameterError(f"need 1 <= b_min <= b_max, got {b_min}, {b_max}")
    top = max(p.c_max for p in profiles)
    return [max(b_min, math.floor(b_max * p.c_max / top)) for p in profiles]


def slot_cost(rank: int, d_in: int, d_out: int, s: int) -> float:
    """Per-sample training FLOPs of one low-rank path: 2 forward + 4 backward passes per token."""
    return 6.0 * s * rank * (d_in + d_out)


def flops_cost(selections, d: int, s: int) -> float:
    return sum(slot_cost(sel.rank, d, d, s) for sel in selections)


def _score_value(x) -> float:
    return float(getattr(x, "value", x))


def plan_adapters(
    profile: EdgeProfile,
    batch: int,
    scores: dict[Slot, float],
    menu: RankMenu,
    d: int,
    s: int,
) -> AdapterPlan:
    """Greedy scan over slots by descending score.

    For each slot the menu is tried from the largest rank down; the first
    rank that fits the remaining per-sample budget is taken and the scan
    moves on to the next slot. Slots whose smallest rank does not fit are
    skipped. Ties in score keep slot order.
    """
    if batch < 1:
        raise ContractViolation("batch must be >= 1")
    remaining = profile.c_max / batch
    order = sorted(scores, key=lambda slot: (-_score_value(scores[slot]), slot[0], SLOTS.index(slot[1])))
    chosen = []
    for layer, m in order:
        for r in menu[m]:
            c = slot_cost(r, d, d, s)
            if c <= remaining:
                chosen.append(Selection(layer, m, r))
                remaining -= c
                break
    return AdapterPlan(profile.client_id, batch, tuple(chosen), remaining, flops_cost(chosen, d, s))


def fixed_rank_plan(profile: EdgeProfile, batch: int, slots, rank, menu: RankMenu, d: int, s: int) -> AdapterPlan:
    """Baseline: every slot at one rank, budget ignored. ``rank='max'`` takes each menu's top."""
    chosen = tuple(
        Selection(layer, m, menu[m][0] if rank == "max" else int(rank)) for layer, m in slots
    )
    cost = flops_cost(chosen, d, s)
    return AdapterPlan(profile.client_id, batch, chosen, profile.c_max / batch - cost, cost)


def adapter_reserve_bytes(adapter_params: int) -> int:
    """Adapter weights plus optimizer moments at full precision."""
    return adapter_params * FULL_PRECISION_BYTES * ADAPTER_STATE_COPIES


def select_bits(profile: EdgeProfile, backbone_param_count: int, reserve: float = 0.0) -> int:
    """Widest backbone precision in {32, 16, 8, 4} that fits next to ``reserve`` bytes."""
    if backbone_param_count < 1:
        raise ContractViolation("backbone_param_count must be >= 1")
    for bits in (32, 16, 8, 4):
        if backbone_param_count * bits / 8 + reserve <= profile.m_max:
            return bits
    raise InfeasibleMemoryError(
        profile.client_id, backbone_param_count * 4 / 8 + reserve, profile.m_max
    )
