"""Synchronous federated rounds over heterogeneous edge servers.

Each round every sampled client plans its adapters, trains them locally,
and (if it met the deadline) uploads ``B`` and ``A``. The server turns them
into incremental matrices, aggregates per slot with ``|D_i| / b_i``
weights and broadcasts; every client merges the quantized aggregate into
its own backbone copy and re-initializes its adapters.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .config import CampaignConfig, ProfileSampler
from .errors import InfeasibleMemoryError, ShapeError
from .importance import SensitivityState, score
from .model import (
    SLOTS,
    Adam,
    AttentionBlock,
    LoraAdapter,
    World,
    build_world,
    evaluate_loss,
    loss_and_grads,
    stream,
)
from .planner import (
    AdapterPlan,
    EdgeProfile,
    RankMenu,
    Slot,
    adapter_reserve_bytes,
    allocate_batches,
    fixed_rank_plan,
    plan_adapters,
    select_bits,
)
from .quantizer import round_trip

log = logging.getLogger(__name__)

THREADS_ENV = "FEDPIPE_SIM_THREADS"
TRANSFER_BYTES = 2  # adapters travel as 16-bit floats

# stream tags, disjoint from the ones used by model.build_world
_PROFILE, _SAMPLE, _TRAIN, _INIT, _REINIT = 11, 12, 13, 14, 15


def slot_label(slot: Slot) -> str:
    return f"L{slot[0]}.{slot[1]}"


def all_slots(n_layers: int) -> list[Slot]:
    return [(layer, m) for layer in range(n_layers) for m in SLOTS]


def backbone_flops_per_sample(n_layers: int, d: int, s: int) -> float:
    """Frozen-path training FLOPs per sample.

    Four d x d projections cost 2 FLOPs per multiply-add forward and 2 more
    for the activation gradient; attention scores and mixing cost 2 s^2 d
    each forward and twice that backward.
    """
    return float(n_layers * (16 * s * d * d + 12 * s * s * d))


@dataclass
class ClientState:
    profile: EdgeProfile
    backbone: list[AttentionBlock]
    bits: int
    batch: int
    plan: AdapterPlan | None = None
    adapters: dict[Slot, LoraAdapter] = field(default_factory=dict)
    sensitivity: dict[Slot, SensitivityState] = field(default_factory=dict)
    scores: dict[Slot, float] = field(default_factory=dict)

    @property
    def client_id(self) -> int:
        return self.profile.client_id


@dataclass(frozen=True)
class ClientRoundRecord:
    client_id: int
    plan: AdapterPlan
    bits: int
    steps: int
    wall_time: float
    under_trained: bool
    bytes_up: int
    train_loss: float | None

    def to_dict(self) -> dict:
        out = self.plan.to_dict()
        out.update(
            bits=self.bits,
            steps=self.steps,
            wall_time=self.wall_time,
            under_trained=self.under_trained,
            bytes_up=self.bytes_up,
            train_loss=self.train_loss,
        )
        return out


@dataclass(frozen=True)
class RoundReport:
    t: int
    eval_loss: float
    flagged: int
    participating: int
    bytes_up: int
    clients: tuple[ClientRoundRecord, ...]
    weights: dict[str, dict[int, float]]

    @property
    def utr(self) -> Fraction:
        """Under-training rate as an exact fraction."""
        return Fraction(self.flagged, self.participating)


@dataclass(frozen=True)
class SlotAggregate:
    delta: np.ndarray
    weights: dict[int, float]


# -- server-side primitives --------------------------------------------------


def preprocess_delta(adapter: LoraAdapter) -> np.ndarray:
    """Incremental matrix ``B @ A`` of one uploaded adapter."""
    if adapter.B.shape[1] != adapter.A.shape[0]:
        raise ShapeError("adapter factors do not chain")
    return adapter.B @ adapter.A


def aggregation_weights(sizes: dict[int, int], batches: dict[int, int], weighting="inverse_batch") -> dict[int, float]:
    """Normalised ``|D_i| / b_i`` (or ``|D_i|``) weights, exact before the float cast."""
    raw = {
        cid: Fraction(sizes[cid], batches[cid]) if weighting == "inverse_batch" else Fraction(sizes[cid])
        for cid in sorted(sizes)
    }
    total = sum(raw.values())
    return {cid: float(w / total) for cid, w in raw.items()}


def aggregate_slot(deltas, sizes, batches, weighting="inverse_batch") -> SlotAggregate | None:
    """Weighted sum of ``(client_id, delta)`` pairs; None when nobody contributed.

    ``sizes`` and ``batches`` map client id to ``|D_i|`` and ``b_i``.
    The sum runs in client-id order.
    """
    if not deltas:
        return None
    deltas = sorted(deltas, key=lambda p: p[0])
    shape = deltas[0][1].shape
    if any(dw.shape != shape for _, dw in deltas):
        raise ShapeError("incremental matrices for one slot differ in shape")
    ids = [cid for cid, _ in deltas]
    w = aggregation_weights({c: sizes[c] for c in ids}, {c: batches[c] for c in ids}, weighting)
    out = np.zeros(shape)
    for cid, dw in deltas:
        out += w[cid] * dw
    return SlotAggregate(out, w)


def apply_update(
    client: ClientState, slot: Slot, delta_global, rng: np.random.Generator, block_size: int = 64
) -> ClientState:
    """Merge the quantized aggregate into the client's weight and reset its adapter.

    The adapter on ``slot`` (if any) restarts at ``B = 0`` with a fresh
    ``A ~ N(0, 1/r)``. Returns a new state; ``client`` is not modified.
    """
    layer, m = slot
    blk = client.backbone[layer]
    w = blk.weight(m)
    if np.shape(delta_global) != w.shape:
        raise ShapeError(f"aggregate {np.shape(delta_global)} does not match W_{m} {w.shape}")
    backbone = list(client.backbone)
    backbone[layer] = blk.with_weight(m, w + round_trip(delta_global, client.bits, block_size))
    adapters = dict(client.adapters)
    if slot in adapters:
        old = adapters[slot]
        adapters[slot] = LoraAdapter.fresh(slot, old.rank, old.d_in, old.d_out, rng)
    return dataclasses.replace(client, backbone=backbone, adapters=adapters)


# -- campaign ----------------------------------------------------------------


def worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "0").strip() or "0"
    n = int(raw)
    return (os.cpu_count() or 1) if n <= 0 else n


def resolve_profiles(cfg: CampaignConfig) -> list[EdgeProfile]:
    if isinstance(cfg.profiles, ProfileSampler):
        out = []
        for i in range(cfg.n_clients):
            rng = stream(cfg.seed, _PROFILE, i)
            c = rng.uniform(*cfg.profiles.c_max)
            m = rng.uniform(*cfg.profiles.m_max)
            size = (
                int(rng.integers(cfg.profiles.dataset_size[0], cfg.profiles.dataset_size[1] + 1))
                if cfg.profiles.dataset_size
                else cfg.samples_per_client
            )
            out.append(EdgeProfile(i, float(c), float(m), size))
        return out
    return [
        EdgeProfile(i, p.c_max, p.m_max, p.dataset_size or cfg.samples_per_client)
        for i, p in enumerate(cfg.profiles)
    ]


class Campaign:
    """Builds the world and client states for ``cfg`` and runs its rounds."""

    def __init__(self, cfg: CampaignConfig):
        self.cfg = cfg
        self.menu = RankMenu(dict(cfg.rank_menu))
        self.slots = all_slots(cfg.n_layers)
        self.profiles = resolve_profiles(cfg)
        self.world: World = build_world(
            cfg.seed,
            cfg.n_layers,
            cfg.d,
            cfg.s,
            cfg.n_clients,
            [p.dataset_size for p in self.profiles],
            cfg.shift_scale,
            cfg.noise_sigma,
            cfg.noniid_scale,
            cfg.holdout_per_client,
        )
        self.backbone_flops = cfg.backbone_flops or backbone_flops_per_sample(cfg.n_layers, cfg.d, cfg.s)
        batches = allocate_batches(self.profiles, cfg.b_min, cfg.b_max)
        self.deadline = cfg.deadline or self.auto_deadline(batches)

        max_params = sum(self.menu[m][0] * 2 * cfg.d for _, m in self.slots)
        reserve = adapter_reserve_bytes(max_params)
        self.infeasible: list[InfeasibleMemoryError] = []
        self.clients: list[ClientState] = []
        for prof, b in zip(self.profiles, batches):
            try:
                bits = select_bits(prof, self.world.backbone_param_count(), reserve)
            except InfeasibleMemoryError as exc:
                log.warning("%s; excluded from the campaign", exc)
                self.infeasible.append(exc)
                continue
            stored = [
                AttentionBlock(
                    blk.layer_index,
                    *[round_trip(blk.weight(m), bits, cfg.block_size) for m in SLOTS],
                )
                for blk in self.world.backbone
            ]
            self.clients.append(ClientState(prof, stored, bits, b))
        self.initial_loss = self.eval_loss() if self.clients else float("nan")
        self.reports: list[RoundReport] = []

    def auto_deadline(self, batches) -> float:
        """Longest round a budget-respecting plan can take: every client's adapter work fits
        in one second per step, plus its frozen-backbone share."""
        return self.cfg.local_steps * max(
            1.0 + b * self.backbone_flops / p.c_max for p, b in zip(self.profiles, batches)
        )

    def eval_loss(self) -> float:
        """Held-out loss weighted by ``|D_i| / |D|`` over the campaign's clients."""
        held = self.world.holdout or self.world.datasets
        total = sum(c.profile.dataset_size for c in self.clients)
        return float(
            sum(
                c.profile.dataset_size / total * evaluate_loss(c.backbone, held[c.client_id])
                for c in self.clients
            )
        )

    def plan_for(self, client: ClientState) -> AdapterPlan:
        cfg = self.cfg
        if cfg.fixed_rank is not None:
            return fixed_rank_plan(
                client.profile, cfg.b_max, self.slots, cfg.fixed_rank, self.menu, cfg.d, cfg.s
            )
        scores = {slot: client.scores.get(slot, 0.0) for slot in self.slots}
        return plan_adapters(client.profile, client.batch, scores, self.menu, cfg.d, cfg.s)

    def _local_round(self, client: ClientState, t: int):
        cfg = self.cfg
        plan = self.plan_for(client)
        client.plan = plan
        d = cfg.d
        # reuse adapters left by the last broadcast when the rank is unchanged
        adapters = []
        init_rng = stream(cfg.seed, _INIT, client.client_id, t)
        for sel in plan.selections:
            prev = client.adapters.get(sel.target)
            if prev is not None and prev.rank == sel.rank and not prev.B.any():
                adapters.append(prev)
            else:
                adapters.append(LoraAdapter.fresh(sel.target, sel.rank, d, d, init_rng))
        client.adapters = {ad.target: ad for ad in adapters}

        if not adapters:
            return ClientRoundRecord(client.client_id, plan, client.bits, 0, 0.0, True, 0, None), {}

        step_time = plan.batch * (plan.flops_per_sample + self.backbone_flops) / client.profile.c_max
        wall = cfg.local_steps * step_time
        late = wall > self.deadline * (1.0 + 1e-12)
        steps = min(cfg.local_steps, math.floor(self.deadline / step_time)) if late else cfg.local_steps

        data = self.world.datasets[client.client_id]
        rng = stream(cfg.seed, _TRAIN, client.client_id, t)
        params = [p for ad in adapters for p in (ad.B, ad.A)]
        opt = Adam(params, lr=cfg.learning_rate)
        loss, grads = None, None
        for _ in range(steps):
            idx = np.sort(rng.choice(data.size, size=plan.batch, replace=False))
            loss, grads = loss_and_grads(client.backbone, adapters, data.take(idx))
            opt.step([g for pair in grads for g in pair])

        if grads is not None:
            for ad, g in zip(adapters, grads):
                st = client.sensitivity.setdefault(ad.target, SensitivityState())
                client.scores[ad.target] = score(ad, st, g, cfg.lambda1, cfg.lambda2).value

        uploads = {}
        bytes_up = 0
        if not late:
            for ad in adapters:
                uploads[ad.target] = preprocess_delta(ad)
                bytes_up += (ad.B.size + ad.A.size) * TRANSFER_BYTES
        wall_done = steps * step_time
        return (
            ClientRoundRecord(client.client_id, plan, client.bits, steps, wall_done, late, bytes_up, loss),
            uploads,
        )

    def sample_clients(self, t: int) -> list[ClientState]:
        if self.cfg.sample_fraction >= 1.0:
            return list(self.clients)
        k = max(1, round(self.cfg.sample_fraction * len(self.clients)))
        pick = stream(self.cfg.seed, _SAMPLE, t).choice(len(self.clients), size=k, replace=False)
        return [self.clients[i] for i in sorted(pick)]

    def run_round(self, t: int) -> RoundReport:
        cfg = self.cfg
        sampled = self.sample_clients(t)
        workers = min(worker_count(), len(sampled))
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda c: self._local_round(c, t), sampled))
        else:
            results = [self._local_round(c, t) for c in sampled]

        # barrier: aggregate in slot order, contributors in client-id order
        records = sorted((r for r, _ in results), key=lambda r: r.client_id)
        contributions: dict[Slot, list] = {}
        batches = {}
        for rec, uploads in sorted(results, key=lambda p: p[0].client_id):
            batches[rec.client_id] = rec.plan.batch
            for slot, dw in uploads.items():
                contributions.setdefault(slot, []).append((rec.client_id, dw))
        sizes = {c.client_id: c.profile.dataset_size for c in self.clients}
        aggregates = {}
        for slot in self.slots:
            agg = aggregate_slot(contributions.get(slot, []), sizes, batches, cfg.aggregation_weighting)
            if agg is not None:
                aggregates[slot] = agg

        for i, client in enumerate(self.clients):
            rng = stream(cfg.seed, _REINIT, client.client_id, t)
            for slot, agg in aggregates.items():
                client = apply_update(client, slot, agg.delta, rng, cfg.block_size)
            # adapters that were not re-initialised by a broadcast are stale
            client.adapters = {s: a for s, a in client.adapters.items() if s in aggregates}
            self.clients[i] = client

        report = RoundReport(
            t=t,
            eval_loss=self.eval_loss(),
            flagged=sum(r.under_trained for r in records),
            participating=len(records),
            bytes_up=sum(r.bytes_up for r in records),
            clients=tuple(records),
            weights={slot_label(s): a.weights for s, a in aggregates.items()},
        )
        self.reports.append(report)
        return report

    def run(self) -> list[RoundReport]:
        if not self.clients:
            return []
        for t in range(len(self.reports), self.cfg.rounds):
            self.run_round(t)
        return self.reports


def run_round(campaign: Campaign, t: int) -> RoundReport:
    return campaign.run_round(t)


def run_campaign(cfg: CampaignConfig) -> list[RoundReport]:
    return Campaign(cfg).run()
