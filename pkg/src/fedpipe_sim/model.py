"""Synthetic attention-block backbone, LoRA adapters and client data.

The "pre-trained" backbone is a stack of single-head attention blocks with
no biases, norms or MLPs. The downstream task is regression onto a teacher
whose weights are a random perturbation of the backbone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolation, ShapeError
from .linalg import Node, Tape, gradient_of_loss

SLOTS = ("q", "k", "v", "o")


def stream(seed: int, *keys: int) -> np.random.Generator:
    """Independent RNG stream addressed by ``(seed, *keys)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


# stream tags
_BACKBONE, _TEACHER, _OFFSET, _DATA, _HOLDOUT = 1, 2, 3, 4, 5


@dataclass(frozen=True)
class AttentionBlock:
    layer_index: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray

    def __post_init__(self):
        d = self.wq.shape[0]
        for m in SLOTS:
            w = getattr(self, "w" + m)
            if w.shape != (d, d):
                raise ShapeError(f"W_{m} must be {d}x{d}, got {w.shape}")
            w.setflags(write=False)

    @property
    def d(self) -> int:
        return self.wq.shape[0]

    def weight(self, m: str) -> np.ndarray:
        return getattr(self, "w" + m)

    def with_weight(self, m: str, w) -> "AttentionBlock":
        kw = {"w" + s: self.weight(s) for s in SLOTS}
        kw["w" + m] = np.array(w, dtype=np.float64)
        return AttentionBlock(self.layer_index, **kw)


@dataclass
class LoraAdapter:
    """Trainable pair with ``delta = B @ A`` added to the weight at ``target``."""

    target: tuple[int, str]
    B: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        self.B = np.array(self.B, dtype=np.float64)
        self.A = np.array(self.A, dtype=np.float64)
        if self.B.ndim != 2 or self.A.ndim != 2 or self.B.shape[1] != self.A.shape[0]:
            raise ShapeError(f"adapter factors {self.B.shape} and {self.A.shape} do not chain")
        r = self.B.shape[1]
        if r < 1 or r > min(self.B.shape[0], self.A.shape[1]):
            raise ConfigurationError(f"rank {r} outside [1, min(d_i, d_o)]")

    @property
    def rank(self) -> int:
        return self.B.shape[1]

    @property
    def d_in(self) -> int:
        return self.B.shape[0]

    @property
    def d_out(self) -> int:
        return self.A.shape[1]

    def delta(self) -> np.ndarray:
        return self.B @ self.A

    def flat_params(self) -> np.ndarray:
        return np.concatenate([self.B.ravel(), self.A.ravel()])

    @classmethod
    def fresh(cls, target, rank, d_in, d_out, rng: np.random.Generator) -> "LoraAdapter":
        """``B = 0`` and ``A ~ N(0, 1/r)``, so the initial delta is exactly zero."""
        a = rng.standard_normal((rank, d_out)) / math.sqrt(rank)
        return cls(tuple(target), np.zeros((d_in, rank)), a)


@dataclass
class ClientDataset:
    client_id: int
    inputs: np.ndarray  # (n, s, d)
    targets: np.ndarray  # (n, s, d)

    def __post_init__(self):
        if self.inputs.shape != self.targets.shape:
            raise ShapeError("inputs and targets differ in shape")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]

    def __len__(self):
        return self.size

    def take(self, indices) -> "ClientDataset":
        idx = np.asarray(indices)
        return ClientDataset(self.client_id, self.inputs[idx], self.targets[idx])


@dataclass
class World:
    backbone: list[AttentionBlock]
    teacher: list[AttentionBlock]
    datasets: list[ClientDataset]
    holdout: list[ClientDataset] = field(default_factory=list)

    @property
    def d(self) -> int:
        return self.backbone[0].d

    @property
    def s(self) -> int:
        return self.datasets[0].inputs.shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.backbone)

    def backbone_param_count(self) -> int:
        return 4 * self.d * self.d * self.n_layers


def predict(blocks: list[AttentionBlock], x: np.ndarray) -> np.ndarray:
    """Forward of ``x`` with shape ``(n, s, d)``, no tape.

    Runs sample by sample with the same operation order as the taped
    forward, so both give identical floats.
    """
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    inv_sqrt_d = 1.0 / math.sqrt(blocks[0].d)
    for j in range(x.shape[0]):
        h = x[j]
        for blk in blocks:
            q = h @ blk.wq
            k = h @ blk.wk
            v = h @ blk.wv
            z = (q @ k.T) * inv_sqrt_d
            z = z - z.max(axis=1, keepdims=True)
            e = np.exp(z)
            h = ((e / e.sum(axis=1, keepdims=True)) @ v) @ blk.wo
        out[j] = h
    return out


def evaluate_loss(blocks: list[AttentionBlock], data: ClientDataset) -> float:
    """Mean squared error of ``blocks`` on ``data``."""
    r = predict(blocks, data.inputs) - data.targets
    return float(np.mean(r * r))


def build_world(
    seed: int,
    n_layers: int,
    d: int,
    s: int,
    n_clients: int,
    samples_per_client,
    shift_scale: float,
    noise_sigma: float,
    noniid_scale: float = 1.0,
    holdout_per_client: int = 0,
) -> World:
    """Random backbone, perturbed teacher and non-IID client datasets.

    Backbone weights are ``N(0, 1/d)``; the teacher adds
    ``shift_scale * N(0, 1/d)`` to every weight. Client ``i`` draws inputs
    around a mean row ``noniid_scale * N(0, I)``; targets are the teacher's
    output plus ``noise_sigma`` Gaussian noise. ``samples_per_client`` may be
    an int or one count per client.
    """
    if min(n_layers, s, n_clients) < 1 or d < 4:
        raise ContractViolation("need n_layers, s, n_clients >= 1 and d >= 4")
    sizes = (
        [int(samples_per_client)] * n_clients
        if np.isscalar(samples_per_client)
        else [int(n) for n in samples_per_client]
    )
    if len(sizes) != n_clients or min(sizes) < 1:
        raise ContractViolation("samples_per_client must give >= 1 sample for each client")

    std = 1.0 / math.sqrt(d)
    rb = stream(seed, _BACKBONE)
    rt = stream(seed, _TEACHER)
    backbone, teacher = [], []
    for layer in range(n_layers):
        ws = [rb.standard_normal((d, d)) * std for _ in SLOTS]
        shifts = [rt.standard_normal((d, d)) * std * shift_scale for _ in SLOTS]
        backbone.append(AttentionBlock(layer, *ws))
        teacher.append(AttentionBlock(layer, *[w + dw for w, dw in zip(ws, shifts)]))

    def sample(cid, n, tag):
        mean = stream(seed, _OFFSET, cid).standard_normal(d) * noniid_scale
        rng = stream(seed, tag, cid)
        x = rng.standard_normal((n, s, d)) + mean
        y = predict(teacher, x) + noise_sigma * rng.standard_normal((n, s, d))
        return ClientDataset(cid, x, y)

    datasets = [sample(i, sizes[i], _DATA) for i in range(n_clients)]
    holdout = (
        [sample(i, holdout_per_client, _HOLDOUT) for i in range(n_clients)]
        if holdout_per_client > 0
        else []
    )
    return World(backbone, teacher, datasets, holdout)


def forward_loss(
    backbone: list[AttentionBlock],
    adapters: list[LoraAdapter],
    batch: ClientDataset,
    tape: Tape,
) -> tuple[Node, list[tuple[Node, Node]]]:
    """Record the batch MSE on ``tape``.

    Returns the 1x1 loss node and, per adapter in input order, its
    ``(B, A)`` leaf nodes.
    """
    by_slot: dict[tuple[int, str], LoraAdapter] = {}
    for ad in adapters:
        layer, m = ad.target
        if layer >= len(backbone) or m not in SLOTS:
            raise ConfigurationError(f"adapter targets missing slot {ad.target}")
        if ad.target in by_slot:
            raise ConfigurationError(f"two adapters on slot {ad.target}")
        by_slot[ad.target] = ad

    leaves: dict[tuple[int, str], tuple[Node, Node]] = {}
    eff: list[dict[str, Node]] = []
    for blk in backbone:
        row = {}
        for m in SLOTS:
            w = tape.const(blk.weight(m))
            ad = by_slot.get((blk.layer_index, m))
            if ad is not None:
                bn, an = tape.leaf(ad.B), tape.leaf(ad.A)
                leaves[ad.target] = (bn, an)
                w = tape.add(w, tape.matmul(bn, an))
            row[m] = w
        eff.append(row)

    inv_sqrt_d = 1.0 / math.sqrt(backbone[0].d)
    total = None
    for j in range(batch.size):
        h = tape.const(batch.inputs[j])
        for row in eff:
            q = tape.matmul(h, row["q"])
            k = tape.matmul(h, row["k"])
            v = tape.matmul(h, row["v"])
            p = tape.row_softmax(tape.scale(tape.matmul(q, k, transpose_b=True), inv_sqrt_d))
            h = tape.matmul(tape.matmul(p, v), row["o"])
        lj = tape.square_loss(h, batch.targets[j])
        total = lj if total is None else tape.add(total, lj)
    loss = tape.scale(total, 1.0 / batch.size)
    return loss, [leaves[ad.target] for ad in adapters]


def loss_and_grads(backbone, adapters, batch) -> tuple[float, list[tuple[np.ndarray, np.ndarray]]]:
    """Loss value and ``(dB, dA)`` for every adapter."""
    tape = Tape()
    loss, leaves = forward_loss(backbone, adapters, batch, tape)
    flat = [n for pair in leaves for n in pair]
    grads = gradient_of_loss(tape, loss, flat) if flat else []
    return float(loss.value[0, 0]), [(grads[2 * i], grads[2 * i + 1]) for i in range(len(leaves))]


def merged(backbone: list[AttentionBlock], adapters: list[LoraAdapter]) -> list[AttentionBlock]:
    """Backbone with every adapter's ``B @ A`` folded into its weight."""
    out = list(backbone)
    for ad in adapters:
        layer, m = ad.target
        out[layer] = out[layer].with_weight(m, out[layer].weight(m) + ad.delta())
    return out


def trainable_param_count(adapters) -> int:
    return sum(ad.rank * (ad.d_in + ad.d_out) for ad in adapters)


class Adam:
    """Adam over a list of arrays updated in place."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ShapeError("gradient list does not match parameters")
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
