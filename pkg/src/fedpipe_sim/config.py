"""Campaign configuration: defaults, validation, JSON round trip."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Any

from .errors import ConfigError
from .model import SLOTS

WEIGHTINGS = ("inverse_batch", "datasize")


@dataclass(frozen=True)
class ProfileSpec:
    """Explicit resources of one edge server. ``dataset_size`` defaults to ``samples_per_client``."""

    c_max: float
    m_max: float
    dataset_size: int | None = None


@dataclass(frozen=True)
class ProfileSampler:
    """Uniform ranges from which each server's resources are drawn."""

    c_max: tuple[float, float]
    m_max: tuple[float, float]
    dataset_size: tuple[int, int] | None = None


@dataclass(frozen=True)
class CampaignConfig:
    seed: int
    n_clients: int
    n_layers: int = 2
    d: int = 16
    s: int = 8
    samples_per_client: int = 32
    holdout_per_client: int = 16
    shift_scale: float = 0.5
    noise_sigma: float = 0.01
    noniid_scale: float = 1.0
    rounds: int = 100
    local_steps: int = 5
    deadline: float | None = None  # seconds; None derives it from the batch allocation
    b_min: int = 2
    b_max: int = 8
    rank_menu: dict[str, tuple[int, ...]] = field(
        default_factory=lambda: {m: (8, 4, 2, 1) for m in SLOTS}
    )
    lambda1: float = 0.85
    lambda2: float = 0.85
    learning_rate: float = 1e-3
    profiles: tuple[ProfileSpec, ...] | ProfileSampler = field(
        default_factory=lambda: ProfileSampler((2e6, 4e6), (2.6e4, 3.6e4))
    )
    planner: str = "fedpipe"
    aggregation_weighting: str = "inverse_batch"
    block_size: int = 64
    sample_fraction: float = 1.0
    backbone_flops: float | None = None  # per sample; None uses the analytic estimate
    output: str = "runs/default"

    # -- derived ----------------------------------------------------------

    @property
    def planner_mode(self) -> str:
        return self.planner.split(":", 1)[0]

    @property
    def fixed_rank(self):
        """``"max"`` or an int for ``fixed_rank:<r>``; None under ``fedpipe``."""
        if self.planner_mode != "fixed_rank":
            return None
        arg = self.planner.split(":", 1)[1]
        return "max" if arg == "max" else int(arg)

    def replace(self, **changes) -> "CampaignConfig":
        return validate(dataclasses.replace(self, **changes))

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if f.name == "rank_menu":
                v = {m: list(q) for m, q in v.items()}
            elif f.name == "profiles":
                v = _profiles_json(v)
            out[f.name] = v
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_FIELDS = {f.name: f for f in dataclasses.fields(CampaignConfig)}
_INT_FIELDS = {
    "seed", "n_clients", "n_layers", "d", "s", "samples_per_client", "holdout_per_client",
    "rounds", "local_steps", "b_min", "b_max", "block_size",
}
_FLOAT_FIELDS = {
    "shift_scale", "noise_sigma", "noniid_scale", "lambda1", "lambda2", "learning_rate",
    "sample_fraction",
}


def _int(name, v, lo=None):
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(name, f"must be >= {lo}, got {v}")
    return v


def _num(name, v):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(name, f"expected a finite number, got {v!r}")
    return float(v)


def _range(name, v, integer=False):
    if not isinstance(v, (list, tuple)) or len(v) != 2:
        raise ConfigError(name, "expected a [low, high] pair")
    lo, hi = (_int(name, x, 1) for x in v) if integer else (_num(name, x) for x in v)
    if not 0 < lo <= hi:
        raise ConfigError(name, f"need 0 < low <= high, got [{lo}, {hi}]")
    return (lo, hi)


def _profiles_json(v):
    if isinstance(v, ProfileSampler):
        return {k: list(x) for k, x in dataclasses.asdict(v).items() if x is not None}
    return [{k: x for k, x in dataclasses.asdict(p).items() if x is not None} for p in v]


def _profiles(v, n_clients):
    if isinstance(v, ProfileSampler) or (isinstance(v, tuple) and all(isinstance(p, ProfileSpec) for p in v)):
        v = _profiles_json(v)
    if isinstance(v, dict):
        unknown = set(v) - {"c_max", "m_max", "dataset_size"}
        if unknown:
            raise ConfigError("profiles", f"unknown sampler keys {sorted(unknown)}")
        for k in ("c_max", "m_max"):
            if k not in v:
                raise ConfigError(f"profiles.{k}", "missing")
        return ProfileSampler(
            _range("profiles.c_max", v["c_max"]),
            _range("profiles.m_max", v["m_max"]),
            _range("profiles.dataset_size", v["dataset_size"], integer=True)
            if v.get("dataset_size") is not None
            else None,
        )
    if isinstance(v, list):
        if len(v) != n_clients:
            raise ConfigError("profiles", f"{len(v)} profiles given for n_clients={n_clients}")
        out = []
        for i, p in enumerate(v):
            key = f"profiles[{i}]"
            if not isinstance(p, dict):
                raise ConfigError(key, "expected an object")
            unknown = set(p) - {"c_max", "m_max", "dataset_size"}
            if unknown:
                raise ConfigError(key, f"unknown keys {sorted(unknown)}")
            for k in ("c_max", "m_max"):
                if k not in p:
                    raise ConfigError(f"{key}.{k}", "missing")
                if _num(f"{key}.{k}", p[k]) <= 0:
                    raise ConfigError(f"{key}.{k}", "must be > 0")
            size = p.get("dataset_size")
            out.append(
                ProfileSpec(
                    float(p["c_max"]),
                    float(p["m_max"]),
                    None if size is None else _int(f"{key}.dataset_size", size, 1),
                )
            )
        return tuple(out)
    raise ConfigError("profiles", "expected a list of profiles or a sampler object")


def _rank_menu(v):
    if isinstance(v, (list, tuple)):
        v = {m: v for m in SLOTS}
    if not isinstance(v, dict):
        raise ConfigError("rank_menu", "expected a list of ranks or an object keyed by q/k/v/o")
    if set(v) != set(SLOTS):
        raise ConfigError("rank_menu", f"must define exactly the slots {list(SLOTS)}")
    out = {}
    for m in SLOTS:
        q = v[m]
        key = f"rank_menu.{m}"
        if not isinstance(q, (list, tuple)) or not q:
            raise ConfigError(key, "expected a non-empty list")
        q = tuple(_int(key, r, 1) for r in q)
        if any(a <= b for a, b in zip(q, q[1:])):
            raise ConfigError(key, f"ranks must be strictly decreasing, got {list(q)}")
        out[m] = q
    return out


def validate(cfg: CampaignConfig) -> CampaignConfig:
    """Type-check, range-check and normalise every field."""
    vals = {}
    for name in _FIELDS:
        v = getattr(cfg, name)
        if name in _INT_FIELDS:
            v = _int(name, v)
        elif name in _FLOAT_FIELDS:
            v = _num(name, v)
        vals[name] = v
    for name in ("n_clients", "n_layers", "s", "samples_per_client", "rounds", "local_steps", "b_min", "block_size"):
        _int(name, vals[name], 1)
    _int("d", vals["d"], 4)
    _int("holdout_per_client", vals["holdout_per_client"], 0)
    if vals["b_min"] > vals["b_max"]:
        raise ConfigError("b_min", f"b_min ({vals['b_min']}) must not exceed b_max ({vals['b_max']})")
    for name in ("shift_scale", "noise_sigma", "noniid_scale"):
        if vals[name] < 0:
            raise ConfigError(name, "must be >= 0")
    for name in ("lambda1", "lambda2"):
        if not 0 < vals[name] < 1:
            raise ConfigError(name, f"must lie strictly between 0 and 1, got {vals[name]}")
    if vals["learning_rate"] <= 0:
        raise ConfigError("learning_rate", "must be > 0")
    if not 0 < vals["sample_fraction"] <= 1:
        raise ConfigError("sample_fraction", "must lie in (0, 1]")
    for name in ("deadline", "backbone_flops"):
        if vals[name] is not None and _num(name, vals[name]) <= 0:
            raise ConfigError(name, "must be > 0 when given")
        if vals[name] is not None:
            vals[name] = float(vals[name])
    vals["rank_menu"] = _rank_menu(vals["rank_menu"])
    top = max(max(q) for q in vals["rank_menu"].values())
    if top > vals["d"]:
        raise ConfigError("rank_menu", f"rank {top} exceeds model width d={vals['d']}")
    vals["profiles"] = _profiles(vals["profiles"], vals["n_clients"])
    sizes = (
        [p.dataset_size or vals["samples_per_client"] for p in vals["profiles"]]
        if isinstance(vals["profiles"], tuple)
        else [vals["profiles"].dataset_size[0] if vals["profiles"].dataset_size else vals["samples_per_client"]]
    )
    if min(sizes) < vals["b_max"]:
        raise ConfigError("samples_per_client", f"every dataset needs at least b_max={vals['b_max']} samples")
    p = vals["planner"]
    if not isinstance(p, str):
        raise ConfigError("planner", "expected a string")
    mode, _, arg = p.partition(":")
    if mode == "fedpipe" and not arg:
        pass
    elif mode == "fixed_rank" and (arg == "max" or (arg.isdigit() and 1 <= int(arg) <= vals["d"])):
        pass
    else:
        raise ConfigError("planner", f"expected 'fedpipe' or 'fixed_rank:<rank|max>', got {p!r}")
    if vals["aggregation_weighting"] not in WEIGHTINGS:
        raise ConfigError("aggregation_weighting", f"expected one of {list(WEIGHTINGS)}")
    if not isinstance(vals["output"], str) or not vals["output"]:
        raise ConfigError("output", "expected a non-empty path")
    return CampaignConfig(**vals)


def from_dict(data: dict[str, Any]) -> CampaignConfig:
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    unknown = sorted(set(data) - set(_FIELDS))
    if unknown:
        raise ConfigError(unknown[0], "unknown key")
    for req in ("seed", "n_clients"):
        if req not in data:
            raise ConfigError(req, "required")
    return validate(CampaignConfig(**data))


def parse_config(text: str) -> CampaignConfig:
    """Parse a JSON config document."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<root>", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    return from_dict(data)
