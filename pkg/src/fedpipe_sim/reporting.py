"""Serialisation of plans and round reports, with the JSON Schemas they follow."""

from __future__ import annotations

import json

from .federation import Campaign, RoundReport
from .planner import AdapterPlan

ROUND_SCHEMA_ID = "fedpipe-sim/round@1"
SUMMARY_SCHEMA_ID = "fedpipe-sim/summary@1"
PLAN_SCHEMA_ID = "fedpipe-sim/plan@1"

_SELECTION = {
    "type": "object",
    "required": ["layer", "slot", "rank"],
    "additionalProperties": False,
    "properties": {
        "layer": {"type": "integer", "minimum": 0},
        "slot": {"enum": ["q", "k", "v", "o"]},
        "rank": {"type": "integer", "minimum": 1},
    },
}

_PLAN_ENTRY = {
    "type": "object",
    "required": ["client_id", "batch", "bits", "selections", "flops_per_sample", "residual"],
    "properties": {
        "client_id": {"type": "integer", "minimum": 0},
        "batch": {"type": "integer", "minimum": 1},
        "bits": {"enum": [4, 8, 16, 32]},
        "selections": {"type": "array", "items": _SELECTION},
        "flops_per_sample": {"type": "number", "minimum": 0},
        "residual": {"type": "number"},
    },
}

PLAN_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "deadline", "clients", "infeasible"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": PLAN_SCHEMA_ID},
        "deadline": {"type": "number", "exclusiveMinimum": 0},
        "clients": {"type": "array", "items": _PLAN_ENTRY},
        "infeasible": {"type": "array", "items": {"type": "integer"}},
    },
}

ROUND_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema", "t", "eval_loss", "utr", "flagged", "participating", "bytes_up", "clients", "aggregation"],
    "additionalProperties": False,
    "properties": {
        "schema": {"const": ROUND_SCHEMA_ID},
        "t": {"type": "integer", "minimum": 0},
        "eval_loss": {"type": "number", "minimum": 0},
        "utr": {"type": "number", "minimum": 0, "maximum": 1},
        "flagged": {"type": "integer", "minimum": 0},
        "participating": {"type": "integer", "minimum": 1},
        "bytes_up": {"type": "integer", "minimum": 0},
        "clients": {
            "type": "array",
            "items": {
                **_PLAN_ENTRY,
                "required": _PLAN_ENTRY["required"]
                + ["steps", "wall_time", "under_trained", "bytes_up", "train_loss"],
                "properties": {
                    **_PLAN_ENTRY["properties"],
                    "steps": {"type": "integer", "minimum": 0},
                    "wall_time": {"type": "number", "minimum": 0},
                    "under_trained": {"type": "boolean"},
                    "bytes_up": {"type": "integer", "minimum": 0},
                    "train_loss": {"type": ["number", "null"]},
                },
            },
        },
        "aggregation": {
            "type": "object",
            "additionalProperties": {"type": "object", "additionalProperties": {"type": "number"}},
        },
    },
}

SUMMARY_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": [
        "schema", "seed", "rounds", "initial_loss", "final_loss", "mean_utr", "total_bytes",
        "trainable_params", "infeasible",
    ],
    "properties": {
        "schema": {"const": SUMMARY_SCHEMA_ID},
        "seed": {"type": "integer"},
        "rounds": {"type": "integer", "minimum": 0},
        "initial_loss": {"type": ["number", "null"]},
        "final_loss": {"type": ["number", "null"]},
        "mean_utr": {"type": ["number", "null"]},
        "total_bytes": {"type": "integer", "minimum": 0},
        "trainable_params": {"type": "object", "additionalProperties": {"type": "integer"}},
        "infeasible": {"type": "array"},
    },
}


def dumps_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def plan_entry(plan: AdapterPlan, bits: int) -> dict:
    out = plan.to_dict()
    out["bits"] = bits
    return out


def round_record(report: RoundReport) -> dict:
    return {
        "schema": ROUND_SCHEMA_ID,
        "t": report.t,
        "eval_loss": report.eval_loss,
        "utr": float(report.utr),
        "flagged": report.flagged,
        "participating": report.participating,
        "bytes_up": report.bytes_up,
        "clients": [c.to_dict() for c in report.clients],
        "aggregation": {slot: {str(k): w for k, w in ws.items()} for slot, ws in report.weights.items()},
    }


def summary_record(campaign: Campaign) -> dict:
    reps = campaign.reports
    d = campaign.cfg.d
    trainable = {}
    if reps:
        for c in reps[0].clients:
            trainable[str(c.client_id)] = sum(s.rank * 2 * d for s in c.plan.selections)
    return {
        "schema": SUMMARY_SCHEMA_ID,
        "seed": campaign.cfg.seed,
        "rounds": len(reps),
        "initial_loss": campaign.initial_loss if campaign.clients else None,
        "final_loss": reps[-1].eval_loss if reps else None,
        "round0_loss": reps[0].eval_loss if reps else None,
        "mean_utr": sum(float(r.utr) for r in reps) / len(reps) if reps else None,
        "total_bytes": sum(r.bytes_up for r in reps),
        "trainable_params": trainable,
        "deadline": campaign.deadline,
        "infeasible": [
            {"client_id": e.client_id, "required_bytes": e.required, "budget_bytes": e.budget}
            for e in campaign.infeasible
        ],
    }


def plan_document(campaign: Campaign) -> dict:
    entries = [plan_entry(campaign.plan_for(c), c.bits) for c in campaign.clients]
    return {
        "schema": PLAN_SCHEMA_ID,
        "deadline": campaign.deadline,
        "clients": entries,
        "infeasible": [e.client_id for e in campaign.infeasible],
    }
