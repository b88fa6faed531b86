"""Command line entry points: ``run``, ``plan`` and ``dump-codebook``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import parse_config
from .errors import ConfigError, FedPipeError
from .federation import Campaign
from .quantizer import SUPPORTED_BITS, build_codebook
from .reporting import dumps_line, plan_document, round_record, summary_record

log = logging.getLogger("fedpipe_sim")


def _load(path, seed=None, out=None):
    cfg = parse_config(Path(path).read_text())
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if out is not None:
        changes["output"] = str(out)
    return cfg.replace(**changes) if changes else cfg


def cmd_run(config: str, seed: int | None = None, out: str | None = None) -> int:
    try:
        cfg = _load(config, seed, out)
        out_dir = Path(cfg.output)
        out_dir.mkdir(parents=True, exist_ok=True)
        campaign = Campaign(cfg)
        with open(out_dir / "rounds.jsonl", "w", encoding="utf-8", newline="\n") as fh:
            for t in range(cfg.rounds if campaign.clients else 0):
                report = campaign.run_round(t)
                fh.write(dumps_line(round_record(report)) + "\n")
                log.info("round %d eval_loss=%.6g utr=%s", t, report.eval_loss, report.utr)
        (out_dir / "summary.json").write_text(
            json.dumps(summary_record(campaign), indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    except FedPipeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def format_plan_table(doc: dict) -> str:
    lines = [f"{'client':>6} {'batch':>5} {'bits':>4} {'flops/sample':>13}  selections"]
    for c in doc["clients"]:
        sel = " ".join(f"L{s['layer']}.{s['slot']}:r{s['rank']}" for s in c["selections"]) or "-"
        lines.append(f"{c['client_id']:>6} {c['batch']:>5} {c['bits']:>4} {c['flops_per_sample']:>13.0f}  {sel}")
    for cid in doc["infeasible"]:
        lines.append(f"{cid:>6} {'':>5} {'':>4} {'':>13}  excluded: backbone does not fit in memory")
    lines.append(f"deadline: {doc['deadline']:.6g} s")
    return "\n".join(lines)


def cmd_plan(config: str, fmt: str = "both") -> int:
    try:
        cfg = _load(config)
        doc = plan_document(Campaign(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1
    if fmt in ("both", "table"):
        print(format_plan_table(doc))
    if fmt == "both":
        print()
    if fmt in ("both", "json"):
        print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_dump_codebook(bits: int) -> int:
    for c in build_codebook(bits).codes:
        print(f"{c:.12g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedpipe-sim", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log each round to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a federated campaign")
    run.add_argument("--config", required=True)
    run.add_argument("--seed", type=int)
    run.add_argument("--out", help="output directory (overrides the config's output)")

    plan = sub.add_parser("plan", help="print round-0 adapter plans without training")
    plan.add_argument("--config", required=True)
    plan.add_argument("--format", choices=("both", "table", "json"), default="both")

    cb = sub.add_parser("dump-codebook", help="print NormalFloat codes, one per line")
    cb.add_argument("--bits", type=int, required=True, choices=SUPPORTED_BITS)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "run":
        return cmd_run(args.config, args.seed, args.out)
    if args.command == "plan":
        return cmd_plan(args.config, args.format)
    return cmd_dump_codebook(args.bits)


if __name__ == "__main__":
    sys.exit(main())
