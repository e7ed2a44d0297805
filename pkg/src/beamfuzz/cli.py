"""Command-line entry point: fuzz, replay, ablate, oracle, summarize.

Exit codes: 0 on completion, 1 on config/IO errors, 2 when the threat
model is unreachable after retries.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import harness, metrics
from .harness import ConfigError, OracleCapExceeded
from .threat import ThreatError

log = logging.getLogger("beamfuzz")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNREACHABLE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beamfuzz",
        description="Robustness fuzzing of black-box text systems via annealed beam search",
    )
    parser.add_argument("--config", required=True, help="path to the run config (flat JSON)")
    parser.add_argument("--seed", type=int, help="override the master rng seed")
    parser.add_argument("--parallel", type=int, help="override the parallelism degree")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("-v", "--verbose", action="store_true")

    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("fuzz", help="fuzz every dataset seed")

    p_replay = sub.add_parser("replay", help="re-evaluate successes against another target")
    p_replay.add_argument("--reports", required=True, help="reports.jsonl from a previous run")
    p_replay.add_argument("--threat-mock", help="mock spec to replay against")
    p_replay.add_argument("--threat-endpoint", help="endpoint URL to replay against")

    p_ablate = sub.add_parser("ablate", help="run every ablation mode with paired seeds")
    p_ablate.add_argument(
        "--modes", default="full,no_sa,no_ep,no_sa_ep,greedy",
        help="comma-separated subset of full,no_sa,no_ep,no_sa_ep,greedy",
    )

    p_oracle = sub.add_parser("oracle", help="exhaustive ground truth for small seeds")
    p_oracle.add_argument("--seed-id", help="restrict to one dataset seed")
    p_oracle.add_argument("--max-subs", type=int, default=2)
    p_oracle.add_argument("--cap", type=int, default=10**6)

    p_sum = sub.add_parser("summarize", help="aggregate metrics over a report file")
    p_sum.add_argument("--reports", required=True)
    p_sum.add_argument("--csv", help="also write the summary as CSV")
    return parser


def _apply_overrides(config, args):
    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.parallel is not None:
        changes["parallelism"] = args.parallel
    if args.out is not None:
        changes["output_dir"] = Path(args.out)
    return dataclasses.replace(config, **changes) if changes else config


def _print_summary(summary: metrics.RunSummary):
    print(json.dumps(summary.to_dict(), sort_keys=True, indent=2))


def cmd_fuzz(config, args) -> int:
    artifacts = harness.run(config)
    _print_summary(artifacts.summary)
    if artifacts.report_path:
        print(f"reports: {artifacts.report_path}", file=sys.stderr)
    if artifacts.all_aborted:
        log.error("every seed aborted: threat model unreachable")
        return EXIT_UNREACHABLE
    return EXIT_OK


def cmd_replay(config, args) -> int:
    if args.threat_mock:
        config = dataclasses.replace(
            config, threat_mock=Path(args.threat_mock), threat_endpoint=None
        )
    elif args.threat_endpoint:
        config = dataclasses.replace(
            config, threat_endpoint=args.threat_endpoint, threat_mock=None
        )
    backend = harness.build_backend(config)
    summary = harness.replay(args.reports, backend, config)
    _print_summary(summary)
    return EXIT_OK


def cmd_ablate(config, args) -> int:
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    results = harness.ablate(config, modes)
    width = max(len(m) for m in results)
    print(f"{'mode'.ljust(width)}  n_suc  s_rate   q_n")
    for mode, summary in results.items():
        q_n = "-" if summary.q_n is None else f"{summary.q_n:.1f}"
        print(f"{mode.ljust(width)}  {summary.n_suc:5d}  {summary.s_rate:6.2f}  {q_n}")
    return EXIT_OK


def cmd_oracle(config, args) -> int:
    records = harness.load_dataset(config.dataset)
    if args.seed_id is not None:
        records = [r for r in records if r.id == args.seed_id]
        if not records:
            raise ConfigError(f"seed id {args.seed_id!r} not in dataset")
    for record in records:
        result = harness.brute_force_oracle(
            record, config, max_subs=args.max_subs, cap=args.cap
        )
        print(
            json.dumps(
                {
                    "seed_id": record.id,
                    "best_loss": result.best_loss,
                    "best_text": result.best_text,
                    "best_substitutions": [list(s) for s in result.best_substitutions],
                    "num_successes": len(result.successes),
                    "evaluated": result.evaluated,
                },
                sort_keys=True,
            )
        )
    return EXIT_OK


def cmd_summarize(config, args) -> int:
    reports = metrics.read_reports(args.reports)
    scorer = (
        metrics.BigramScorer.from_file(config.ppl_corpus) if config.ppl_corpus else None
    )
    summary = metrics.summarize(
        reports, scorer=scorer,
        query_metric=config.query_metric,
        grammar_command=config.grammar_command,
    )
    _print_summary(summary)
    if args.csv:
        metrics.write_summary_csv({"run": summary}, args.csv)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = harness.load_config(args.config)
        config = _apply_overrides(config, args)
        handler = {
            "fuzz": cmd_fuzz,
            "replay": cmd_replay,
            "ablate": cmd_ablate,
            "oracle": cmd_oracle,
            "summarize": cmd_summarize,
        }[args.command]
        return handler(config, args)
    except (ConfigError, OracleCapExceeded, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except ThreatError as exc:
        log.error("threat model unreachable: %s", exc)
        return EXIT_UNREACHABLE


if __name__ == "__main__":
    sys.exit(main())
