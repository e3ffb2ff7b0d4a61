"""Command line entry point: ``adaptrec run`` and ``adaptrec synth``."""

from __future__ import annotations

import argparse
import logging
import sys

from .experiment import ConfigError, ExperimentError, parse_config, run_experiment
from .synthetic import write_movielens_fixture


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _judge(text: str) -> dict:
    if text == "stub":
        return {"kind": "stub"}
    if text.startswith(("http://", "https://")):
        return {"kind": "http-chat", "endpoint": text}
    raise argparse.ArgumentTypeError("judge must be 'stub' or an http(s) chat-completions URL")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptrec", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the offline experiment and write the report")
    run.add_argument("--config", help="JSON config file")
    run.add_argument("--seed", type=int)
    run.add_argument("--items", type=int, dest="n_items")
    run.add_argument("--users", type=int, dest="n_users")
    run.add_argument("--k", type=_int_list, dest="k_values", help="comma-separated, e.g. 5,10")
    run.add_argument("--h", type=_int_list, dest="h_values", help="comma-separated, e.g. 10,50")
    run.add_argument("--embedding-source", help="test | test:<dim> | file:<path> | http(s)://...")
    run.add_argument("--judge", type=_judge, help="stub | http(s) chat-completions URL")
    run.add_argument("--movies", dest="movies_path")
    run.add_argument("--ratings", dest="ratings_path")
    run.add_argument("--out")

    synth = sub.add_parser("synth", help="write a small planted-cluster MovieLens-format dataset")
    synth.add_argument("--out", required=True)
    synth.add_argument("--items", type=int, default=100)
    synth.add_argument("--users", type=int, default=10)
    synth.add_argument("--clusters", type=int, default=5)
    synth.add_argument("--seed", type=int, default=0)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.command == "synth":
        paths = write_movielens_fixture(
            args.out, n_items=args.items, n_users=args.users, n_clusters=args.clusters, seed=args.seed
        )
        for name, path in paths.items():
            print(f"{name}: {path}")
        return 0

    overrides = {
        key: getattr(args, key)
        for key in ("seed", "n_items", "n_users", "k_values", "h_values", "movies_path",
                    "ratings_path", "out")
    }
    overrides["embedding_source"] = args.embedding_source
    overrides["judge"] = args.judge
    try:
        config = parse_config(args.config, overrides)
        report = run_experiment(config)
    except (ConfigError, ExperimentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(report.files["report.txt"].read_text(encoding="utf-8"), end="")
    print(f"outputs written to {config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
