"""Command-line entry points: the benchmark tool and the session server.

Exit codes: 0 success, 2 validation failure, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dataset import load_dataset
from .errors import SlicelabError, TrainingDivergedError
from .probe import TrainConfig, predict, train_probe
from .similarity import FixtureTextEncoder, score_prompt
from .synth import SyntheticConfig, generate_synthetic, run_benchmark

EXIT_VALIDATION = 2
EXIT_DIVERGENCE = 3


def _load_config(spec: str) -> SyntheticConfig:
    path = Path(spec)
    if path.is_file():
        raw = json.loads(path.read_text(encoding="utf-8"))
    else:
        raw = json.loads(spec)
    return SyntheticConfig.from_json(raw)


def bench_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Generate synthetic spurious-correlation benchmarks, "
        "compare training objectives, and score prompts.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a synthetic dataset")
    gen.add_argument("--config", default="{}", help="config JSON file or literal")
    gen.add_argument("--out", required=True, help="output dataset directory")

    run = sub.add_parser("run", help="train one probe per objective and report")
    run.add_argument("--data", required=True)
    run.add_argument("--objectives", required=True, help="comma-separated list")
    run.add_argument("--annotations", default="oracle", help="'oracle' or a JSON file")
    run.add_argument("--out", default=None, help="report JSON path (default stdout)")
    run.add_argument("--seed", type=int, default=0)

    score = sub.add_parser("score", help="score a prompt against one class")
    score.add_argument("--data", required=True)
    score.add_argument("--class", dest="class_id", type=int, required=True)
    score.add_argument("--prompt", required=True)
    score.add_argument("--probe", default=None, help="probe checkpoint (default: train ERM)")

    args = parser.parse_args(argv)
    try:
        if args.command == "generate":
            bench = generate_synthetic(_load_config(args.config), args.out)
            print(
                json.dumps(
                    {
                        "dataset_dir": str(bench.dataset_dir),
                        "oracle_annotation": bench.oracle_annotation.to_json(),
                    },
                    indent=2,
                    sort_keys=True,
                )
            )
        elif args.command == "run":
            report = run_benchmark(
                args.data,
                [o.strip() for o in args.objectives.split(",") if o.strip()],
                annotations_source=args.annotations,
                seed=args.seed,
            )
            text = report.canonical_json(include_wall_clock=True)
            if args.out:
                Path(args.out).write_text(text, encoding="utf-8")
            else:
                print(text, end="")
        else:
            _score_command(args)
    except TrainingDivergedError as exc:
        print(f"error: training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (SlicelabError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return 0


def _score_command(args) -> None:
    ds = load_dataset(args.data)
    if ds.vocab_file is None:
        raise SlicelabError("dataset has no vocab.json for the fixture encoder")
    encoder = FixtureTextEncoder.from_file(ds.vocab_file)

    if args.probe:
        from .probe import load_probe

        probe = load_probe(args.probe)
    else:
        probe = train_probe(ds, TrainConfig(objective="erm_uniform", seed=0))
    val_rows = np.flatnonzero(ds.split == "val")
    _, predicted = predict(probe, ds.embeddings[val_rows])
    correct = np.zeros(ds.count, dtype=bool)
    correct[val_rows] = predicted == ds.labels[val_rows]

    result = score_prompt(
        ds, args.class_id, correct, encoder.encode(args.prompt), prompt=args.prompt
    )
    print(
        json.dumps(
            {
                "class_id": result.class_id,
                "prompt": result.prompt,
                "error_score": result.error_score,
                "threshold": result.best_threshold,
                "balanced_accuracy": result.balanced_accuracy,
                "count_above": result.count_above,
                "count_below": result.count_below,
            },
            indent=2,
            sort_keys=True,
        )
    )


def serve_main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="serve", description="Serve the interactive annotation session."
    )
    parser.add_argument("--data", required=True, help="dataset directory")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument(
        "--text-encoder",
        required=True,
        help="fixture:<vocab.json> or remote:<base url>",
    )
    parser.add_argument("--probe", default=None, help="baseline probe checkpoint")
    parser.add_argument("--keywords", default=None, help="keyword pools JSON")
    parser.add_argument("--ui", default=None, help="static UI directory to serve at /")
    args = parser.parse_args(argv)

    try:
        from .service import build_app, build_session

        session = build_session(
            args.data,
            args.text_encoder,
            probe_path=args.probe,
            keywords_path=args.keywords,
        )
        app = build_app(session, ui_dir=args.ui)
    except (SlicelabError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION

    import uvicorn

    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


if __name__ == "__main__":
    sys.exit(bench_main())
