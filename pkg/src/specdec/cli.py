"""Command-line driver: model creation, generation, and benchmarking.

Generation output mirrors a transcript layout: a mode banner, the wall time
to two decimals, and the produced text on stdout; per-run counters go to
stderr so stdout stays machine-parseable.

Exit codes: 0 success, 2 usage error, 3 model or file error, 4 generation
error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .bench import ScenarioError, ScenarioFileError, emit_report, load_scenarios, run_scenario
from .decode import GenerationConfig, autoregressive_generate, speculative_generate
from .models import (
    ModelFileError,
    TinyTransformerConfig,
    bigram_train,
    detokenize,
    init_tiny_transformer,
    resolve_model_ref,
    save_bigram,
    save_model,
    tokenize,
)
from .plots import render_report_figures
from .rng import Rng

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FILE = 3
EXIT_GENERATION = 4

# Default model shapes; the target has roughly 20x the draft's parameters,
# keeping the size ratio comfortably above 10x.
TARGET_PRESET = dict(d_model=128, n_layers=4, n_heads=4, d_ff=512, max_context=512)
DRAFT_PRESET = dict(d_model=32, n_layers=2, n_heads=2, d_ff=128, max_context=512)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="specdec",
        description="Autoregressive and speculative text generation with KV caching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init-model", help="create a deterministic transformer weight file")
    p_init.add_argument("--preset", choices=("target", "draft"), default="target")
    p_init.add_argument("--d-model", type=int)
    p_init.add_argument("--n-layers", type=int)
    p_init.add_argument("--n-heads", type=int)
    p_init.add_argument("--d-ff", type=int)
    p_init.add_argument("--max-context", type=int)
    p_init.add_argument("--seed", type=int, default=0)
    p_init.add_argument("--out", required=True)

    p_train = sub.add_parser("train-bigram", help="train a byte bigram model on a corpus")
    p_train.add_argument("--corpus", required=True)
    p_train.add_argument("--smoothing", type=float, default=1.0)
    p_train.add_argument("--out", required=True)

    p_gen = sub.add_parser("generate", help="generate text from a prompt")
    p_gen.add_argument("--target", required=True, help="target model reference")
    p_gen.add_argument("--draft", help="draft model reference (speculative mode)")
    p_gen.add_argument("--mode", choices=("autoregressive", "speculative"),
                       default="autoregressive")
    p_gen.add_argument("--k", type=int, default=5)
    p_gen.add_argument("--max-tokens", type=int, default=40)
    p_gen.add_argument("--temperature", type=float, default=0.8)
    p_gen.add_argument("--top-p", type=float, default=1.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--prompt", required=True)

    p_bench = sub.add_parser("bench", help="run benchmark scenarios and write a report")
    p_bench.add_argument("--scenario-file", required=True)
    p_bench.add_argument("--format", choices=("csv", "json"), default="csv")
    p_bench.add_argument("--out", required=True)
    p_bench.add_argument("--no-plots", action="store_true",
                         help="skip rendering figures next to the report")
    return parser


def _usage_error(parser: argparse.ArgumentParser, message: str) -> int:
    print(f"{parser.prog}: error: {message}", file=sys.stderr)
    return EXIT_USAGE


def _cmd_init_model(args) -> int:
    preset = TARGET_PRESET if args.preset == "target" else DRAFT_PRESET
    fields = {
        name: getattr(args, name) if getattr(args, name) is not None else preset[name]
        for name in ("d_model", "n_layers", "n_heads", "d_ff", "max_context")
    }
    config = TinyTransformerConfig(**fields)
    model = init_tiny_transformer(config, args.seed)
    save_model(model, args.out)
    print(f"wrote {args.out} ({config.num_params} parameters)", file=sys.stderr)
    return EXIT_OK


def _cmd_train_bigram(args) -> int:
    if args.smoothing <= 0:
        raise ValueError(f"smoothing must be positive, got {args.smoothing}")
    corpus = Path(args.corpus).read_bytes()
    model = bigram_train(corpus, args.smoothing)
    save_bigram(model, args.out)
    print(f"wrote {args.out} ({len(corpus)} corpus bytes)", file=sys.stderr)
    return EXIT_OK


def _cmd_generate(args, parser) -> int:
    if args.mode == "speculative" and not args.draft:
        return _usage_error(parser, "--mode speculative requires --draft")
    try:
        cfg = GenerationConfig(
            mode=args.mode,
            k=args.k,
            max_new_tokens=args.max_tokens,
            temperature=args.temperature,
            top_p=args.top_p,
            seed=args.seed,
        )
    except ValueError as exc:
        return _usage_error(parser, str(exc))

    try:
        target = resolve_model_ref(args.target)
        draft = resolve_model_ref(args.draft) if args.draft else None
    except ModelFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE

    prompt = tokenize(args.prompt.encode("utf-8", "surrogateescape"))
    rng = Rng(cfg.seed)
    try:
        if cfg.mode == "speculative":
            tokens, stats = speculative_generate(target, draft, prompt, cfg, rng)
            banner = "Speculative Decode"
        else:
            tokens, stats = autoregressive_generate(target, prompt, cfg, rng)
            banner = "Autoregressive Decode"
    except Exception as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_GENERATION

    out = sys.stdout.buffer
    out.write(banner.encode("ascii") + b"\n")
    out.write(f"Time = {stats.wall_time_total:.2f}s\n".encode("ascii"))
    out.write(b"Text = " + detokenize(tokens) + b"\n")
    out.flush()
    for line in stats.as_lines():
        print(line, file=sys.stderr)
    return EXIT_OK


def _cmd_bench(args) -> int:
    try:
        scenarios = load_scenarios(args.scenario_file)
    except (ScenarioFileError, ModelFileError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE
    records = []
    try:
        for scenario in scenarios:
            records.extend(run_scenario(scenario))
    except ScenarioError as exc:
        print(f"generation error: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    out_path = Path(args.out)
    try:
        out_path.write_text(emit_report(records, args.format))
    except OSError as exc:
        print(f"error: cannot write report {out_path}: {exc}", file=sys.stderr)
        return EXIT_FILE
    written = [str(out_path)]
    if not args.no_plots:
        figures = render_report_figures(
            records, out_path.parent if str(out_path.parent) else ".", stem=out_path.stem
        )
        written += [str(p) for p in figures]
    print("wrote " + ", ".join(written), file=sys.stderr)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "init-model":
            return _cmd_init_model(args)
        if args.command == "train-bigram":
            return _cmd_train_bigram(args)
        if args.command == "generate":
            return _cmd_generate(args, parser)
        if args.command == "bench":
            return _cmd_bench(args)
    except ValueError as exc:
        return _usage_error(parser, str(exc))
    except (ModelFileError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILE
    raise AssertionError(f"unhandled command {args.command}")


if __name__ == "__main__":
    sys.exit(main())
