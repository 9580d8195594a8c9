"""
DualCoT desk — CLI entry point.

Subcommands cover the whole pipeline: data generation, decoder pretraining,
joint training, closed-loop evaluation, the latency benchmark, the ablation
runner and the two reasoning-stream diagnostics. Every subcommand accepts a
config file (``--config``) plus ``--set key=value`` overrides; dedicated
flags are shorthands for the same overrides.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from src.autodiff.rng import Rng
from src.errors import DualCoTError
from src.evaluation.ablation import run_ablation, train_variants
from src.evaluation.ar_cot import AR_K_SWEEP, build_ar_model, train_ar_model
from src.evaluation.closed_loop import (
    closed_loop_eval,
    expert_factory,
    model_factory,
    random_factory,
)
from src.evaluation.latency import DEFAULT_REPS, DEFAULT_WARMUP, bench_latency
from src.evaluation.probing import collect_visual_features, decode_frame, frames_of, linguistic_report
from src.linguistic_cot.decoder import FrozenDecoderParams, pretrain_decoder
from src.linguistic_cot.prefix import FULL_DECODE_LEN
from src.linguistic_cot.vocab import Vocabulary
from src.storage.pgm import write_pgm
from src.training.checkpoint import load_checkpoint, save_decoder
from src.training.config import TrainConfig, load_config
from src.training.model import DualCoTModel, build_model
from src.training.trainer import load_training_data, train
from src.visual_cot.probe import evaluate_probe, probe_decode, train_probe
from src.world.dataset import (
    DatasetFile,
    fit_feature_stats,
    generate_episodes,
    read_dataset,
    split_indices,
    write_dataset,
)

__version__ = "0.3.0"


class Session:
    """In-memory state shared by commands run in one process."""

    def __init__(self) -> None:
        self.datasets: dict[Path, DatasetFile] = {}
        self.models: dict[Path, DualCoTModel] = {}

    def dataset(self, path: str | Path) -> DatasetFile:
        key = Path(path).resolve()
        if key not in self.datasets:
            self.datasets[key] = read_dataset(key)
        return self.datasets[key]

    def model(self, checkpoint: str | Path) -> DualCoTModel:
        key = Path(checkpoint).resolve()
        if key not in self.models:
            self.models[key] = load_checkpoint(key)[0]
        return self.models[key]


# Global session (for CLI use)
_session = Session()


def _config(args, **flags) -> TrainConfig:
    """Config file, then shorthand flags, then ``--set`` overrides."""
    sugar = [f"{k}={v}" for k, v in flags.items() if v is not None]
    return load_config(args.config, sugar + list(args.overrides or []))


def main(argv: list[str] | None = None) -> int:
    """Main CLI entry point."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="Flat key = value config file")
    common.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE",
                        help="Override one config key (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="Log progress at INFO level")

    parser = argparse.ArgumentParser(
        prog="dualcot",
        description="Desk-scale dual-stream latent chain-of-thought vision-language-action policy",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    p = subparsers.add_parser("gen-data", parents=[common], help="Generate expert demonstrations")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--episodes", type=int, default=2000)
    p.add_argument("--out", type=str, default=None, help="Dataset path (default: config data)")

    p = subparsers.add_parser("pretrain-decoder", parents=[common], help="Pretrain and freeze the CoT decoder")
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="Decoder archive (default: <out_dir>/decoder.ckpt)")

    p = subparsers.add_parser("train", parents=[common], help="Joint training")
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--decoder", type=str, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-visual", action="store_true", help="Disable the visual CoT stream")
    p.add_argument("--no-linguistic", action="store_true", help="Disable the linguistic CoT stream")
    p.add_argument("--resume", type=str, default=None, help="Continue from a checkpoint")
    p.add_argument("--charts", action="store_true", help="Render loss curves when done")

    p = subparsers.add_parser("eval", parents=[common], help="Closed-loop evaluation")
    p.add_argument("--ckpt", type=str, default=None)
    p.add_argument("--policy", choices=["model", "expert", "random"], default="model")
    p.add_argument("--episodes", type=int, default=100, help="Episodes per template")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=str, default=None, help="Per-template results CSV")

    p = subparsers.add_parser("bench-latency", parents=[common], help="Non-CoT / AR-CoT / parallel-CoT latency")
    p.add_argument("--ckpt", type=str, default=None, help="Parallel-CoT checkpoint (default: fresh weights)")
    p.add_argument("--ar-k", type=int, default=64)
    p.add_argument("--reps", type=int, default=DEFAULT_REPS)
    p.add_argument("--warmup", type=int, default=DEFAULT_WARMUP)
    p.add_argument("--no-sweep", action="store_true", help="Skip the AR K sweep")
    p.add_argument("--ar-steps", type=int, default=0, help="Train the AR comparator for this many steps first")
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--out", type=str, default="latency.json")
    p.add_argument("--charts", action="store_true")

    p = subparsers.add_parser("ablate", parents=[common], help="Train and evaluate the four stream variants")
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--out-dir", type=str, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--episodes", type=int, default=100, help="Episodes per template")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--charts", action="store_true")

    p = subparsers.add_parser("probe-viz", parents=[common], help="Depth probe over H_vis")
    p.add_argument("--ckpt", type=str, required=True)
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--out-dir", type=str, default="probe")
    p.add_argument("--probe-steps", type=int, default=2000)
    p.add_argument("--max-train", type=int, default=2000, help="Training frames for the probe")
    p.add_argument("--max-test", type=int, default=500, help="Held-out frames for the metric")
    p.add_argument("--images", type=int, default=4, help="Held-out frames to render")

    p = subparsers.add_parser("decode-cot", parents=[common], help="Greedy-decode the linguistic CoT")
    p.add_argument("--ckpt", type=str, required=True)
    p.add_argument("--data", type=str, default=None)
    p.add_argument("--episode", type=int, required=True)
    p.add_argument("--frame", type=int, default=0)
    p.add_argument("--max-len", type=int, default=FULL_DECODE_LEN, help="Greedy decoding limit in pieces")

    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    if args.command is None:
        parser.print_help()
        return 0

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    commands = {
        "gen-data": cmd_gen_data,
        "pretrain-decoder": cmd_pretrain_decoder,
        "train": cmd_train,
        "eval": cmd_eval,
        "bench-latency": cmd_bench_latency,
        "ablate": cmd_ablate,
        "probe-viz": cmd_probe_viz,
        "decode-cot": cmd_decode_cot,
    }
    try:
        return commands[args.command](args)
    except (DualCoTError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


# ──────────────────────────────────────────────
# Command implementations
# ──────────────────────────────────────────────


def cmd_gen_data(args) -> int:
    """Roll out the expert, render, annotate and write the dataset plus manifest."""
    config = _config(args, seed=args.seed)
    out = Path(args.out or config.data)
    vocab = Vocabulary.from_grammar()
    episodes = generate_episodes(config.seed, args.episodes, vocab, horizon=config.horizon,
                                 show_progress=args.verbose)
    train_ids, _ = split_indices(len(episodes))
    stats = fit_feature_stats([episodes[i] for i in train_ids])
    header = write_dataset(episodes, out, vocab, stats, seed=config.seed)
    frames = sum(len(ep.frames) for ep in episodes)
    print(f"✓ Wrote {header.n_episodes} episodes ({frames} frames) to {out}")
    print(f"  Expert success: {sum(ep.success for ep in episodes)}/{len(episodes)}")
    return 0


def cmd_pretrain_decoder(args) -> int:
    """Pretrain the CoT decoder; a missed perplexity target exits 1 and writes no archive."""
    config = _config(args, data=args.data, decoder_steps=args.steps)
    data = load_training_data(config.data)
    vocab = data.dataset.vocabulary
    decoder, report = pretrain_decoder(data.cot_corpus(), vocab, data.heldout_cot_corpus(), seed=config.seed,
                                       steps=config.decoder_steps, lr=config.decoder_lr,
                                       target=config.decoder_ppl_target, show_progress=args.verbose)
    if not report.passed:
        print(f"⚠ {report.summary()}", file=sys.stderr)
        print("  No decoder written. Raise decoder_steps or decoder_lr and retry.", file=sys.stderr)
        return 1
    out = Path(args.out or Path(config.out_dir) / "decoder.ckpt")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_decoder(out, decoder, vocab, report.__dict__)
    print(f"✓ {report.summary()}")
    print(f"  → {out}")
    return 0


def cmd_train(args) -> int:
    config = _config(
        args,
        data=args.data,
        decoder=args.decoder,
        out_dir=args.out_dir,
        steps=args.steps,
        seed=args.seed,
        use_visual_cot="false" if args.no_visual else None,
        use_linguistic_cot="false" if args.no_linguistic else None,
    )
    trainer = train(config, resume=args.resume, show_progress=args.verbose)
    final = Path(config.out_dir) / "model.ckpt"
    last = trainer.metrics[-1] if trainer.metrics else None
    print(f"✓ Trained {config.variant} to step {trainer.state.step}")
    if last:
        print(f"  l_vis {last['l_vis']:.4f}  l_lin {last['l_lin']:.4f}  "
              f"l_act {last['l_act']:.4f}  l_total {last['l_total']:.4f}")
    print(f"  → {final}")
    print(f"  → {Path(config.out_dir) / 'metrics.csv'}")
    if args.charts:
        from src.charts import chart_loss_curves

        print(f"  → {chart_loss_curves(trainer.metrics_frame(), config.out_dir)}")
    return 0


def cmd_eval(args) -> int:
    config = _config(args)
    if args.policy == "model":
        if not args.ckpt:
            print("Error: --ckpt is required for the model policy.", file=sys.stderr)
            return 1
        factory = model_factory(_session.model(args.ckpt))
    elif args.policy == "expert":
        factory = expert_factory(config.horizon)
    else:
        factory = random_factory(config.horizon)
    report = closed_loop_eval(factory, args.episodes, args.seed, workers=args.workers,
                              show_progress=args.verbose)
    print(f"Closed-loop success ({args.policy}, {args.episodes} episodes/template, 95% Wilson interval):")
    print(report.summary())
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        report.to_frame().to_csv(args.out, index=False)
        print(f"  → {args.out}")
    return 0


def _fresh_decoder(config: TrainConfig, vocab: Vocabulary) -> FrozenDecoderParams:
    decoder = FrozenDecoderParams.init(Rng(config.seed).spawn(1), len(vocab))
    decoder.freeze()
    return decoder


def cmd_bench_latency(args) -> int:
    config = _config(args, data=args.data)
    if args.ckpt:
        parallel = _session.model(args.ckpt)
        config = parallel.config
        vocab = parallel.vocab
    else:
        vocab = Vocabulary.from_grammar()
        parallel = build_model(replace(config, use_visual_cot=True, use_linguistic_cot=True), vocab,
                               _fresh_decoder(config, vocab))
    non_cot = build_model(replace(config, use_visual_cot=False, use_linguistic_cot=False), vocab)
    if args.ar_steps > 0:
        data = load_training_data(config.data)
        samples = [data.sample(i) for i in range(len(data))]
        ar = train_ar_model(config, samples, vocab, steps=args.ar_steps, show_progress=args.verbose)
    else:
        ar = build_ar_model(config, vocab)

    report = bench_latency(non_cot, parallel, ar, k=args.ar_k, reps=args.reps, warmup=args.warmup,
                           sweep=() if args.no_sweep else AR_K_SWEEP, seed=config.seed,
                           show_progress=args.verbose)
    path = report.write(args.out)
    print(report.to_frame().to_string(index=False, float_format=lambda v: f"{v:.2f}"))
    print(f"\nParallel-CoT backbone overhead vs non-CoT: {100 * report.parallel_backbone_overhead:+.1f}%")
    print(f"AR-CoT (K={args.ar_k}) / parallel-CoT total: {report.ar_over_parallel:.1f}x")
    if report.fit is not None:
        print(f"AR sweep: {report.fit.slope:.3f} ms/token + {report.fit.intercept:.2f} ms (R² {report.fit.r2:.3f})")
    print(f"  → {path}")
    if args.charts:
        from src.charts import chart_latency

        print(f"  → {chart_latency(report, path.parent)}")
    return 0


def cmd_ablate(args) -> int:
    config = _config(args, data=args.data, out_dir=args.out_dir, steps=args.steps)
    data = load_training_data(config.data)
    checkpoints = train_variants(config, data, show_progress=args.verbose)
    table = run_ablation(checkpoints, args.episodes, config.seed, workers=args.workers,
                         show_progress=args.verbose)
    path = table.write(Path(config.out_dir) / "ablation.csv")
    print(table.console())
    full, none = table.row("dual_cot").report.average, table.row("no_cot").report.average
    print(f"\nDual CoT average {100 * full:.1f}% vs no CoT {100 * none:.1f}%")
    print(f"Data order hash (shared): {table.rows[0].data_order_hash[:16]}")
    print(f"  → {path}")
    if args.charts:
        from src.charts import chart_ablation

        print(f"  → {chart_ablation(table.to_frame(), config.out_dir)}")
    return 0


def cmd_probe_viz(args) -> int:
    """Fit a linear depth probe on frozen H_vis and write PGM and PNG comparisons."""
    from src.charts import chart_probe_triptych

    model = _session.model(args.ckpt)
    dataset = _session.dataset(args.data or model.config.data)
    train_ids, held = split_indices(len(dataset.episodes))
    x_train, d_train, _ = collect_visual_features(model, dataset, frames_of(dataset, train_ids, args.max_train))
    x_test, d_test, images = collect_visual_features(model, dataset, frames_of(dataset, held, args.max_test))
    probe = train_probe(x_train, d_train, steps=args.probe_steps, seed=model.config.seed,
                        show_progress=args.verbose)
    report = evaluate_probe(probe, x_test, d_test)

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    probe.save(out / "probe.ckpt")
    for i in range(min(args.images, len(x_test))):
        predicted = probe_decode(x_test[i], probe)
        write_pgm(out / f"frame{i:03d}_truth.pgm", d_test[i])
        write_pgm(out / f"frame{i:03d}_probe.pgm", predicted)
        chart_probe_triptych(images[i], d_test[i], predicted, name=f"frame{i:03d}", out_dir=out,
                             pearson_r=report.pearson_r)
    print(f"✓ Depth probe on {len(x_train)} frames; held-out n={report.n}")
    print(f"  Pearson r {report.pearson_r:.4f}  MSE {report.mse:.5f}")
    print(f"  → {out}")
    return 0


def cmd_decode_cot(args) -> int:
    model = _session.model(args.ckpt)
    dataset = _session.dataset(args.data or model.config.data)
    decoded = decode_frame(model, dataset, args.episode, args.frame, args.max_len)
    print(decoded.text)
    diag = linguistic_report(model, dataset, frames_of(dataset, [args.episode]), args.max_len)
    print(f"\n  reference: {decoded.reference}")
    print(f"  three-part structure: {'yes' if decoded.structured else 'no'}")
    print(f"  episode diagnostics: {diag.summary()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
