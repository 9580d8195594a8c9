#!/usr/bin/env python3
"""
Demo script — runs the whole DualCoT desk pipeline at toy size.

Usage:
    python demo.py

Generates a small dataset, pretrains the CoT decoder, trains the dual-stream
policy, evaluates it in closed loop and benchmarks latency. Everything lands
in ./demo-output/. Expect a few minutes on a laptop CPU.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from src.cli import main as cli_main  # noqa: E402
from src.training.config import TrainConfig, dump_config  # noqa: E402

OUTPUT_DIR = Path("demo-output")


def run(argv: list[str]) -> None:
    code = cli_main(argv)
    if code != 0:
        sys.exit(code)


def main():
    OUTPUT_DIR.mkdir(exist_ok=True)
    config = TrainConfig(
        batch=4, steps=40, d_model=32, n_blocks=2, checkpoint_every=20, log_every=10, decoder_steps=100,
        decoder_ppl_target=50.0,
        data=str(OUTPUT_DIR / "desk.bin"), out_dir=str(OUTPUT_DIR / "run"),
    )
    cfg = OUTPUT_DIR / "demo.cfg"
    cfg.write_text(dump_config(config))
    ckpt = str(OUTPUT_DIR / "run" / "model.ckpt")

    print("=" * 60)
    print("DualCoT desk — Toy Demo")
    print("=" * 60)

    print("\n▸ Step 1: Generating expert demonstrations...")
    run(["gen-data", "--config", str(cfg), "--episodes", "30"])

    print("\n▸ Step 2: Pretraining and freezing the CoT decoder...")
    run(["pretrain-decoder", "--config", str(cfg), "--out", str(OUTPUT_DIR / "decoder.ckpt")])

    print("\n▸ Step 3: Joint training (visual + linguistic + action)...")
    run(["train", "--config", str(cfg), "--decoder", str(OUTPUT_DIR / "decoder.ckpt"), "--charts"])

    print("\n▸ Step 4: Closed-loop evaluation...")
    run(["eval", "--config", str(cfg), "--ckpt", ckpt, "--episodes", "5",
              "--out", str(OUTPUT_DIR / "eval.csv")])

    print("\n▸ Step 5: Decoding one frame's linguistic CoT...")
    run(["decode-cot", "--ckpt", ckpt, "--episode", "0", "--max-len", "40"])

    print("\n▸ Step 6: Latency benchmark...")
    run(["bench-latency", "--config", str(cfg), "--ar-k", "16", "--reps", "5", "--warmup", "1",
              "--out", str(OUTPUT_DIR / "latency.json"), "--charts"])

    print("\n" + "=" * 60)
    print(f"Demo complete! Outputs saved to ./{OUTPUT_DIR}/")
    print("The toy run is far too short to learn the tasks; use configs/desk.cfg for a real one.")
    print("=" * 60)


if __name__ == "__main__":
    main()
