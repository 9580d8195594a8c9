"""Closed-loop evaluation, the latency harness with its AR-CoT comparator, ablation and probing."""
