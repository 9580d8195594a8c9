"""Synthetic tabletop world: scenes, rendering, expert, CoT text and datasets."""
