"""Joint training: configuration, the assembled model, the joint loss, checkpoints and the loop."""
