"""Visual chain-of-thought: geometric distillation and the depth probe."""
