"""Flow-matching DiT action head."""
