"""Unified sequence assembly and the miniature VLM backbone."""
