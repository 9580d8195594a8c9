"""Closed-vocabulary tokenizer, frozen CoT decoder and prefix conditioning."""
