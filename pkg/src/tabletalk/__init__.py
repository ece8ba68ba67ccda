"""Synthesize and benchmark verified clarification/correction dialogues
for table question answering."""

__version__ = "0.1.0"
