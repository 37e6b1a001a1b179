"""Conciseness-reward RL toolkit: rewards, LLM judge, toy policy, trainer, evaluation."""

__version__ = "0.1.0"
