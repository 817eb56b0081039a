"""Hybrid conversational task assistant framework.

Routes user utterances through generated action codes, walks users through
structured tasks step by step, answers task-grounded questions, rewrites
tasks live on replacement requests, and enforces per-component latency
budgets with pluggable model backends.
"""

__version__ = "0.1.0"
