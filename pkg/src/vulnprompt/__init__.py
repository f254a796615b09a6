"""Prompt synthesis for LLM-based vulnerability detection.

Combines a pluggable detection-model probability provider with static-analyzer
findings to build two-part prompts (in-context examples + guided reasoning
steps) and evaluates the resulting verdicts with standard binary-classifier
metrics.
"""

__version__ = "0.1.0"
