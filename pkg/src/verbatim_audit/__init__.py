"""Extraction audit toolkit for conditional image generators.

Scores prompts for memorization (one-step denoising residual, edge
consistency across seeds), labels generations as exact / template /
retrieval verbatims against a reference corpus, and reports precision
versus number of verbatims found.
"""

__version__ = "0.1.0"

PROTOCOL_VERSION = "1"
PROTOCOL_HEADER = "X-VA-Proto"
