"""halluqa: scene-graph question-answering evaluation of text-to-image output.

Parse a prompt into triples, build a per-image scene graph from detection and
VQA services (offline-replayable), answer templated questions against the
graph, classify hallucination errors, score on a 7-tier rubric, and compare
against human ratings.
"""

__version__ = "0.1.0"
