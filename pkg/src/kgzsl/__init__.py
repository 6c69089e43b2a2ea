"""Knowledge-graph class embeddings for object-agnostic zero-shot state classification."""

__version__ = "0.1.0"
