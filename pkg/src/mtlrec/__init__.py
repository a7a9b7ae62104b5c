"""Topic-aware video recommendation: multimodal topic learning, topic-queue retrieval and ranking."""

__version__ = "0.1.0"
