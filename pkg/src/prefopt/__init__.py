"""Structure-conditioned sequence model fine-tuned with reference-free preference optimization."""

__version__ = "0.1.0"
