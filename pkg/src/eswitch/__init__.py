"""Expert-switching prediction with expert hidden Markov models."""

__version__ = "0.1.0"
