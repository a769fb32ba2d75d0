"""certkit: sound, checkable certificates for ReLU networks, covariate shift, and additive models."""

__version__ = "0.1.0"
