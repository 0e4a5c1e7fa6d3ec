"""Context-gated mixture of ternary-Gaussian experts for moving-target
intent inference, with a synthetic data generator, training loop,
evaluation harness, CLI and live prediction service."""

__version__ = "0.1.0"
