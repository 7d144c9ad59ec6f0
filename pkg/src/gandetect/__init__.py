"""GAN-based detection of adversarial examples: data, attacks, detection, evaluation."""

__version__ = "0.1.0"
