"""Audio adversarial-example defenses, temporal-dependency detection and
adaptive attacks, evaluated against a small differentiable CTC recognizer."""

__version__ = "0.1.0"
