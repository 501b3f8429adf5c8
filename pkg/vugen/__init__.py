"""
vugen

Desk-scale reproduction of generating images in a frozen understanding
encoder's (dimension-reduced) latent space, with its baselines, metrics and
experiment harness.
"""

__version__ = "0.1.0"
