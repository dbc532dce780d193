"""latent_foray: unrestricted adversarial examples via latent-space manipulation.

A desk-scale laboratory: a from-scratch autodiff engine, miniature
style-based and layout-conditioned generators, classifier/segmenter targets,
sign-gradient attacks on disentangled latent variables, and defense
evaluation (adversarial training, randomized smoothing).
"""

__version__ = "0.1.0"

from . import engine, errors

__all__ = ["engine", "errors", "__version__"]
