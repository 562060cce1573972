"""Rotated bounding box tracking toolkit.

Ships a diagonal-plus-arc box parametrization, a differentiable circular
loss with an analytic gradient, a small attention-based tracker trained by
hand-rolled reverse-mode autodiff, synthetic sequence generation, and a
reset-based evaluation protocol (accuracy, robustness, expected average
overlap).
"""

__version__ = "0.1.0"
