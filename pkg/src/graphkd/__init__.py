"""Data-free adversarial distillation of graph classifiers on a small numpy autodiff engine."""

__version__ = "0.1.0"
