"""
Sparse-attention encoder classifiers on a small numpy autograd core, with
logit-matching distillation from a sparse teacher into a shallower student.
"""

__version__ = "0.1.0"
