"""Statistical evaluation toolkit for image-level fear-rating experiments.

Rater screening, leakage-free dual-level cross-validation, closed-form
baseline prediction, reliability estimation via ICC(2,k), learning-curve
fits, attribution-mask overlap statistics, and category-wise error
analysis, all reproducible bit-for-bit under a fixed seed.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
