"""Denoise-then-identify toolkit.

Simulates benchmark nonlinear systems, corrupts them with white or colored
noise, denoises and differentiates the measurements with local and global
smoothers, selects hyperparameters by GCV or a Pareto-corner search, and
recovers sparse governing equations by thresholded least squares or
iteratively reweighted basis-pursuit denoising.
"""

__version__ = "0.1.0"
