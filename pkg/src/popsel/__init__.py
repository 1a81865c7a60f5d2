"""Population inference with selection effects on one-dimensional toys.

Two routes to the intrinsic population are implemented side by side: the
in-likelihood route, which puts the detection fraction alpha(Lambda) in the
hierarchical likelihood, and the post-processing route, which infers the
observed distribution and divides out the selection function afterwards.
"""

__version__ = "0.1.0"
