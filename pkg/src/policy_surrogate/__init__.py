"""Sample-efficient estimation of county-level treatment effects.

A bi-level surrogate replaces exhaustive county-by-treatment simulation:
per-county affine response functions are summarized from simulation runs by
least squares, their coefficients are learned across counties by
heteroscedastic Gaussian-process regression over spatial and socio-economic
features, and a two-stage sequential design routes the simulation budget to
the most uncertain counties and treatment conditions.
"""

__version__ = "0.1.0"
