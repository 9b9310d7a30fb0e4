"""Gene-expression disease modelling: co-expression factor graphs and hierarchical Bayesian fits."""

__version__ = "0.1.0"
