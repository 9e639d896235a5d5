"""Integral-geometry reweighted MCMC on implicitly defined manifolds."""
