"""Learned spanning-forest surrogates for districting with stochastic routing costs."""

__version__ = "0.1.0"
