"""Stochastic reach-avoid probabilities for controlled diffusions.

Grid HJB solver with mollified payoffs, a Monte Carlo cross-check and
level-set extraction.
"""

__version__ = "0.1.0"
