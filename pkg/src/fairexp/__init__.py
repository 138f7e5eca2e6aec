"""Online learning to rank with group-exposure fairness.

A pairwise logistic-regression ranker learns from simulated clicks while
confidence intervals split candidate pairs into certain and uncertain
orders. Exploration happens by shuffling within blocks of uncertain
documents; fairness is enforced by confining each round's ranking to a
group-placement template whose projected cumulative exposure difference
stays within a threshold, calibrated onto the block structure with the
minimum number of certain-order violations.
"""

__version__ = "0.1.0"

from . import click_sim, data, fairness, fairswap, harness, metrics, ranker  # noqa: F401
