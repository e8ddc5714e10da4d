"""Decision-estimation-coefficient tools for gamma-regret in finite bandit classes."""

__version__ = "0.1.0"
