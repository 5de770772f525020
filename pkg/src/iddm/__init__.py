"""Exact occupancy-measure analysis and imitation learning from observations on tabular MDPs."""

__version__ = "0.1.0"
