"""Ancestral partition processes of continuous-time Galton-Watson trees.

Exact fixed-horizon laws, large-horizon limits, and a Monte Carlo simulator to
check them against.
"""

from .genfun import OffspringSpec, parse_spec
from .partitions import Chain, Partition, parse_chain, parse_partition

__all__ = ["OffspringSpec", "parse_spec", "Chain", "Partition", "parse_chain", "parse_partition"]
