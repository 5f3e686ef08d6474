"""Optimal stopping on discrete Brownian skeletons with regression Monte Carlo."""
__version__ = "0.1.0"

from .skeleton import ExitTimeDistribution, SkeletonConfig, sample_batch, sample_path
from .structures import EulerStructure, build_structure

__all__ = ["__version__", "ExitTimeDistribution", "SkeletonConfig", "sample_batch",
           "sample_path", "EulerStructure", "build_structure"]
