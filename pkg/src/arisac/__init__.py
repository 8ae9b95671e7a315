"""Joint precoder and active-RIS reflection design minimizing the DoA
Cramer-Rao bound under per-user SINR and power budgets."""

from .driver import (BcdOptions, DesignResult, run_bcd, run_passive_baseline, run_radar_only,
                     run_variant)
from .scenario import ChannelSet, Geometry, Scenario, random_channels, synthesize_channels

__all__ = ["BcdOptions", "ChannelSet", "DesignResult", "Geometry", "Scenario", "random_channels",
           "run_bcd", "run_passive_baseline", "run_radar_only", "run_variant",
           "synthesize_channels"]
__version__ = "0.1.0"
