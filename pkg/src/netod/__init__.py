"""Transit origin-destination estimation by transfer identification."""
from .model import (FeasibilityGraph, FeasibilityParams, ODMatrix, Stop, StopRegistry,
                    TransferAssignment, TransferRates, TransferTargets, TripSegment, ZoneMap)

__version__ = "0.1.0"

__all__ = ["FeasibilityGraph", "FeasibilityParams", "ODMatrix", "Stop", "StopRegistry",
           "TransferAssignment", "TransferRates", "TransferTargets", "TripSegment", "ZoneMap"]
