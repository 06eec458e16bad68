"""bratkit: neural backward reach-avoid tubes for spacecraft docking."""

__version__ = "0.1.0"
