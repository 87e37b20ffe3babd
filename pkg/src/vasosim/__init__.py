"""Desk-scale arterial flow, echo sensing, inversion and episode-risk toolkit."""

from . import acoustics, cli, errors, hemogrid, inversion, risk, synthdata

__all__ = ["acoustics", "cli", "errors", "hemogrid", "inversion", "risk",
           "synthdata"]
__version__ = "0.1.0"
