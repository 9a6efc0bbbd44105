"""Trust fields for vehicular ad hoc networks.

Vehicles move along a corridor, flood messages over a few hops, and score
each other's forwarding behavior with LogitTrust; the resulting per-vehicle
trust traces are binned into a spatiotemporal field next to density, speed
and flow.
"""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402
from .errors import (ConfigError, DataError, NumericalError,  # noqa: E402
                     TrustFieldError)

__all__ = ["BACKEND", "ConfigError", "DataError", "NumericalError", "TrustFieldError",
           "__version__"]
