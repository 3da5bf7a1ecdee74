"""Campus ride dispatch service.

Single-service backend for campus ride sharing: admin-validated accounts,
FIFO request dispatch with broadcast offers and atomic claims, a six-stage
ride lifecycle, graph routing with reroute-on-deviation, a realtime event
protocol, and a deterministic simulation harness.
"""

__version__ = "0.1.0"
