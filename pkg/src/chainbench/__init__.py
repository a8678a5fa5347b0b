"""Desk-scale pub/sub callback-chain latency testbed."""
__version__ = "0.1.0"
