"""Detect coordinated accounts from behavioural-trace similarity networks."""

__version__ = "0.1.0"
