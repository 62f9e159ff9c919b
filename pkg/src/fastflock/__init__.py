"""Decentralized fast-flocking library and deterministic multi-agent simulator."""

__version__ = "0.1.0"
