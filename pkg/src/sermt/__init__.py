"""SERMT: trust-based secure remote monitoring for smart-grid sensor networks.

A deterministic discrete-event simulator: it builds the protocol's WSN
overlay on an IEEE bus topology, runs trust rounds, encrypted data
forwarding, clustering and routing under injected attacks, and reports
delivery and energy metrics.
"""

__version__ = "0.1.0"
