"""Synchronized development kernel: MiniJ language, build gate, element
dependency analysis, lock-admission kernel, wire protocol, and simulator."""

__version__ = "0.1.0"
