"""Observer-based key agreement between a remotely driven robot and its controller."""

__version__ = "0.1.0"
