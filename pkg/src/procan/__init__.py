"""Progressive growing channel-attentive non-local networks for nodule classification."""

__version__ = "0.1.0"
