"""Decision-focused federated learning workbench."""
__version__ = "0.1.0"
