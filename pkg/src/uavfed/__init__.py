"""Auction-based multi-SP UAV resource allocation with Byzantine-resilient federated policy gradients."""

__version__ = "0.1.0"
