"""Pricing European options under counterparty credit risk with
physics-informed neural networks, validated against closed-form and
finite-difference oracles."""

__version__ = "0.1.0"
