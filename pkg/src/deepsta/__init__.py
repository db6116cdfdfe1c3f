"""Delivery timely-rate forecasting with spatio-temporal graph learning and anomaly memory."""

__version__ = "0.1.0"
