"""
Rayleigh Quotient graph anomaly detection.
"""
