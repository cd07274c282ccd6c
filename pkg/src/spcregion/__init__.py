"""Capacity-region boundary tools for a three-receiver Gaussian broadcast
channel built from two unmatched degraded subchannels."""
