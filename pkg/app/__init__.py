"""
SkyTrack - Small Aerial Target Tracking Package
"""

__version__ = "1.0.0"
