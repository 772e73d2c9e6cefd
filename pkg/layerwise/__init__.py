"""
layerwise - top-down layer-wise training toolkit
"""

__version__ = "1.0.0"
