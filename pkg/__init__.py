"""
AOSA: flow-adaptive occlusion sensitivity for video classifiers
"""

__version__ = "1.0.0"
