"""
SOLAR lab - online continual self-supervised learning with replay.
"""
__version__ = "1.0.0"
