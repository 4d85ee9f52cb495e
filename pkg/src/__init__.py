"""
EVPN DF selection simulator
"""

__version__ = "1.0.0"
