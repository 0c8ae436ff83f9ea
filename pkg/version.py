"""
Version information for PeTTO
"""

__version__ = "0.3.0"
__app_name__ = "PeTTO"

# Config files newer than this (major version) are rejected
CONFIG_SCHEMA_VERSION = "1.0"
