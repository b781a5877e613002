"""Minimum-power joint beamforming and discrete IRS phase design."""
import logging

__version__ = '0.1.0'

logging.getLogger(__name__).addHandler(logging.NullHandler())
