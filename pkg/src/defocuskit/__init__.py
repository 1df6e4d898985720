"""Defocus blur maps from single images, plus forensic analyses built on them."""
from .defocus import DefocusMap, DefocusParams, estimate_defocus
from .synthcam import CameraParams

__all__ = ["CameraParams", "DefocusMap", "DefocusParams", "estimate_defocus"]
__version__ = "0.1.0"
