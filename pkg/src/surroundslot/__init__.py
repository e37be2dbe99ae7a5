"""Parking-slot geometry and evaluation for four-camera surround-view rigs.

Modules: ``camera`` (fisheye model), ``plane`` and ``stitch`` (bird's-eye
view), ``geometry`` (slot polygons, IoU, NMS), ``losses``, ``scene``
(synthetic lots), ``detector`` (marking-based baseline), ``evaluation``,
``formats`` and ``cli``.
"""

__version__ = "0.1.0"
