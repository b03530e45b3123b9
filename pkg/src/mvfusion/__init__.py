"""Multi-view LiDAR/camera/map fusion pipeline kit.

Synthetic scenes in, metrics out: BEV/RV/map rasterization, point-based
cross-view feature projection, a forward-only fusion network, the joint
detection + motion-prediction loss with analytic gradients, and a
rotated-box evaluation suite.
"""

__version__ = "0.1.0"
