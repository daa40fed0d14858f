"""Off-resonance artifact simulation and correction for 3D cones MRI."""
__version__ = "0.1.0"
