"""grapplesim: a desk-scale multi-log grapple loading simulator.

Library entry points:

- :mod:`grapplesim.terrain` / :mod:`grapplesim.scenes` -- procedural piles
- :mod:`grapplesim.camera` -- frozen-reconstruction virtual RGB-D camera
- :mod:`grapplesim.crane` / :mod:`grapplesim.ik` -- kinematics and Cartesian control
- :mod:`grapplesim.dynamics` -- rigid-body core
- :mod:`grapplesim.env` -- the episodic grasping environment
- :mod:`grapplesim.harness` -- evaluation and ablation instruments
- :mod:`grapplesim.server` -- wire-protocol environment server
"""

from .config import Config, load_config

__version__ = "0.1.0"

__all__ = ["Config", "load_config", "__version__"]
