"""In-process bindings for the chain-of-evidence scoring engine.

Exposes the operations a training loop needs, with plain-mapping inputs and
outputs and the engine's typed exceptions re-exported under
:mod:`coeforge_bindings.errors`.  Versioned in lockstep with the engine.
"""

from . import errors
from .engine import BoundEngine, bound_group_advantage

__all__ = ["BoundEngine", "bound_group_advantage", "errors"]

__version__ = "0.1.0"
