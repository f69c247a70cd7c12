"""Cross-embodiment demonstration pipeline and retargeting engine.

Converts egocentric human captures and robot teleoperation logs into one
human-centric 54-dim state-action space, retimes them for co-training,
trains a chunked-action behavior-cloning policy with an EEF-weighted L1
loss, and retargets predicted actions to robot joint commands via
damped-least-squares IK.
"""

from . import (
    dataset,
    embodiments,
    errors,
    geometry,
    harness,
    kinematics,
    policy,
    retiming,
    tasks,
    unified_space,
)

__version__ = "0.1.0"

__all__ = [
    "dataset",
    "embodiments",
    "errors",
    "geometry",
    "harness",
    "kinematics",
    "policy",
    "retiming",
    "tasks",
    "unified_space",
    "__version__",
]
