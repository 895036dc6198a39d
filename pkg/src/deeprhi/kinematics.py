"""Planar two-link arm kinematics.

Angles are measured from the forward (+y) axis, positive angles rotate
toward -x (counter-clockwise seen from above). The elbow angle is relative
to the upper arm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ArmGeometry:
    upper_arm_length: float = 0.30
    forearm_length: float = 0.30
    shoulder_position: tuple[float, float] = (-0.10, 0.0)

    def __post_init__(self):
        if self.upper_arm_length <= 0 or self.forearm_length <= 0:
            raise ValueError("link lengths must be positive")


def _dir(angle):
    return np.array([-np.sin(angle), np.cos(angle)])


def joint_positions(q, geom: ArmGeometry) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Shoulder, elbow and hand positions in metres."""
    q = np.asarray(q, dtype=np.float64)
    shoulder = np.asarray(geom.shoulder_position, dtype=np.float64)
    elbow = shoulder + geom.upper_arm_length * _dir(q[0])
    hand = elbow + geom.forearm_length * _dir(q[0] + q[1])
    return shoulder, elbow, hand


def forward_kinematics(q, geom: ArmGeometry) -> np.ndarray:
    return joint_positions(q, geom)[2]


def fk_jacobian(q, geom: ArmGeometry) -> np.ndarray:
    """d(hand)/d(q) as a 2x2 matrix, metres per radian."""
    q1, q2 = float(q[0]), float(q[1])
    l1, l2 = geom.upper_arm_length, geom.forearm_length
    q12 = q1 + q2
    return np.array([
        [-l1 * np.cos(q1) - l2 * np.cos(q12), -l2 * np.cos(q12)],
        [-l1 * np.sin(q1) - l2 * np.sin(q12), -l2 * np.sin(q12)],
    ])


def inverse_kinematics(hand, geom: ArmGeometry, elbow_sign: float = 1.0) -> np.ndarray:
    """Joint angles placing the hand at ``hand``; ``elbow_sign`` picks the branch."""
    d = np.asarray(hand, dtype=np.float64) - np.asarray(geom.shoulder_position)
    l1, l2 = geom.upper_arm_length, geom.forearm_length
    r2 = float(d @ d)
    c = (r2 - l1 * l1 - l2 * l2) / (2 * l1 * l2)
    if not -1.0 <= c <= 1.0:
        raise ValueError(f"target {tuple(hand)} is out of reach")
    q2 = np.sign(elbow_sign) * np.arccos(c)
    phi = np.arctan2(-d[0], d[1])
    q1 = phi - np.arctan2(l2 * np.sin(q2), l1 + l2 * np.cos(q2))
    return np.array([q1, q2])
