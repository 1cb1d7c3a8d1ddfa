"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from resplat.scene import CameraPose


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def make_camera(
    width: int = 32,
    height: int = 32,
    fx: float = 40.0,
    pose_id: str = "cam",
    rotation=(1.0, 0.0, 0.0, 0.0),
    translation=(0.0, 0.0, 0.0),
) -> CameraPose:
    return CameraPose(
        rotation=np.asarray(rotation, dtype=float),
        translation=np.asarray(translation, dtype=float),
        fx=fx,
        fy=fx,
        cx=width / 2.0,
        cy=height / 2.0,
        width=width,
        height=height,
        pose_id=pose_id,
    )
