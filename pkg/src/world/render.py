"""
Top-down orthographic rasteriser.

Pixel (r, c) of an N x N image samples the unit square at
((c + 0.5) / N, (r + 0.5) / N). A disc covers a pixel when the sample lies
within radius + half a pixel of its centre, so small objects never vanish.
Objects are painted in increasing height order; depth is the height of the
topmost covering object (table = 0). The gripper is a plus-shaped cross
drawn last, at depth z.
"""

from __future__ import annotations

import numpy as np

from src.world.scene import COLOURS, Scene, SceneObject

IMAGE_HW = 32
TABLE_GRAY = 0.5
GRIPPER_OPEN_RGB = (0.9, 0.9, 0.2)
GRIPPER_CLOSED_RGB = (0.2, 0.9, 0.9)


def _pixel_grid(n: int) -> tuple[np.ndarray, np.ndarray]:
    centres = (np.arange(n) + 0.5) / n
    xs, ys = np.meshgrid(centres, centres)  # xs varies along columns
    return xs, ys


def effective_height(obj: SceneObject, gripper_z: float) -> float:
    """Held objects are lifted with the gripper."""
    return max(obj.height, gripper_z) if obj.held else obj.height


def coverage(obj: SceneObject, n: int = IMAGE_HW) -> np.ndarray:
    xs, ys = _pixel_grid(n)
    dist = np.hypot(xs - obj.center[0], ys - obj.center[1])
    return dist <= obj.radius + 0.5 / n


def render(
    scene: Scene, image_hw: int = IMAGE_HW, draw_gripper: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """Return (rgb [N, N, 3], depth [N, N]) with values in [0, 1]."""
    rgb = np.full((image_hw, image_hw, 3), TABLE_GRAY)
    depth = np.zeros((image_hw, image_hw))

    z = scene.gripper.z
    ordered = sorted(scene.objects, key=lambda o: effective_height(o, z))
    for obj in ordered:
        h = effective_height(obj, z)
        mask = coverage(obj, image_hw) & (h >= depth)
        rgb[mask] = COLOURS[obj.colour]
        depth[mask] = h

    if not draw_gripper:
        return rgb, np.clip(depth, 0.0, 1.0)

    g = scene.gripper
    col = min(int(g.x * image_hw), image_hw - 1)
    row = min(int(g.y * image_hw), image_hw - 1)
    colour = GRIPPER_OPEN_RGB if g.open else GRIPPER_CLOSED_RGB
    for dr, dc in ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)):
        r, c = row + dr, col + dc
        if 0 <= r < image_hw and 0 <= c < image_hw:
            rgb[r, c] = colour
            depth[r, c] = max(depth[r, c], z)
    return rgb, np.clip(depth, 0.0, 1.0)
