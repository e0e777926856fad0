"""Orthographic top-down renderer with ground-truth depth.

Depth at a pixel is camera height minus the tallest surface there, so an
empty table renders as a constant background distance and the nearest
surface wins wherever footprints overlap.
"""

import numpy as np

from .env import COLORS, EnvConfig, WorldState

TABLE_COLOR = (0.25, 0.25, 0.25)
GOAL_COLOR = (0.10, 0.50, 0.50)
DRAWER_BODY_COLOR = (0.45, 0.30, 0.15)
DRAWER_HANDLE_COLOR = (0.65, 0.55, 0.20)
EFFECTOR_COLOR = (0.95, 0.95, 0.95)

DRAWER_BODY_HEIGHT = 0.15
DRAWER_HANDLE_HEIGHT = 0.25
EFFECTOR_THICKNESS = 0.05


class InputError(Exception):
    pass


def _pixel_centers(n: int):
    c = (np.arange(n) + 0.5) / n
    return np.meshgrid(c, c, indexing="xy")  # xx varies along columns


def block_top_height(block, cfg: EnvConfig) -> float:
    return block.z + cfg.block_height


def block_footprint_mask(block, cfg: EnvConfig) -> np.ndarray:
    """Boolean [H,W] mask of pixels whose centers fall inside the block."""
    n = cfg.image_size
    xx, yy = _pixel_centers(n)
    h = block.size / 2.0
    return (np.abs(xx - block.x) <= h) & (np.abs(yy - block.y) <= h)


def analytic_block_depth(block, cfg: EnvConfig) -> float:
    """Closed-form camera-to-surface distance of a block's top face."""
    return cfg.camera_height - block_top_height(block, cfg)


def render_observation(state: WorldState, cfg: EnvConfig = EnvConfig(),
                       noise_key=None):
    """Render (image [H,W,3] in [0,1], depth [H,W] in world units).

    Deterministic in `state`; `noise_key` (an integer) additionally overlays a
    reproducible pseudo-noise pattern on the image only.
    """
    n = cfg.image_size
    xx, yy = _pixel_centers(n)
    img = np.empty((n, n, 3), dtype=np.float64)
    img[:] = TABLE_COLOR
    height = np.zeros((n, n), dtype=np.float64)

    surfaces = []  # (top_height, mask, color)

    gx, gy = state.goal_zone
    goal_mask = np.hypot(xx - gx, yy - gy) <= cfg.place_radius + 0.02
    surfaces.append((0.0, goal_mask, GOAL_COLOR))

    body_mask = ((xx >= 0.05) & (xx <= state.drawer_x)
                 & (np.abs(yy - cfg.drawer_y) <= 0.04))
    surfaces.append((DRAWER_BODY_HEIGHT, body_mask, DRAWER_BODY_COLOR))
    handle_mask = ((np.abs(xx - state.drawer_x) <= 0.03)
                   & (np.abs(yy - cfg.drawer_y) <= 0.05))
    surfaces.append((DRAWER_HANDLE_HEIGHT, handle_mask, DRAWER_HANDLE_COLOR))

    for b in state.blocks:
        base = np.array(COLORS[b.color])
        color = tuple(np.clip(base + 0.25 * b.z, 0.0, 1.0))
        surfaces.append((block_top_height(b, cfg), block_footprint_mask(b, cfg), color))

    eff_mask = np.hypot(xx - state.eff_x, yy - state.eff_y) <= cfg.effector_radius
    eff_bright = 0.5 + 0.5 * state.eff_z
    eff_color = tuple(np.array(EFFECTOR_COLOR) * eff_bright)
    surfaces.append((state.eff_z + EFFECTOR_THICKNESS, eff_mask, eff_color))

    for top, mask, color in sorted(surfaces, key=lambda s: s[0]):
        paint = mask & (top >= height)
        img[paint] = color
        height[paint] = top

    depth = cfg.camera_height - height
    if noise_key is not None:
        rng = np.random.Generator(np.random.PCG64(int(noise_key)))
        img = img + rng.uniform(-cfg.noise_amp, cfg.noise_amp, size=img.shape)
    return np.clip(img, 0.0, 1.0), depth
