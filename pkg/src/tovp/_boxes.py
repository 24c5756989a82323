"""Shared yaw-oriented box math: containment tests and ray casting.

Boxes are axis-aligned in their own frame, rotated about world z by a yaw
angle and centered at a point.  Sizes are full extents (length, width,
height).  Used by the simulator, motion labeling, and evaluation.
"""

import numpy as np


def yaw_matrix(yaw: float) -> np.ndarray:
    c, s = np.cos(yaw), np.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def points_in_box(points, center, size, yaw, margin: float = 0.0) -> np.ndarray:
    """Boolean mask of points inside (or on) the oriented box, grown by
    ``margin`` on every face."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rel = pts - np.asarray(center, dtype=float)
    local = rel @ yaw_matrix(yaw)  # world->box uses R^T; (p @ R) == R^T p row-wise
    half = np.asarray(size, dtype=float) / 2.0 + margin
    return np.all(np.abs(local) <= half, axis=1)


def ray_box_crossings(origins, directions, center, size, yaw):
    """First positive surface crossing of rays against one oriented box.

    Returns (t, valid): the smallest positive parameter where each ray
    crosses the box surface (entry face, or exit face for rays starting
    inside) and a mask of rays that cross at all.  Slab method in the box
    frame; directions need not be normalized but the returned t is in
    units of the direction length.
    """
    o = np.atleast_2d(np.asarray(origins, dtype=float))
    d = np.atleast_2d(np.asarray(directions, dtype=float))
    rot = yaw_matrix(yaw)
    ol = (o - np.asarray(center, dtype=float)) @ rot
    dl = d @ rot
    half = np.asarray(size, dtype=float) / 2.0

    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = (-half - ol) / dl
        t2 = (half - ol) / dl
    near = np.minimum(t1, t2)
    far = np.maximum(t1, t2)
    # axis-parallel rays: inside the slab -> (-inf, inf), outside -> empty
    parallel = dl == 0.0
    inside_slab = np.abs(ol) <= half
    near = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), near)
    far = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), far)

    t_enter = near.max(axis=1)
    t_exit = far.min(axis=1)
    hits_line = t_enter <= t_exit
    # nearest positive crossing: entry if ahead, else exit (ray starts inside)
    t = np.where(t_enter > 0.0, t_enter, t_exit)
    valid = hits_line & (t > 0.0) & np.isfinite(t)
    return np.where(valid, t, np.inf), valid
