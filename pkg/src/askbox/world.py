"""Procedural scene generation and rendering for the synthetic shape world.

Scenes are grids of attributed objects (shape, color, size) with normalized
bounding boxes. Generation and rendering are pure functions of (seed, config),
so every downstream label can be computed exactly from the symbolic scene.
"""

from __future__ import annotations

import io
import json
import math
import random
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .errors import ConfigurationError

COLORS = ("red", "green", "blue", "yellow", "purple", "orange")
SHAPES = ("circle", "square", "triangle", "star")
SIZES = ("small", "large")

COLOR_RGB = {
    "red": (220, 40, 40),
    "green": (40, 170, 60),
    "blue": (45, 75, 220),
    "yellow": (235, 200, 30),
    "purple": (150, 55, 200),
    "orange": (240, 130, 20),
}
BACKGROUND_RGB = (236, 236, 236)

# Object side length as a fraction of the grid cell, per size word.
SIZE_FRACTION = {"small": 0.50, "large": 0.85}


@dataclass(frozen=True)
class WorldConfig:
    rows: int = 4
    cols: int = 4
    min_objects: int = 2
    max_objects: int = 8
    resolution: int = 64

    def validate(self) -> None:
        if self.min_objects < 2:
            raise ConfigurationError("min_objects must be >= 2")
        if self.min_objects > self.max_objects:
            raise ConfigurationError("min_objects exceeds max_objects")
        if self.rows * self.cols < self.max_objects:
            raise ConfigurationError("grid has fewer cells than max_objects")
        if self.resolution <= 0:
            raise ConfigurationError("resolution must be positive")


@dataclass(frozen=True)
class ObjectSpec:
    id: int
    shape: str
    color: str
    size: str
    cell: tuple[int, int]  # (row, col)
    bbox: tuple[float, float, float, float]  # (x1, y1, x2, y2), normalized

    def attribute(self, name: str) -> str:
        return {"color": self.color, "shape": self.shape, "size": self.size}[name]

    @property
    def center(self) -> tuple[float, float]:
        x1, y1, x2, y2 = self.bbox
        return ((x1 + x2) / 2, (y1 + y2) / 2)


@dataclass(frozen=True)
class Scene:
    scene_id: str
    grid: tuple[int, int]  # (rows, cols)
    seed: int
    objects: tuple[ObjectSpec, ...] = field(default_factory=tuple)

    def object_by_id(self, object_id: int) -> ObjectSpec:
        return self.objects[object_id]


@dataclass(frozen=True)
class RenderedImage:
    pixels: np.ndarray  # H x W x 3, uint8

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


def cell_bbox(cell: tuple[int, int], grid: tuple[int, int], size: str) -> tuple[float, float, float, float]:
    """Axis-aligned square bbox of an object centered in its grid cell."""
    rows, cols = grid
    row, col = cell
    cw, ch = 1.0 / cols, 1.0 / rows
    cx, cy = (col + 0.5) * cw, (row + 0.5) * ch
    side = SIZE_FRACTION[size] * min(cw, ch)
    return (cx - side / 2, cy - side / 2, cx + side / 2, cy + side / 2)


def _is_ambiguous(attrs: list[tuple[str, str, str]]) -> bool:
    """True when some attribute value is shared by at least two objects."""
    for i in range(3):
        values = [a[i] for a in attrs]
        if len(set(values)) < len(values):
            return True
    return False


def scene_id_for_seed(seed: int) -> str:
    return f"s{seed}"


def generate_scene(seed: int, config: WorldConfig = WorldConfig()) -> Scene:
    """Generate a scene deterministically from (seed, config).

    Objects occupy distinct cells and at least two of them share an
    attribute value, so referring phrases can be ambiguous.
    """
    config.validate()
    rng = random.Random(seed)
    n = rng.randint(config.min_objects, config.max_objects)
    all_cells = [(r, c) for r in range(config.rows) for c in range(config.cols)]
    cells = rng.sample(all_cells, n)

    while True:
        attrs = [(rng.choice(COLORS), rng.choice(SHAPES), rng.choice(SIZES)) for _ in range(n)]
        if _is_ambiguous(attrs):
            break

    objects = tuple(
        ObjectSpec(
            id=i,
            color=attrs[i][0],
            shape=attrs[i][1],
            size=attrs[i][2],
            cell=cells[i],
            bbox=cell_bbox(cells[i], (config.rows, config.cols), attrs[i][2]),
        )
        for i in range(n)
    )
    return Scene(scene_id=scene_id_for_seed(seed), grid=(config.rows, config.cols), seed=seed, objects=objects)


def _pixel_rect(bbox: tuple[float, float, float, float], resolution: int) -> tuple[int, int, int, int]:
    """Integer pixel rect [px1, px2) x [py1, py2) contained in the bbox."""
    x1, y1, x2, y2 = bbox
    px1 = math.ceil(x1 * resolution - 1e-6)
    py1 = math.ceil(y1 * resolution - 1e-6)
    px2 = math.floor(x2 * resolution + 1e-6)
    py2 = math.floor(y2 * resolution + 1e-6)
    return px1, py1, px2, py2


def _convex_mask(xx: np.ndarray, yy: np.ndarray, vertices: list[tuple[float, float]]) -> np.ndarray:
    """Points inside a convex CCW polygon, via half-plane tests."""
    mask = np.ones_like(xx, dtype=bool)
    k = len(vertices)
    for i in range(k):
        ax, ay = vertices[i]
        bx, by = vertices[(i + 1) % k]
        mask &= (bx - ax) * (yy - ay) - (by - ay) * (xx - ax) >= 0
    return mask


def object_mask(obj: ObjectSpec, resolution: int) -> np.ndarray:
    """Boolean H x W mask of the object's drawn pixels."""
    px1, py1, px2, py2 = _pixel_rect(obj.bbox, resolution)
    mask = np.zeros((resolution, resolution), dtype=bool)
    if px2 <= px1 or py2 <= py1:
        return mask
    side = min(px2 - px1, py2 - py1)
    cx, cy = px1 + (px2 - px1) / 2, py1 + (py2 - py1) / 2
    ys, xs = np.mgrid[py1:py2, px1:px2]
    xx, yy = xs + 0.5, ys + 0.5  # pixel centers

    if obj.shape == "square":
        sub = np.ones_like(xx, dtype=bool)
    elif obj.shape == "circle":
        r = side / 2
        sub = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
    elif obj.shape == "triangle":
        # Upward isoceles triangle: apex at top center, base at bottom edge.
        top, bottom = py1, py2
        half_at = (yy - top) / (bottom - top) * (side / 2)
        sub = np.abs(xx - cx) <= half_at
    elif obj.shape == "star":
        # Five-point star as a central pentagon plus five spike triangles.
        r_out = side / 2
        r_in = 0.42 * r_out
        outer, inner = [], []
        for k in range(5):
            a_out = math.radians(90 + 72 * k)
            a_in = math.radians(90 + 36 + 72 * k)
            # Screen y grows downward, so flip the sine.
            outer.append((cx + r_out * math.cos(a_out), cy - r_out * math.sin(a_out)))
            inner.append((cx + r_in * math.cos(a_in), cy - r_in * math.sin(a_in)))
        sub = _convex_mask(xx, yy, inner[::-1])
        for k in range(5):
            spike = [outer[k], inner[k], inner[(k - 1) % 5]]
            area2 = (spike[1][0] - spike[0][0]) * (spike[2][1] - spike[0][1]) - (
                spike[1][1] - spike[0][1]
            ) * (spike[2][0] - spike[0][0])
            if area2 < 0:
                spike = spike[::-1]
            sub |= _convex_mask(xx, yy, spike)
    else:
        raise ValueError(f"unknown shape: {obj.shape}")

    mask[py1:py2, px1:px2] = sub
    return mask


def render(scene: Scene, resolution: int = 64) -> RenderedImage:
    """Rasterize the scene; solid background, objects drawn in id order."""
    if resolution <= 0:
        raise ConfigurationError("resolution must be positive")
    pixels = np.empty((resolution, resolution, 3), dtype=np.uint8)
    pixels[:] = BACKGROUND_RGB
    for obj in scene.objects:
        mask = object_mask(obj, resolution)
        pixels[mask] = COLOR_RGB[obj.color]
    return RenderedImage(pixels=pixels)


def object_by_point(scene: Scene, x: float, y: float) -> int | None:
    """Id of the object whose bbox contains (x, y), or None.

    Bboxes are pairwise disjoint and sit inside their grid cell, so the
    lookup reduces to one cell check.
    """
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise ValueError(f"point out of range: ({x}, {y})")
    rows, cols = scene.grid
    cell = (min(int(y * rows), rows - 1), min(int(x * cols), cols - 1))
    for obj in scene.objects:
        if obj.cell == cell:
            x1, y1, x2, y2 = obj.bbox
            if x1 <= x <= x2 and y1 <= y <= y2:
                return obj.id
            return None
    return None


def scene_to_dict(scene: Scene) -> dict:
    return {
        "scene_id": scene.scene_id,
        "grid": list(scene.grid),
        "seed": scene.seed,
        "objects": [
            {
                "id": o.id,
                "shape": o.shape,
                "color": o.color,
                "size": o.size,
                "cell": list(o.cell),
                "bbox": list(o.bbox),
            }
            for o in scene.objects
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    objects = tuple(
        ObjectSpec(
            id=o["id"],
            shape=o["shape"],
            color=o["color"],
            size=o["size"],
            cell=tuple(o["cell"]),
            bbox=tuple(o["bbox"]),
        )
        for o in data["objects"]
    )
    return Scene(
        scene_id=data["scene_id"],
        grid=tuple(data["grid"]),
        seed=data["seed"],
        objects=objects,
    )


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), sort_keys=True)


def scene_from_json(text: str) -> Scene:
    return scene_from_dict(json.loads(text))


def image_to_png(image: RenderedImage) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image.pixels).save(buf, format="PNG")
    return buf.getvalue()
