"""Image to SPN conversion for 2D shape identification.

Pipeline: threshold the grayscale image, trace 8-connected borders (outer borders run
clockwise, hole borders counter-clockwise in image coordinates with y pointing down),
simplify each border into a polygon, keep the corners where the x or y gradient sign
flips, and relate those corners through eight keyed state networks.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
from skimage.measure import approximate_polygon as _simplify_chain

from .errors import ContractViolationError, DatasetFormatError, DatasetNotFoundError
from .spn import StatePolynetwork
from .trace import varsel_trace

logger = logging.getLogger(__name__)

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
SPLIT_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}

SN_KEYS = (
    "contour_h",
    "contour_v",
    "inner_h",
    "inner_v",
    "outer_h",
    "outer_v",
    "all_h",
    "all_v",
)
SEGMENT_STEP = 0.25
ENDPOINT_MARGIN = 1.0

# clockwise on screen, (row, col) offsets starting east
_DIRECTIONS = ((0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))

Point = tuple[int, int]
PathLike = Union[str, Path]


@dataclass
class MnistDataset:
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def indices_of(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels == label)


def mnist_paths(data_dir: PathLike, split: str = "train") -> tuple[Path, Path]:
    if split not in SPLIT_FILES:
        raise ContractViolationError(f"unknown split {split!r}")
    images, labels = SPLIT_FILES[split]
    return Path(data_dir) / images, Path(data_dir) / labels


def _read_idx(path: Path, magic: int, ndim: int) -> np.ndarray:
    data = path.read_bytes()
    header = 4 + 4 * ndim
    if len(data) < header:
        raise DatasetFormatError(f"{path}: truncated header ({len(data)} bytes)")
    found = int.from_bytes(data[:4], "big")
    if found != magic:
        raise DatasetFormatError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = tuple(int(d) for d in np.frombuffer(data, dtype=">u4", count=ndim, offset=4))
    body = np.frombuffer(data, dtype=np.uint8, offset=header)
    expected = int(np.prod(dims))
    if body.size != expected:
        raise DatasetFormatError(
            f"{path}: {body.size} data bytes for dimensions {dims}, expected {expected}"
        )
    return body.reshape(dims)


@varsel_trace(name="vision.load_mnist")
def load_mnist(images_path: PathLike, labels_path: PathLike) -> MnistDataset:
    """Read an IDX image/label file pair into uint8 arrays."""
    images_path, labels_path = Path(images_path), Path(labels_path)
    missing = [str(p) for p in (images_path, labels_path) if not p.is_file()]
    if missing:
        raise DatasetNotFoundError(
            f"MNIST files not found: {', '.join(missing)}; set VARSEL_DATA_DIR or --data-dir"
        )
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise DatasetFormatError(
            f"{images.shape[0]} images but {labels.shape[0]} labels "
            f"({images_path.name}, {labels_path.name})"
        )
    if labels.size and labels.max() > 9:
        raise DatasetFormatError(f"{labels_path}: label {int(labels.max())} outside 0-9")
    logger.info("loaded %d images of %s from %s", len(labels), images.shape[1:], images_path)
    return MnistDataset(images, labels)


@dataclass(frozen=True, eq=False)
class BinaryImage:
    bits: np.ndarray

    @property
    def height(self) -> int:
        return int(self.bits.shape[0])

    @property
    def width(self) -> int:
        return int(self.bits.shape[1])

    def value_at(self, x: int, y: int) -> int:
        if 0 <= x < self.width and 0 <= y < self.height:
            return int(self.bits[y, x])
        return 0


def binarize(image: np.ndarray, threshold: float = 0.5) -> BinaryImage:
    """Foreground is every pixel at or above ``threshold * 255``."""
    if not 0 < threshold < 1:
        raise ContractViolationError(f"threshold {threshold} outside (0, 1)")
    image = np.asarray(image)
    if image.ndim != 2:
        raise ContractViolationError(f"expected a 2D image, got shape {image.shape}")
    return BinaryImage((image.astype(float) >= threshold * 255).astype(np.uint8))


@dataclass
class Contour:
    """One traced border as pixel coordinates ``(x, y)``."""

    points: list[Point]
    outer: bool
    parent: int = -1
    closed: bool = True

    @property
    def signed_area(self) -> float:
        return _shoelace(self.points)

    @property
    def orientation(self) -> str:
        area = self.signed_area
        if area == 0:
            return "degenerate"
        return "CW" if area > 0 else "CCW"


def _shoelace(points) -> float:
    # positive for clockwise traversal when y points down
    if len(points) < 3:
        return 0.0
    pts = np.asarray(points, dtype=float)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _follow_border(f: np.ndarray, i: int, j: int, i2: int, j2: int, nbd: int) -> list[Point]:
    start = _DIRECTIONS.index((i2 - i, j2 - j))
    first = None
    for k in range(8):
        di, dj = _DIRECTIONS[(start + k) % 8]
        if f[i + di, j + dj] != 0:
            first = (i + di, j + dj)
            break
    if first is None:
        f[i, j] = -nbd
        return [(i, j)]

    (i2, j2), (i3, j3) = first, (i, j)
    points = []
    while True:
        points.append((i3, j3))
        back = _DIRECTIONS.index((i2 - i3, j2 - j3))
        east_blank = False
        for k in range(1, 9):
            index = (back - k) % 8
            di, dj = _DIRECTIONS[index]
            if f[i3 + di, j3 + dj] != 0:
                i4, j4 = i3 + di, j3 + dj
                break
            if index == 0:
                east_blank = True
        if east_blank:
            f[i3, j3] = -nbd
        elif f[i3, j3] == 1:
            f[i3, j3] = nbd
        if (i4, j4) == (i, j) and (i3, j3) == first:
            return points
        (i2, j2), (i3, j3) = (i3, j3), (i4, j4)


def extract_contours(image: BinaryImage) -> list[Contour]:
    """Border following with hierarchy over 8-connected foreground.

    Outer borders are returned clockwise and hole borders counter-clockwise. ``parent``
    is the index of the enclosing border, or -1 at the top level.
    """
    f = np.pad(image.bits.astype(np.int32), 1)
    rows, cols = f.shape
    # border number -> (is outer, parent border number); 1 is the image frame
    borders: dict[int, tuple[bool, int]] = {1: (False, 0)}
    index_of: dict[int, int] = {}
    contours: list[Contour] = []
    nbd = 1
    for i in range(1, rows - 1):
        lnbd = 1
        for j in range(1, cols - 1):
            value = f[i, j]
            start = None
            if value == 1 and f[i, j - 1] == 0:
                start, outer = (i, j - 1), True
            elif value >= 1 and f[i, j + 1] == 0:
                start, outer = (i, j + 1), False
                if value > 1:
                    lnbd = int(value)
            if start is not None:
                nbd += 1
                lnbd_outer, lnbd_parent = borders[lnbd]
                parent = lnbd_parent if outer == lnbd_outer else lnbd
                borders[nbd] = (outer, parent)
                pixels = _follow_border(f, i, j, *start, nbd)
                points = [(c - 1, r - 1) for r, c in pixels]
                area = _shoelace(points)
                if (outer and area < 0) or (not outer and area > 0):
                    points = [points[0]] + points[:0:-1]
                index_of[nbd] = len(contours)
                contours.append(Contour(points, outer, index_of.get(parent, -1)))
            if f[i, j] not in (0, 1):
                lnbd = abs(int(f[i, j]))
    return contours


def approximate_polygon(contour: Contour, epsilon_fraction: float = 0.01) -> Optional[list[Point]]:
    """Closed Ramer-Douglas-Peucker simplification with tolerance relative to arc length.

    Each half of the border, split at the point farthest from the start, goes through
    ``skimage.measure.approximate_polygon``.

    Returns None for degenerate contours. Vertex order follows the contour.
    """
    points = contour.points
    if len(points) < 3:
        logger.info("skipping degenerate contour with %d point(s) at %s", len(points), points[:1])
        return None
    pts = np.asarray(points, dtype=float)
    arc_length = float(np.sum(np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)))
    epsilon = epsilon_fraction * arc_length

    far = int(np.argmax(np.linalg.norm(pts - pts[0], axis=1)))
    if far == 0:
        logger.info("skipping contour collapsed onto %s", points[0])
        return None
    first = _simplify_chain(pts[: far + 1], tolerance=epsilon)
    second = _simplify_chain(np.vstack([pts[far:], pts[:1]]), tolerance=epsilon)
    vertices = [(int(x), int(y)) for x, y in np.vstack([first[:-1], second[:-1]])]

    polygon = [v for k, v in enumerate(vertices) if v != vertices[k - 1]]
    if len(polygon) < 2:
        logger.info("skipping contour simplified to %d vertex", len(polygon))
        return None
    return polygon


@dataclass(frozen=True)
class CornerNode:
    position: Point
    convex: bool
    x_change: Optional[tuple[int, int]] = None
    y_change: Optional[tuple[int, int]] = None

    @property
    def type_label(self) -> str:
        parts = ["cx" if self.convex else "cc"]
        for axis, change in (("x", self.x_change), ("y", self.y_change)):
            if change is not None:
                parts.extend(f"{axis}{'pos' if s > 0 else 'neg'}" for s in change)
        return "_".join(parts)


def _edge_gradients(polygon: list[Point]) -> tuple[np.ndarray, np.ndarray]:
    pts = np.asarray(polygon, dtype=int)
    edges = np.roll(pts, -1, axis=0) - pts
    gradients = np.stack([np.sign(-edges[:, 1]), np.sign(edges[:, 0])], axis=1)
    return edges, gradients


def _nearest_sign(signs: np.ndarray, start: int, step: int) -> int:
    n = len(signs)
    for t in range(n):
        s = int(signs[(start + step * t) % n])
        if s != 0:
            return s
    return 0


def corner_nodes(polygon: list[Point]) -> list[CornerNode]:
    """Corners where the x or y gradient sign differs between the incoming and outgoing side.

    Edges parallel to an axis have no gradient along it and are skipped when looking for
    the neighbouring sign.
    """
    edges, gradients = _edge_gradients(polygon)
    nodes = []
    for i, position in enumerate(polygon):
        changes = []
        for axis in (0, 1):
            before = _nearest_sign(gradients[:, axis], i - 1, -1)
            after = _nearest_sign(gradients[:, axis], i, 1)
            changes.append((before, after) if before and after and before != after else None)
        if changes == [None, None]:
            continue
        e_in, e_out = edges[i - 1], edges[i]
        convex = int(e_in[0]) * int(e_out[1]) - int(e_in[1]) * int(e_out[0]) >= 0
        nodes.append(CornerNode((int(position[0]), int(position[1])), convex, *changes))
    return nodes


def segment_region(image: BinaryImage, p: Point, q: Point) -> Optional[int]:
    """1 if the segment stays in foreground, 0 if in background, else None.

    Samples closer than ``ENDPOINT_MARGIN`` to either end are ignored.
    """
    a, b = np.asarray(p, dtype=float), np.asarray(q, dtype=float)
    length = float(np.linalg.norm(b - a))
    s = np.arange(0.0, length + 1e-9, SEGMENT_STEP)
    s = s[(s >= ENDPOINT_MARGIN) & (s <= length - ENDPOINT_MARGIN)]
    if s.size == 0:
        return None
    samples = a + (s / length)[:, None] * (b - a)
    pixels = np.floor(samples + 0.5).astype(int)
    values = {image.value_at(int(x), int(y)) for x, y in pixels}
    return values.pop() if len(values) == 1 else None


def _ordered(positions: dict[int, Point], u: int, v: int, axis: int) -> Optional[tuple[int, int]]:
    cu, cv = positions[u][axis], positions[v][axis]
    if cu < cv:
        return (u, v)
    if cv < cu:
        return (v, u)
    return None


def build_spn(polygons: list[list[Point]], image: BinaryImage) -> StatePolynetwork:
    """Nodes are gradient-change corners; edges order node pairs along x (``_h``) or y (``_v``)."""
    spn = StatePolynetwork(SN_KEYS)
    positions: dict[int, Point] = {}
    rings: list[list[int]] = []
    for polygon in polygons:
        ring = []
        for node in corner_nodes(polygon):
            node_id = len(positions)
            positions[node_id] = node.position
            spn.add_node(node_id, node.type_label, node.position)
            ring.append(node_id)
        rings.append(ring)

    def relate(family: str, u: int, v: int) -> None:
        for suffix, axis in (("h", 0), ("v", 1)):
            pair = _ordered(positions, u, v, axis)
            if pair is not None:
                spn.add_edge(f"{family}_{suffix}", *pair)

    for ring in rings:
        if len(ring) > 1:
            for k, u in enumerate(ring):
                relate("contour", u, ring[(k + 1) % len(ring)])

    ids = sorted(positions)
    for k, u in enumerate(ids):
        for v in ids[k + 1 :]:
            relate("all", u, v)
            region = segment_region(image, positions[u], positions[v])
            if region == 1:
                relate("inner", u, v)
            elif region == 0:
                relate("outer", u, v)
    return spn


def image_to_spn(
    image: np.ndarray, threshold: float = 0.5, epsilon_fraction: float = 0.01
) -> StatePolynetwork:
    bits = binarize(image, threshold)
    polygons = []
    for contour in extract_contours(bits):
        polygon = approximate_polygon(contour, epsilon_fraction)
        if polygon is not None:
            polygons.append(polygon)
    return build_spn(polygons, bits)
