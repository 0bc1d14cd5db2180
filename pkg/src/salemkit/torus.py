"""Geometry on the flat torus T^d = R^d / Z^d.

Points are numpy arrays with coordinates in [0, 1); all distances use the
wrap-around metric, so nothing here ever sees a boundary.
"""

import csv
import json
import os

import numpy as np

__all__ = [
    "wrap",
    "tdist",
    "pairwise_tdist",
    "hausdorff_distance",
    "Cube",
    "double_cube",
    "cube_distance",
    "save_points",
    "load_points",
]


def wrap(x):
    """Reduce coordinates to the fundamental domain [0, 1)."""
    return np.asarray(x, dtype=float) % 1.0


def tdist(x, y):
    """Torus distance between points (broadcasting over leading axes).

    Parameters
    ----------
    x, y : array_like, shape (..., d)
        Points on T^d.  The last axis is the coordinate axis.

    Returns
    -------
    ndarray
        Euclidean length of the shortest wrap-around displacement,
        ``sqrt(sum_j min_k |x_j - y_j + k|^2)`` with k in {-1, 0, 1}.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(
            f"dimension mismatch: {x.shape[-1]} vs {y.shape[-1]}"
        )
    delta = np.abs(x % 1.0 - y % 1.0)
    delta = np.minimum(delta, 1.0 - delta)
    return np.sqrt(np.sum(delta * delta, axis=-1))


def pairwise_tdist(a, b, chunk=2_000_000):
    """All-pairs torus distances, shape (len(a), len(b)).

    Chunks the computation so the temporary never exceeds ``chunk`` entries.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch between point sets")
    na, nb = len(a), len(b)
    out = np.empty((na, nb))
    rows = max(1, chunk // max(nb, 1))
    for i in range(0, na, rows):
        out[i : i + rows] = tdist(a[i : i + rows, None, :], b[None, :, :])
    return out


def _directed_sup_inf(a, b, chunk):
    """sup_{x in a} inf_{y in b} tdist(x, y), chunked over a."""
    best = 0.0
    rows = max(1, chunk // max(len(b), 1))
    for i in range(0, len(a), rows):
        d = tdist(a[i : i + rows, None, :], b[None, :, :])
        best = max(best, float(d.min(axis=1).max()))
    return best


def hausdorff_distance(a, b, chunk=2_000_000):
    """Hausdorff distance between two finite subsets of T^d.

    ``max(sup_a inf_b, sup_b inf_a)`` in the torus metric.  Either argument
    may be a single point (shape ``(d,)``) or a set (shape ``(N, d)``).
    Empty sets are rejected.
    """
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if len(a) == 0 or len(b) == 0:
        raise ValueError("Hausdorff distance of an empty set is undefined")
    if a.shape[1] != b.shape[1]:
        raise ValueError("dimension mismatch between point sets")
    return max(_directed_sup_inf(a, b, chunk), _directed_sup_inf(b, a, chunk))


class Cube:
    """Axis-parallel cube on T^d given by a corner and a common sidelength.

    The cube is the product of wrap-around intervals
    ``[corner_j, corner_j + side)``.  ``side`` must lie in (0, 1].
    """

    __slots__ = ("corner", "side")

    def __init__(self, corner, side):
        corner = wrap(np.atleast_1d(corner))
        side = float(side)
        if not 0.0 < side <= 1.0:
            raise ValueError(f"cube sidelength must be in (0, 1], got {side}")
        self.corner = corner
        self.side = side

    @property
    def d(self):
        return self.corner.shape[0]

    @property
    def center(self):
        return wrap(self.corner + 0.5 * self.side)

    @property
    def volume(self):
        return self.side ** self.d

    def contains(self, points, pad=0.0):
        """Boolean mask of points inside the cube grown by ``pad`` per side."""
        pts = np.atleast_2d(wrap(points))
        if pts.shape[1] != self.d:
            raise ValueError("dimension mismatch")
        # signed offset from corner, wrapped to [0, 1)
        off = (pts - self.corner[None, :]) % 1.0
        hi = min(self.side + pad, 1.0)
        inside = (off < hi) | (off > 1.0 - pad)
        return inside.all(axis=1)

    def sample(self, rng, size):
        """Uniform sample of ``size`` points from the cube."""
        u = rng.random((size, self.d))
        return wrap(self.corner[None, :] + u * self.side)

    def __repr__(self):
        return f"Cube(corner={self.corner!r}, side={self.side})"


def double_cube(cube):
    """Concentric cube with doubled sidelength, capped at 1."""
    side = min(2.0 * cube.side, 1.0)
    return Cube(cube.center - 0.5 * side, side)


def cube_distance(c1, c2):
    """Torus distance between two cubes (0 if they intersect)."""
    if c1.d != c2.d:
        raise ValueError("dimension mismatch")
    gaps = np.zeros(c1.d)
    for j in range(c1.d):
        dc = abs(c1.center[j] - c2.center[j])
        dc = min(dc, 1.0 - dc)
        gaps[j] = max(0.0, dc - 0.5 * (c1.side + c2.side))
    return float(np.sqrt(np.sum(gaps * gaps)))


def save_points(path, points, weights=None):
    """Write a weighted point set as CSV with header x0,...,x{d-1},w."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (n,):
        raise ValueError("weights must be one per point")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x{j}" for j in range(d)] + ["w"])
        for row, w in zip(points, weights):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(w))])


def load_points(path):
    """Read a CSV written by :func:`save_points`; returns (points, weights)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if not header or header[-1] != "w" or header[0] != "x0":
            raise ValueError(f"{path}: not a point-set CSV (bad header {header})")
        d = len(header) - 1
        pts, ws = [], []
        for row in reader:
            if len(row) != d + 1:
                raise ValueError(f"{path}: row of length {len(row)}, expected {d + 1}")
            pts.append([float(v) for v in row[:d]])
            ws.append(float(row[d]))
    return np.asarray(pts), np.asarray(ws)


def save_sidecar(path, payload):
    """Write a JSON sidecar next to a data file (``path + '.json'``)."""
    with open(f"{path}.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def load_sidecar(path):
    side = f"{path}.json"
    if not os.path.exists(side):
        return {}
    with open(side) as fh:
        return json.load(fh)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    raise TypeError(f"not JSON serializable: {type(obj)!r}")
