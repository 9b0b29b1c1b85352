"""Compact base spaces with quadrature grids, spectral bases, and Green kernels.

Supported kinds: unit circle (arc-length coordinate, circumference 2*pi),
flat unit torus [0,1)^2, unit sphere in R^3, and Euclidean boxes in
dimension <= 2.  Manifold spaces carry a Laplace-Beltrami eigenbasis that is
orthonormal for the normalized reference measure; boxes carry only a grid
and a reference density.

The spectral Green kernel for a background charge ``L`` (a signed density of
total mass 1 against the reference measure) is

    G(x, y) = H(x, y) - phi(x) - phi(y) + c,

where ``H`` is the zero-mean Green kernel of the reference measure,
``phi(x) = integral of H(x, .) against L`` and the constant ``c`` is chosen
so that ``integral of G(x, .) against L`` vanishes for every ``x``.
"""

import io
import json
import hashlib
import math

import numpy as np
from scipy.special import lpmv

from .errors import CacheFormatError, DiagonalSingularityError, SpaceError

__all__ = [
    "Space",
    "BackgroundCharge",
    "GreenModel",
    "build_space",
    "green_evaluate",
    "green_identity_residual",
]

_SPACE_MAGIC = "GIBBSLAB-SPACE"
_GREEN_MAGIC = "GIBBSLAB-GREEN"
_CACHE_VERSION = 1

_MIN_NODES = 8


class Space:
    """Quadrature grid plus (for manifolds) a spectral basis.

    Attributes
    ----------
    kind : str
        One of ``circle``, ``torus``, ``sphere``, ``box``.
    dim : int
        Intrinsic dimension.
    nodes : ndarray, shape (n_nodes, point_dim)
        Grid node coordinates (angle for the circle, [0,1)^2 for the torus,
        unit vectors for the sphere, Cartesian coordinates for boxes).
    weights : ndarray, shape (n_nodes,)
        Quadrature weights for the normalized reference measure; sum to 1.
    cell_volumes : ndarray, shape (n_nodes,)
        Physical (unnormalized) volume of each node cell.
    eigenvalues : ndarray or None
        Nondecreasing Laplace-Beltrami eigenvalues, first entry 0.
    basis_values : ndarray or None, shape (n_nodes, n_basis)
        Basis functions tabulated at the nodes; column 0 is the constant 1.
    """

    def __init__(self, kind, dim, nodes, weights, cell_volumes, params,
                 eigenvalues=None, basis_values=None, mode_index=None,
                 density_values=None):
        self.kind = kind
        self.dim = dim
        self.nodes = np.asarray(nodes, dtype=float)
        self.weights = np.asarray(weights, dtype=float)
        self.cell_volumes = np.asarray(cell_volumes, dtype=float)
        self.params = dict(params)
        self.eigenvalues = None if eigenvalues is None else np.asarray(eigenvalues, float)
        self.basis_values = None if basis_values is None else np.asarray(basis_values, float)
        self.mode_index = mode_index
        self.density_values = None if density_values is None else np.asarray(density_values, float)

    # -- basic geometry ----------------------------------------------------

    @property
    def n_nodes(self):
        return self.nodes.shape[0]

    @property
    def point_dim(self):
        return self.nodes.shape[1]

    @property
    def has_basis(self):
        return self.basis_values is not None

    @property
    def n_basis(self):
        return 0 if self.basis_values is None else self.basis_values.shape[1]

    @property
    def basis_order(self):
        return self.params.get("basis_order")

    @property
    def volume(self):
        return {"circle": 2.0 * np.pi, "torus": 1.0, "sphere": 4.0 * np.pi}.get(
            self.kind, float(np.prod([b - a for a, b in self.params.get("bounds", [])]))
        )

    @property
    def diameter(self):
        if self.kind == "circle":
            return np.pi
        if self.kind == "torus":
            return math.sqrt(0.5)
        if self.kind == "sphere":
            return np.pi
        spans = np.array([b - a for a, b in self.params["bounds"]], float)
        return float(np.linalg.norm(spans))

    def _as_points(self, x):
        pts = np.asarray(x, dtype=float)
        if pts.ndim == 1 and pts.shape[0] == self.point_dim:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[1] != self.point_dim:
            raise SpaceError(
                f"expected points of dimension {self.point_dim}, got shape {pts.shape}"
            )
        return pts

    def geodesic(self, x, y):
        """Pairwise geodesic distance matrix between point arrays."""
        a = self._as_points(x)
        b = self._as_points(y)
        if self.kind == "circle":
            d = np.abs(a[:, None, 0] - b[None, :, 0]) % (2.0 * np.pi)
            return np.minimum(d, 2.0 * np.pi - d)
        if self.kind == "torus":
            d = np.abs(a[:, None, :] - b[None, :, :]) % 1.0
            d = np.minimum(d, 1.0 - d)
            return np.sqrt((d ** 2).sum(axis=-1))
        if self.kind == "sphere":
            dots = np.clip(a @ b.T, -1.0, 1.0)
            return np.arccos(dots)
        diff = a[:, None, :] - b[None, :, :]
        return np.sqrt((diff ** 2).sum(axis=-1))

    def chord(self, x, y):
        """Pairwise embedding (chord) distance; equals geodesic on the torus."""
        a = self._as_points(x)
        b = self._as_points(y)
        if self.kind == "circle":
            d = self.geodesic(a, b)
            return 2.0 * np.sin(0.5 * d)
        if self.kind in ("sphere", "box"):
            diff = a[:, None, :] - b[None, :, :]
            return np.sqrt((diff ** 2).sum(axis=-1))
        return self.geodesic(a, b)

    # -- spectral basis ----------------------------------------------------

    def evaluate_basis(self, points):
        """Tabulate all basis functions at arbitrary points, shape (p, n_basis)."""
        if not self.has_basis:
            raise SpaceError(f"space kind {self.kind!r} carries no spectral basis")
        pts = self._as_points(points)
        if self.kind == "circle":
            return _circle_basis(pts[:, 0], self.params["basis_order"])
        if self.kind == "torus":
            return _torus_basis(pts, self.mode_index)
        return _sphere_basis(pts, self.params["basis_order"])

    def reference_density(self, points):
        """Reference density against the box coordinate measure (boxes only)."""
        if self.kind != "box":
            return np.ones(self._as_points(points).shape[0])
        pts = self._as_points(points)
        fn = self.params.get("_density_fn")
        if fn is None:
            return np.full(pts.shape[0], self.params["_density_norm"])
        return fn(pts) * self.params["_density_norm"]

    def contains(self, points):
        """Boolean mask for points inside the space's chart (boxes only)."""
        pts = self._as_points(points)
        if self.kind != "box":
            return np.ones(pts.shape[0], dtype=bool)
        bounds = np.asarray(self.params["bounds"], float)
        ok = (pts >= bounds[:, 0]) & (pts <= bounds[:, 1])
        return ok.all(axis=1)

    def sample_points(self, rng, count):
        """Draw ``count`` points from the reference measure."""
        if self.kind == "circle":
            return rng.uniform(0.0, 2.0 * np.pi, size=(count, 1))
        if self.kind == "torus":
            return rng.uniform(0.0, 1.0, size=(count, 2))
        if self.kind == "sphere":
            v = rng.normal(size=(count, 3))
            return v / np.linalg.norm(v, axis=1, keepdims=True)
        idx = rng.choice(self.n_nodes, size=count, p=self.weights)
        bounds = np.asarray(self.params["bounds"], float)
        res = self.params["resolution"]
        step = (bounds[:, 1] - bounds[:, 0]) / res
        jitter = rng.uniform(-0.5, 0.5, size=(count, self.dim)) * step
        return self.nodes[idx] + jitter

    # -- serialization -------------------------------------------------------

    def save(self, path):
        """Write a self-describing binary cache of the space."""
        payload = {
            "nodes": self.nodes,
            "weights": self.weights,
            "cell_volumes": self.cell_volumes,
        }
        if self.eigenvalues is not None:
            payload["eigenvalues"] = self.eigenvalues
            payload["basis_values"] = self.basis_values
        if self.mode_index is not None:
            payload["mode_index"] = np.asarray(self.mode_index, dtype=np.int64)
        if self.density_values is not None:
            payload["density_values"] = self.density_values
        header = {
            "magic": _SPACE_MAGIC,
            "version": _CACHE_VERSION,
            "kind": self.kind,
            "dim": self.dim,
            "params": {k: v for k, v in self.params.items() if not k.startswith("_")},
        }
        payload["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8)
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            header = json.loads(bytes(data["header"].tobytes()).decode())
            if header.get("magic") != _SPACE_MAGIC:
                raise CacheFormatError(f"{path}: not a space cache (bad magic number)")
            if header.get("version") != _CACHE_VERSION:
                raise CacheFormatError(
                    f"{path}: cache version {header.get('version')} != {_CACHE_VERSION}"
                )
            params = header["params"]
            if header["kind"] == "box" and params.get("density"):
                params["_density_fn"] = _compile_density(params["density"], header["dim"])
                params["_density_norm"] = params["density_norm"]
            elif header["kind"] == "box":
                params["_density_norm"] = params["density_norm"]
            return cls(
                header["kind"], header["dim"], data["nodes"], data["weights"],
                data["cell_volumes"], params,
                eigenvalues=data["eigenvalues"] if "eigenvalues" in data else None,
                basis_values=data["basis_values"] if "basis_values" in data else None,
                mode_index=data["mode_index"] if "mode_index" in data else None,
                density_values=data["density_values"] if "density_values" in data else None,
            )


# -- per-kind construction ---------------------------------------------------


def _circle_basis(theta, order):
    cols = [np.ones_like(theta)]
    for m in range(1, order + 1):
        cols.append(np.sqrt(2.0) * np.cos(m * theta))
        cols.append(np.sqrt(2.0) * np.sin(m * theta))
    return np.stack(cols, axis=1)


def _build_circle(resolution, basis_order):
    theta = 2.0 * np.pi * np.arange(resolution) / resolution
    nodes = theta[:, None]
    weights = np.full(resolution, 1.0 / resolution)
    cells = np.full(resolution, 2.0 * np.pi / resolution)
    eigs = [0.0]
    for m in range(1, basis_order + 1):
        eigs += [float(m * m)] * 2
    basis = _circle_basis(theta, basis_order)
    return Space("circle", 1, nodes, weights, cells,
                 {"resolution": resolution, "basis_order": basis_order},
                 eigenvalues=eigs, basis_values=basis)


def _torus_modes(order):
    """Canonical half of the nonzero frequency lattice, sorted by eigenvalue."""
    modes = []
    for m1 in range(0, order + 1):
        for m2 in range(-order, order + 1):
            if m1 == 0 and m2 <= 0:
                continue
            modes.append((m1, m2))
    modes.sort(key=lambda m: (m[0] ** 2 + m[1] ** 2, m))
    return modes


def _torus_basis(points, mode_index):
    u = points
    cols = [np.ones(u.shape[0])]
    for m1, m2 in mode_index:
        phase = 2.0 * np.pi * (m1 * u[:, 0] + m2 * u[:, 1])
        cols.append(np.sqrt(2.0) * np.cos(phase))
        cols.append(np.sqrt(2.0) * np.sin(phase))
    return np.stack(cols, axis=1)


def _build_torus(resolution, basis_order):
    side = np.arange(resolution) / resolution
    uu, vv = np.meshgrid(side, side, indexing="ij")
    nodes = np.column_stack([uu.ravel(), vv.ravel()])
    n = nodes.shape[0]
    weights = np.full(n, 1.0 / n)
    cells = np.full(n, 1.0 / n)
    modes = _torus_modes(basis_order)
    eigs = [0.0]
    for m1, m2 in modes:
        lam = 4.0 * np.pi ** 2 * (m1 ** 2 + m2 ** 2)
        eigs += [lam, lam]
    basis = _torus_basis(nodes, modes)
    return Space("torus", 2, nodes, weights, cells,
                 {"resolution": resolution, "basis_order": basis_order},
                 eigenvalues=eigs, basis_values=basis, mode_index=modes)


def _sphere_norm(l, m):
    """Normalization making the real harmonics orthonormal for dA/(4*pi)."""
    ratio = 1.0
    for k in range(l - m + 1, l + m + 1):
        ratio *= k
    return math.sqrt((2 * l + 1) / ratio)


def _sphere_basis(points, order):
    x, y, z = points[:, 0], points[:, 1], points[:, 2]
    ct = np.clip(z, -1.0, 1.0)
    phi = np.arctan2(y, x)
    cols = [np.ones(points.shape[0])]
    for l in range(1, order + 1):
        for m in range(-l, l + 1):
            am = abs(m)
            leg = lpmv(am, l, ct)
            norm = _sphere_norm(l, am)
            if m == 0:
                cols.append(norm * leg)
            elif m > 0:
                cols.append(math.sqrt(2.0) * norm * leg * np.cos(am * phi))
            else:
                cols.append(math.sqrt(2.0) * norm * leg * np.sin(am * phi))
    return np.stack(cols, axis=1)


def _icosahedron():
    g = (1.0 + math.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, g, 0], [1, g, 0], [-1, -g, 0], [1, -g, 0],
        [0, -1, g], [0, 1, g], [0, -1, -g], [0, 1, -g],
        [g, 0, -1], [g, 0, 1], [-g, 0, -1], [-g, 0, 1],
    ], dtype=float)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    return verts, faces


def _subdivide(verts, faces):
    verts = list(verts)
    cache = {}

    def midpoint(i, j):
        key = (min(i, j), max(i, j))
        if key not in cache:
            v = verts[i] + verts[j]
            verts.append(v / np.linalg.norm(v))
            cache[key] = len(verts) - 1
        return cache[key]

    out = []
    for a, b, c in faces:
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        out += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
    return verts, out


def _triangle_area(a, b, c):
    """Spherical triangle area via L'Huilier's formula."""
    sa = math.acos(max(-1.0, min(1.0, float(np.dot(b, c)))))
    sb = math.acos(max(-1.0, min(1.0, float(np.dot(a, c)))))
    sc = math.acos(max(-1.0, min(1.0, float(np.dot(a, b)))))
    s = 0.5 * (sa + sb + sc)
    t = (math.tan(0.5 * s) * math.tan(0.5 * (s - sa))
         * math.tan(0.5 * (s - sb)) * math.tan(0.5 * (s - sc)))
    return 4.0 * math.atan(math.sqrt(max(t, 0.0)))


def _build_sphere(level, basis_order):
    verts, faces = _icosahedron()
    for _ in range(level):
        verts, faces = _subdivide(verts, faces)
    nodes = np.asarray(verts)
    areas = np.zeros(nodes.shape[0])
    for a, b, c in faces:
        t = _triangle_area(nodes[a], nodes[b], nodes[c]) / 3.0
        areas[a] += t
        areas[b] += t
        areas[c] += t
    weights = areas / areas.sum()
    if (2 * basis_order + 1) ** 2 > nodes.shape[0]:
        raise SpaceError(
            f"sphere level {level} ({nodes.shape[0]} nodes) cannot resolve "
            f"basis order {basis_order} (needs {(2 * basis_order + 1) ** 2} nodes)"
        )
    # Correct the area weights so that harmonics up to degree 2*basis_order
    # integrate exactly; this makes the grid Gram matrix of the basis the
    # identity up to round-off.
    moments = _sphere_basis(nodes, 2 * basis_order)
    target = np.zeros(moments.shape[1])
    target[0] = 1.0
    gram = moments.T * weights[None, :]
    resid = target - gram.sum(axis=1)
    correction = moments @ np.linalg.solve(moments.T @ moments, resid)
    weights = weights + correction
    if weights.min() <= 0.0:
        raise SpaceError(
            f"sphere quadrature correction produced nonpositive weights at level {level}; "
            "raise the subdivision level or lower the basis order"
        )
    weights = weights / weights.sum()
    cells = weights * 4.0 * np.pi
    eigs = [0.0]
    for l in range(1, basis_order + 1):
        eigs += [float(l * (l + 1))] * (2 * l + 1)
    basis = _sphere_basis(nodes, basis_order)
    return Space("sphere", 2, nodes, weights, cells,
                 {"resolution": level, "basis_order": basis_order},
                 eigenvalues=eigs, basis_values=basis)


def _compile_density(expr, dim):
    from .expressions import compile_expression

    names = ["x"] if dim == 1 else ["x", "y"]
    fn = compile_expression(expr, names)

    def density(points):
        cols = [points[:, i] for i in range(dim)]
        return fn(*cols)

    return density


def _build_box(resolution, bounds, density):
    bounds = [tuple(map(float, b)) for b in bounds]
    dim = len(bounds)
    if dim not in (1, 2):
        raise SpaceError(f"boxes support dimension 1 or 2, got {dim}")
    for a, b in bounds:
        if not b > a:
            raise SpaceError(f"degenerate box bounds ({a}, {b})")
    axes = [a + (b - a) * (np.arange(resolution) + 0.5) / resolution for a, b in bounds]
    if dim == 1:
        nodes = axes[0][:, None]
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        nodes = np.column_stack([xx.ravel(), yy.ravel()])
    cell = float(np.prod([(b - a) / resolution for a, b in bounds]))
    cells = np.full(nodes.shape[0], cell)
    params = {"resolution": resolution, "bounds": bounds, "density": density}
    if density:
        fn = _compile_density(density, dim)
        raw = fn(nodes)
        if np.any(raw <= 0.0) or not np.all(np.isfinite(raw)):
            raise SpaceError("box reference density must be finite and positive on the grid")
        params["_density_fn"] = fn
    else:
        raw = np.ones(nodes.shape[0])
    total = float((raw * cells).sum())
    weights = raw * cells / total
    params["density_norm"] = 1.0 / total
    params["_density_norm"] = 1.0 / total
    return Space("box", dim, nodes, weights, cells, params,
                 density_values=raw / total)


def build_space(kind, resolution, basis_order=None, bounds=None, density=None):
    """Construct a quadrature-ready space.

    ``resolution`` is the node count for the circle, the per-axis node count
    for the torus and boxes, and the icosahedral subdivision level for the
    sphere.  ``basis_order`` is the maximal frequency (circle/torus) or
    spherical-harmonic degree; boxes take none.
    """
    if kind not in ("circle", "torus", "sphere", "box"):
        raise SpaceError(f"unknown space kind {kind!r}")
    if kind == "box":
        if basis_order is not None:
            raise SpaceError("boxes carry no spectral basis; basis_order must be omitted")
        if bounds is None:
            raise SpaceError("boxes need explicit bounds")
        if resolution < _MIN_NODES:
            raise SpaceError(f"resolution {resolution} below minimum {_MIN_NODES}")
        return _build_box(resolution, bounds, density)
    if bounds is not None or density is not None:
        raise SpaceError(f"bounds/density only apply to boxes, not {kind!r}")
    if kind == "sphere":
        if resolution < 0 or resolution > 6:
            raise SpaceError(f"sphere subdivision level must be in 0..6, got {resolution}")
        if basis_order is None:
            basis_order = 12
        n_nodes = 10 * 4 ** resolution + 2
        if n_nodes < _MIN_NODES:
            raise SpaceError(f"resolution {resolution} below minimum node count {_MIN_NODES}")
        return _build_sphere(resolution, basis_order)
    if resolution < _MIN_NODES:
        raise SpaceError(f"resolution {resolution} below minimum {_MIN_NODES}")
    if basis_order is None:
        basis_order = max(1, resolution // 4)
    if basis_order < 1:
        raise SpaceError("basis_order must be at least 1")
    if 2 * basis_order >= resolution:
        raise SpaceError(
            f"aliasing guard: basis order {basis_order} needs resolution > {2 * basis_order}"
        )
    if kind == "circle":
        return _build_circle(resolution, basis_order)
    return _build_torus(resolution, basis_order)


# -- background charge ---------------------------------------------------------


class BackgroundCharge:
    """Signed density of total mass 1 against the reference measure."""

    def __init__(self, space, density_values):
        values = np.asarray(density_values, dtype=float)
        if values.shape != (space.n_nodes,):
            raise SpaceError(
                f"charge density has shape {values.shape}, expected ({space.n_nodes},)"
            )
        total = float((space.weights * values).sum())
        if abs(total - 1.0) > 1e-10:
            raise SpaceError(f"charge density integrates to {total!r}, expected 1")
        self.space = space
        self.values = values

    @classmethod
    def uniform(cls, space):
        return cls(space, np.ones(space.n_nodes))

    @classmethod
    def from_expression(cls, space, expr):
        from .expressions import compile_expression

        fn = compile_expression(expr, _coordinate_names(space))
        values = fn(*[space.nodes[:, i] for i in range(space.point_dim)])
        values = np.broadcast_to(np.asarray(values, float), (space.n_nodes,)).copy()
        total = float((space.weights * values).sum())
        if abs(total) < 1e-12:
            raise SpaceError("charge expression integrates to 0; cannot normalize")
        return cls(space, values / total)

    @property
    def is_uniform(self):
        return bool(np.allclose(self.values, 1.0, atol=1e-14))

    def digest(self):
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()


def _coordinate_names(space):
    return {
        "circle": ["theta"],
        "torus": ["u", "v"],
        "sphere": ["x", "y", "z"],
        "box": ["x", "y"][: space.point_dim],
    }[space.kind]


# -- Green model ---------------------------------------------------------------


class GreenModel:
    """Truncated spectral Green kernel for a background charge.

    ``order`` counts the nonconstant eigenfunctions kept in the expansion.
    """

    def __init__(self, space, charge, order=None):
        if not space.has_basis:
            raise SpaceError(f"space kind {space.kind!r} has no spectral basis")
        if charge.space is not space:
            raise SpaceError("charge was built on a different space")
        max_order = space.n_basis - 1
        if order is None:
            order = max_order
        if not 1 <= order <= max_order:
            raise SpaceError(f"truncation order {order} outside 1..{max_order}")
        self.space = space
        self.charge = charge
        self.order = order
        self.eigs = space.eigenvalues[1 : order + 1]
        # Scaling both factors by 1/sqrt(lambda) keeps every evaluation path
        # exactly symmetric in floating point.
        self._inv_sqrt_eigs = 1.0 / np.sqrt(self.eigs)
        basis = space.basis_values[:, 1 : order + 1]
        # Spectral coefficients of the charge density.
        self.charge_coeffs = basis.T @ (space.weights * charge.values)
        self.phi_nodes = basis @ (self.charge_coeffs / self.eigs)
        self.constant = float((self.charge_coeffs ** 2 / self.eigs).sum())
        self._kernel_matrix = None

    def _phi(self, points):
        basis = self.space.evaluate_basis(points)[:, 1 : self.order + 1]
        return basis @ (self.charge_coeffs / self.eigs)

    def kernel_matrix(self):
        """Dense node-by-node kernel table (cached)."""
        if self._kernel_matrix is None:
            scaled = self.space.basis_values[:, 1 : self.order + 1] * self._inv_sqrt_eigs
            h = scaled @ scaled.T
            h = 0.5 * (h + h.T)  # force exact symmetry over BLAS blocking
            shift = self.phi_nodes[:, None] + self.phi_nodes[None, :]
            self._kernel_matrix = (h - shift) + self.constant
        return self._kernel_matrix

    def evaluate(self, x, y):
        """Pairwise kernel values between two point arrays."""
        xs = self.space._as_points(x)
        ys = self.space._as_points(y)
        if np.any(self.space.geodesic(xs, ys) < 1e-12):
            raise DiagonalSingularityError("Green kernel requested on the diagonal x == y")
        bx = self.space.evaluate_basis(xs)[:, 1 : self.order + 1] * self._inv_sqrt_eigs
        by = self.space.evaluate_basis(ys)[:, 1 : self.order + 1] * self._inv_sqrt_eigs
        shift = self._phi(xs)[:, None] + self._phi(ys)[None, :]
        return (bx @ by.T - shift) + self.constant

    def rows_at_nodes(self, x):
        """Kernel values G(x_j, node_i) for arbitrary points x, shape (p, n_nodes)."""
        xs = self.space._as_points(x)
        scaled = self.space.basis_values[:, 1 : self.order + 1] * self._inv_sqrt_eigs
        bx = self.space.evaluate_basis(xs)[:, 1 : self.order + 1] * self._inv_sqrt_eigs
        shift = self._phi(xs)[:, None] + self.phi_nodes[None, :]
        return (bx @ scaled.T - shift) + self.constant

    def lower_bound(self):
        """Grid minimum of the kernel table (finite for the truncated kernel)."""
        return float(self.kernel_matrix().min())

    def identity_residual(self, f_coeffs, x):
        return green_identity_residual(self, f_coeffs, x)

    def save(self, path):
        header = {
            "magic": _GREEN_MAGIC,
            "version": _CACHE_VERSION,
            "order": self.order,
            "charge_digest": self.charge.digest(),
        }
        with open(path, "wb") as fh:
            np.savez(
                fh,
                header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), np.uint8),
                charge_values=self.charge.values,
                charge_coeffs=self.charge_coeffs,
                phi_nodes=self.phi_nodes,
                constant=np.array([self.constant]),
            )

    @classmethod
    def load(cls, path, space):
        with np.load(path) as data:
            header = json.loads(bytes(data["header"].tobytes()).decode())
            if header.get("magic") != _GREEN_MAGIC:
                raise CacheFormatError(f"{path}: not a Green-model cache (bad magic number)")
            if header.get("version") != _CACHE_VERSION:
                raise CacheFormatError(
                    f"{path}: cache version {header.get('version')} != {_CACHE_VERSION}"
                )
            charge = BackgroundCharge(space, data["charge_values"])
            if charge.digest() != header["charge_digest"]:
                raise CacheFormatError(f"{path}: charge digest mismatch")
            return cls(space, charge, order=header["order"])


def green_evaluate(model, x, y):
    """Kernel value G(x, y); signals the diagonal singularity when x == y."""
    return float(model.evaluate(x, y)[0, 0])


def green_identity_residual(model, f_coeffs, x):
    """Quadrature residual of the defining identity at the point ``x``.

    ``f_coeffs`` are coefficients of a test function in the space's basis
    (constant first).  The residual is

        | sum_i w_i G(x, node_i) (lap f)(node_i) + f(x) - int f dL |,

    with the Laplacian applied spectrally.
    """
    space = model.space
    coeffs = np.asarray(f_coeffs, dtype=float)
    if coeffs.ndim != 1 or coeffs.shape[0] > space.n_basis:
        raise SpaceError(
            f"test function needs a 1-d coefficient vector of length <= {space.n_basis}"
        )
    if coeffs.shape[0] > model.order + 1 and np.any(coeffs[model.order + 1 :] != 0.0):
        raise SpaceError(
            f"test function has nonzero coefficients beyond truncation order {model.order}"
        )
    full = np.zeros(space.n_basis)
    full[: coeffs.shape[0]] = coeffs
    lap_nodes = space.basis_values @ (-space.eigenvalues * full)
    f_nodes = space.basis_values @ full
    f_at_x = float((space.evaluate_basis(x) @ full)[0])
    g_row = model.rows_at_nodes(x)[0]
    integral = float((space.weights * g_row * lap_nodes).sum())
    target = float((space.weights * f_nodes * model.charge.values).sum())
    return abs(integral + f_at_x - target)
