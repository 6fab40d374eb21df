"""Cell-centered uniform grids on the unit box with homogeneous-Neumann operators.

The domain is the unit box (0,1)^d with d in {1, 2}. Nodes sit at cell
centers x_i = (i + 1/2)*dx, so the mirror-ghost closure of the Laplacian is
second order, exactly symmetric, and summation by parts holds at machine
precision: (-lap u, w)_h equals the face-difference inner product. That
exactness is what makes the scheme's energy telescoping and mass bookkeeping
identities hold discretely instead of merely up to truncation error.
"""

import csv

import numpy as np

__all__ = [
    "Grid",
    "Field",
    "make_grid",
    "laplacian_apply",
    "advective_divergence",
    "inner_h",
    "norm_h",
    "norm_l4",
    "seminorm_v",
    "norm_v",
    "mean",
    "save_field_csv",
    "load_field_csv",
]


class Grid:
    """Uniform tensor grid of n cells per axis on (0,1)^d, nodes at cell centers."""

    def __init__(self, d, n):
        if d not in (1, 2):
            raise ValueError(f"unsupported dimension d={d}; expected 1 or 2")
        if n < 4:
            raise ValueError(f"n={n} too coarse; need n >= 4 for second-order stencils")
        self.d = int(d)
        self.n = int(n)
        self.dx = 1.0 / n
        self.shape = (self.n,) * self.d
        self.node_count = self.n**self.d
        self.cell_volume = self.dx**self.d
        self.axis = (np.arange(self.n) + 0.5) * self.dx
        self.axis.setflags(write=False)
        self._ops = {}  # lazy operator/factorization cache; not part of state

    def coords(self):
        """Cell-center coordinate arrays, one per axis, each of shape ``self.shape``."""
        return np.meshgrid(*([self.axis] * self.d), indexing="ij")

    def matches(self, other):
        return self.d == other.d and self.n == other.n

    def __repr__(self):
        return f"Grid(d={self.d}, n={self.n})"

    # splu factorizations in the cache are not picklable; rebuild lazily
    def __getstate__(self):
        state = self.__dict__.copy()
        state["_ops"] = {}
        return state


def make_grid(d, n):
    """Build a grid, rejecting d outside {1, 2} and n < 4."""
    return Grid(d, n)


class Field:
    """Real-valued grid function; ``values`` has shape ``grid.shape``.

    Treated as immutable: every operation returns a new Field. The
    constructor rejects non-finite entries so NaNs cannot propagate
    silently through a run.
    """

    __slots__ = ("grid", "values")

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            if values.size == grid.node_count:
                values = values.reshape(grid.shape)
            else:
                raise ValueError(
                    f"field size {values.size} does not match grid with {grid.node_count} nodes"
                )
        if not np.all(np.isfinite(values)):
            raise ValueError("field contains non-finite entries")
        self.grid = grid
        self.values = values

    def copy(self):
        return Field(self.grid, self.values.copy())

    def _check(self, other):
        if not self.grid.matches(other.grid):
            raise ValueError(f"grid mismatch: {self.grid} vs {other.grid}")

    def __add__(self, other):
        self._check(other)
        return Field(self.grid, self.values + other.values)

    def __sub__(self, other):
        self._check(other)
        return Field(self.grid, self.values - other.values)

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __mul__(self, a):
        return Field(self.grid, self.values * float(a))

    __rmul__ = __mul__

    def __truediv__(self, a):
        return Field(self.grid, self.values / float(a))

    def __repr__(self):
        return f"Field({self.grid}, min={self.values.min():.3g}, max={self.values.max():.3g})"


def _same_grid(g, *fields):
    for f in fields:
        if not g.matches(f.grid):
            raise ValueError(f"grid mismatch: {g} vs {f.grid}")


def laplacian_apply(g, u):
    """Second-order Laplacian with mirror ghosts (zero-flux closure).

    Constants are in the kernel and the discrete mean of the output is a
    telescoping sum, hence zero up to accumulation roundoff.
    """
    _same_grid(g, u)
    v = u.values
    p = np.pad(v, 1, mode="edge")
    if g.d == 1:
        lap = p[:-2] + p[2:] - 2.0 * v
    else:
        lap = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:] - 4.0 * v
    return Field(g, lap / g.dx**2)


def _head(a, axis):
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(None, -1)
    return a[tuple(sl)]


def _tail(a, axis):
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(1, None)
    return a[tuple(sl)]


def advective_divergence(g, u, v):
    """Discrete divergence of the face fluxes u_face * dv_face.

    Face values of u are arithmetic means of the two adjacent nodes, the
    gradient of v is the face-centered difference, and the normal flux
    vanishes on the boundary, so the output telescopes to exact zero mean.
    """
    _same_grid(g, u, v)
    uv, vv = u.values, v.values
    out = np.zeros_like(uv)
    for axis in range(g.d):
        dv = np.diff(vv, axis=axis) / g.dx
        flux = 0.5 * (_tail(uv, axis) + _head(uv, axis)) * dv
        _head(out, axis)[...] += flux
        _tail(out, axis)[...] -= flux
    return Field(g, out / g.dx)


def inner_h(u, w):
    """L2 inner product: cell volume times the nodal dot product."""
    u._check(w)
    return u.grid.cell_volume * float(np.dot(u.values.ravel(), w.values.ravel()))


def norm_h(u):
    return np.sqrt(u.grid.cell_volume * float(np.dot(u.values.ravel(), u.values.ravel())))


def norm_l4(u):
    return (u.grid.cell_volume * float(np.sum(u.values**4))) ** 0.25


def mean(u):
    """Average over the unit box (|domain| = 1)."""
    return u.grid.cell_volume * float(np.sum(u.values))


def seminorm_v(u):
    """H1 seminorm from face-centered differences over interior faces."""
    g = u.grid
    total = 0.0
    for axis in range(g.d):
        diff = np.diff(u.values, axis=axis) / g.dx
        total += float(np.sum(diff * diff))
    return np.sqrt(g.cell_volume * total)


def norm_v(u):
    return np.sqrt(seminorm_v(u) ** 2 + norm_h(u) ** 2)


def save_field_csv(u, path):
    """Write one node per row: coordinates then value."""
    g = u.grid
    coords = g.coords()
    header = ["x", "value"] if g.d == 1 else ["x", "y", "value"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        flat = [c.ravel() for c in coords] + [u.values.ravel()]
        for row in zip(*flat):
            writer.writerow([f"{x:.17g}" for x in row])


def load_field_csv(g, path):
    """Read a field written by :func:`save_field_csv` onto grid ``g``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if len(header) != g.d + 1:
            raise ValueError(f"expected {g.d + 1} columns, found {len(header)}")
        rows = [[float(x) for x in row] for row in reader if row]
    if len(rows) != g.node_count:
        raise ValueError(f"expected {g.node_count} rows, found {len(rows)}")
    data = np.asarray(rows)
    coords = [c.ravel() for c in g.coords()]
    for axis in range(g.d):
        if np.max(np.abs(data[:, axis] - coords[axis])) > 1e-12:
            raise ValueError("node coordinates in file do not match the grid")
    return Field(g, data[:, -1])
