"""Topology optimization problem description."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from nito.errors import ParameterError
from nito.fea import GridMesh, SupportSet


@dataclass(frozen=True)
class Load:
    """Point force on node (i, j)."""
    i: int
    j: int
    fx: float
    fy: float


@dataclass(frozen=True)
class ProblemSpec:
    """Grid domain, point loads, supports and target volume fraction.

    Nodes are referenced by integer grid coordinates ``(i, j)``; the
    normalized unit-square position of a node is ``(i / nx, j / ny)``.
    """
    nx: int
    ny: int
    loads: tuple
    supports_x: tuple
    supports_y: tuple
    volume_fraction: float
    name: str = field(default="", compare=False)

    def __post_init__(self):
        object.__setattr__(self, "loads", tuple(Load(int(l.i), int(l.j), float(l.fx), float(l.fy)) for l in self.loads))
        object.__setattr__(self, "supports_x", tuple((int(i), int(j)) for i, j in self.supports_x))
        object.__setattr__(self, "supports_y", tuple((int(i), int(j)) for i, j in self.supports_y))
        if not self.loads:
            raise ParameterError("a problem needs at least one load")
        if not 0.0 < self.volume_fraction < 1.0:
            raise ParameterError(f"volume fraction must be in (0, 1), got {self.volume_fraction}")
        for i, j in [(l.i, l.j) for l in self.loads] + list(self.supports_x) + list(self.supports_y):
            if not (0 <= i <= self.nx and 0 <= j <= self.ny):
                raise ParameterError(f"node ({i}, {j}) lies outside the {self.nx}x{self.ny} grid")

    @property
    def mesh(self) -> GridMesh:
        return GridMesh(self.nx, self.ny)

    def load_vector(self) -> np.ndarray:
        mesh = self.mesh
        f = np.zeros(mesh.n_dofs)
        for l in self.loads:
            n = int(mesh.node_id(l.i, l.j))
            f[2 * n] += l.fx
            f[2 * n + 1] += l.fy
        return f

    def support_set(self) -> SupportSet:
        mesh = self.mesh
        return SupportSet(
            tuple(int(mesh.node_id(i, j)) for i, j in self.supports_x),
            tuple(int(mesh.node_id(i, j)) for i, j in self.supports_y),
        )

    def normalized(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=float).reshape(-1, 2)
        return nodes / np.array([self.nx, self.ny], dtype=float)

    def point_clouds(self):
        """Loads as (N, 4) rows (x, y, fx, fy) and supports as (N, 2) rows, unit-square coordinates."""
        loads = np.array([[l.i / self.nx, l.j / self.ny, l.fx, l.fy] for l in self.loads])
        return loads, self.normalized(self.supports_x), self.normalized(self.supports_y)

    def rescaled(self, nx: int, ny: int) -> "ProblemSpec":
        """The same boundary conditions on an ``nx`` x ``ny`` grid.

        Loads and supports move to the nearest new node. In addition a new
        node is supported when every old node around its position is, so a
        supported segment stays contiguous at a finer resolution.
        """
        if (nx, ny) == (self.nx, self.ny):
            return self
        if nx < 1 or ny < 1:
            raise ParameterError(f"grid must be at least 1x1, got {nx}x{ny}")

        def nearest(v, n_to, n_from):
            return int(np.floor(v * n_to / n_from + 0.5))

        jj, ii = np.divmod(np.arange((nx + 1) * (ny + 1)), nx + 1)
        x, y = ii * self.nx / nx, jj * self.ny / ny
        i0, i1 = np.floor(x).astype(np.int64), np.ceil(x).astype(np.int64)
        j0, j1 = np.floor(y).astype(np.int64), np.ceil(y).astype(np.int64)

        def remap(nodes):
            marked = np.zeros((self.ny + 1, self.nx + 1), dtype=bool)
            for i, j in nodes:
                marked[j, i] = True
            inside = marked[j0, i0] & marked[j0, i1] & marked[j1, i0] & marked[j1, i1]
            kept = set(zip(ii[inside].tolist(), jj[inside].tolist()))
            kept |= {(nearest(i, nx, self.nx), nearest(j, ny, self.ny)) for i, j in nodes}
            return tuple(sorted(kept))

        loads = tuple(
            Load(nearest(l.i, nx, self.nx), nearest(l.j, ny, self.ny), l.fx, l.fy) for l in self.loads
        )
        return ProblemSpec(nx, ny, loads, remap(self.supports_x), remap(self.supports_y),
                           self.volume_fraction, self.name)

    def to_dict(self) -> dict:
        return {
            "nx": self.nx,
            "ny": self.ny,
            "volume_fraction": self.volume_fraction,
            "loads": [
                {"node": [l.i, l.j], "xy": [l.i / self.nx, l.j / self.ny], "force": [l.fx, l.fy]}
                for l in self.loads
            ],
            "supports_x": [list(n) for n in self.supports_x],
            "supports_y": [list(n) for n in self.supports_y],
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProblemSpec":
        loads = [Load(d["node"][0], d["node"][1], d["force"][0], d["force"][1]) for d in data["loads"]]
        return cls(
            nx=int(data["nx"]),
            ny=int(data["ny"]),
            loads=tuple(loads),
            supports_x=tuple(tuple(n) for n in data["supports_x"]),
            supports_y=tuple(tuple(n) for n in data["supports_y"]),
            volume_fraction=float(data["volume_fraction"]),
            name=data.get("name", ""),
        )


def mbb_beam(nx=60, ny=20, volume_fraction=0.5) -> ProblemSpec:
    """Half MBB beam: symmetry plane on the left, roller at the bottom right, load at the top left."""
    return ProblemSpec(
        nx=nx,
        ny=ny,
        loads=(Load(0, ny, 0.0, -1.0),),
        supports_x=tuple((0, j) for j in range(ny + 1)),
        supports_y=((nx, 0),),
        volume_fraction=volume_fraction,
        name="mbb",
    )


def cantilever(nx=64, ny=32, volume_fraction=0.4) -> ProblemSpec:
    """Left edge clamped, downward load at the middle of the right edge."""
    clamp = tuple((0, j) for j in range(ny + 1))
    return ProblemSpec(
        nx=nx,
        ny=ny,
        loads=(Load(nx, ny // 2, 0.0, -1.0),),
        supports_x=clamp,
        supports_y=clamp,
        volume_fraction=volume_fraction,
        name="cantilever",
    )
