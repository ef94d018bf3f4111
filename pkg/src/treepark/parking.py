"""The parking process on a decorated plane tree.

Each car drives toward the root and stops at the first free vertex.  The
result does not depend on the order in which cars move, so the main engine is
a single pass from the leaves up; ``park_sequential`` moves cars one at a time
and exists to check that claim.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .errors import LengthMismatch
from .treegen import CarAssignment, PlaneTree


@dataclass(frozen=True, eq=False)
class ParkingResult:
    visits: np.ndarray  # cars that pass through or stop at each vertex
    parked: np.ndarray
    edge_flux: np.ndarray  # cars leaving each vertex toward its parent
    root_flux: int

    @property
    def parked_count(self) -> int:
        return int(self.parked.sum())

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, ParkingResult)
            and self.root_flux == other.root_flux
            and np.array_equal(self.visits, other.visits)
            and np.array_equal(self.parked, other.parked)
            and np.array_equal(self.edge_flux, other.edge_flux)
        )


@dataclass(frozen=True)
class ClusterStats:
    sizes: list[int]

    @property
    def c_max(self) -> int:
        return self.sizes[0] if self.sizes else 0

    @property
    def c_2(self) -> int:
        return self.sizes[1] if len(self.sizes) > 1 else 0

    @property
    def count(self) -> int:
        return len(self.sizes)


def _counts(tree: PlaneTree, arrivals) -> np.ndarray:
    cars = arrivals.counts if isinstance(arrivals, CarAssignment) else arrivals
    cars = np.ascontiguousarray(np.asarray(cars, dtype=np.int64))
    if cars.shape != (tree.n,):
        raise LengthMismatch(f"{cars.size} car counts for a tree with {tree.n} vertices")
    return cars


def _result(visits: np.ndarray) -> ParkingResult:
    flux = np.maximum(visits - 1, 0)
    return ParkingResult(visits, visits >= 1, flux, int(flux[0]))


def park(tree: PlaneTree, arrivals) -> ParkingResult:
    """Visit counts via ``X_x = L_x + sum over children c of (X_c - 1)_+``."""
    return _result(K.park_visits(tree.parent, _counts(tree, arrivals)))


def park_sequential(tree: PlaneTree, arrivals, order: Sequence[int] | None = None) -> ParkingResult:
    """Drive cars one by one toward the root.

    Cars are tokens ``0 .. total-1``, token ``j`` arriving at
    ``np.repeat(arange(n), counts)[j]``.  ``order`` is a permutation of the
    tokens (identity if omitted).
    """
    cars = _counts(tree, arrivals)
    origin = np.repeat(np.arange(tree.n), cars)
    if order is None:
        order = range(origin.size)
    else:
        order = np.asarray(order, dtype=np.int64)
        if order.size != origin.size or not np.array_equal(np.sort(order), np.arange(origin.size)):
            raise LengthMismatch("order must be a permutation of the car tokens")
    parent = tree.parent.tolist()
    occupied = [False] * tree.n
    visits = [0] * tree.n
    for token in order:
        v = int(origin[token])
        while v >= 0:
            visits[v] += 1
            if not occupied[v]:
                occupied[v] = True
                break
            v = parent[v]
    return _result(np.array(visits, dtype=np.int64))


def clusters(tree: PlaneTree, parked: Iterable[bool]) -> ClusterStats:
    """Connected components of the parked vertices, largest first."""
    mask = np.ascontiguousarray(np.asarray(parked, dtype=np.bool_))
    if mask.shape != (tree.n,):
        raise LengthMismatch(f"{mask.size} flags for a tree with {tree.n} vertices")
    return ClusterStats(cluster_sizes(tree.parent, mask).tolist())


def cluster_sizes(parent: np.ndarray, parked: np.ndarray) -> np.ndarray:
    label, count = K.component_labels(parent, parked)
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    sizes = np.bincount(label[label >= 0], minlength=count)
    return np.sort(sizes)[::-1]


def conservation_holds(arrivals, result: ParkingResult) -> bool:
    cars = arrivals.counts if isinstance(arrivals, CarAssignment) else np.asarray(arrivals)
    return int(cars.sum()) == result.root_flux + result.parked_count
