import logging
from dataclasses import dataclass
from typing import Optional

import numpy
from scipy.integrate import simpson

logger = logging.getLogger(__name__)

MIN_POINTS = 16


@dataclass(frozen=True)
class RadialGrid:
    """
    Uniform mesh r_min = r_0 < r_1 < ... < r_{N-1} = r_max.

    The wave evolver always uses r_min = 1 (the excised unit ball); exterior data
    for projections lives on sub-grids starting at a node R >= 1.
    """

    r_max: float
    npoints: int
    r_min: float = 1.0

    def __post_init__(self):
        if self.npoints < MIN_POINTS:
            raise ValueError(f"Grid needs at least {MIN_POINTS} points, got {self.npoints}")
        if not self.r_max > self.r_min:
            raise ValueError(f"Grid edge r_max={self.r_max} must exceed r_min={self.r_min}")

    @classmethod
    def from_spacing(cls, r_max: float, dr: float, r_min: float = 1.0) -> "RadialGrid":
        npoints = int(round((r_max - r_min) / dr)) + 1
        return cls(r_min + (npoints - 1) * dr, npoints, r_min)

    @property
    def dr(self) -> float:
        return (self.r_max - self.r_min) / (self.npoints - 1)

    @property
    def r(self) -> numpy.ndarray:
        return self.r_min + self.dr * numpy.arange(self.npoints)

    def index_at(self, radius: float) -> int:
        """Index of the first node at or beyond ``radius`` (nodes within 1e-9 dr count as hits)."""
        position = (radius - self.r_min) / self.dr
        index = int(numpy.ceil(position - 1e-9))
        return min(max(index, 0), self.npoints - 1)

    def restrict(self, radius: float, r_edge: Optional[float] = None) -> "RadialGrid":
        """
        Sub-grid starting at the first node >= radius and ending at the last node <= r_edge.
        """
        start = self.index_at(radius)
        stop = self.npoints - 1 if r_edge is None else min(self.npoints - 1, int(numpy.floor((r_edge - self.r_min) / self.dr + 1e-9)))
        if stop - start + 1 < MIN_POINTS:
            raise ValueError(f"Restriction [{radius}, {r_edge}] leaves fewer than {MIN_POINTS} nodes")
        return RadialGrid(
            r_max=self.r_min + stop * self.dr, npoints=stop - start + 1, r_min=self.r_min + start * self.dr
        )

    def window(self, radius: float, r_edge: Optional[float] = None) -> slice:
        start = self.index_at(radius)
        stop = self.npoints if r_edge is None else min(self.npoints, int(numpy.floor((r_edge - self.r_min) / self.dr + 1e-9)) + 1)
        return slice(start, stop)


def radial_derivative(values: numpy.ndarray, dr: float) -> numpy.ndarray:
    """Fourth-order central differences inside, fourth-order one-sided stencils at the two edges."""
    f = numpy.asarray(values, dtype=float)
    out = numpy.empty_like(f)
    out[2:-2] = (-f[4:] + 8.0 * f[3:-1] - 8.0 * f[1:-3] + f[:-4]) / (12.0 * dr)
    out[0] = (-25.0 * f[0] + 48.0 * f[1] - 36.0 * f[2] + 16.0 * f[3] - 3.0 * f[4]) / (12.0 * dr)
    out[1] = (-3.0 * f[0] - 10.0 * f[1] + 18.0 * f[2] - 6.0 * f[3] + f[4]) / (12.0 * dr)
    out[-1] = (25.0 * f[-1] - 48.0 * f[-2] + 36.0 * f[-3] - 16.0 * f[-4] + 3.0 * f[-5]) / (12.0 * dr)
    out[-2] = (3.0 * f[-1] + 10.0 * f[-2] - 18.0 * f[-3] + 6.0 * f[-4] - f[-5]) / (12.0 * dr)
    return out


def integrate(values: numpy.ndarray, dr: float) -> float:
    """Composite Simpson on a uniform mesh."""
    values = numpy.asarray(values, dtype=float)
    if values.size < 2:
        return 0.0
    return float(simpson(values, dx=dr))
