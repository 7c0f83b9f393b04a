import logging
from dataclasses import dataclass, replace
from enum import Enum

import numpy

from app.evolver.grid import RadialGrid

logger = logging.getLogger(__name__)


class Form(str, Enum):
    PSI = "psi"
    U = "u"


CHECKPOINT_MAGIC = b"EWM1"
CHECKPOINT_HEADER = numpy.dtype(
    [
        ("magic", "S4"),
        ("form", "S4"),
        ("ell", "<i4"),
        ("n", "<i4"),
        ("time", "<f8"),
        ("npoints", "<i8"),
        ("dr", "<f8"),
        ("r_min", "<f8"),
        ("r_max", "<f8"),
    ]
)


@dataclass(frozen=True, eq=False)
class WaveState:
    """
    (field, velocity) on the radial grid. In psi-form the field is the angle psi; in u-form
    it is u = (psi - Q)/r^l. Both forms pin field[0] = 0 at the excised boundary r = 1.
    """

    form: Form
    grid: RadialGrid
    field: numpy.ndarray
    velocity: numpy.ndarray
    time: float = 0.0
    ell: int = 1
    degree: int = 0

    def __post_init__(self):
        object.__setattr__(self, "form", Form(self.form))
        for name in ("field", "velocity"):
            values = numpy.asarray(getattr(self, name), dtype=float)
            if values.shape != (self.grid.npoints,):
                raise ValueError(f"{name} has shape {values.shape}, grid has {self.grid.npoints} nodes")
            if not numpy.all(numpy.isfinite(values)):
                raise ValueError(f"{name} contains non-finite values at t={self.time}")
            object.__setattr__(self, name, values)
        if self.field[0] != 0.0:
            raise ValueError(f"Dirichlet condition violated: field(r=1) = {self.field[0]}")

    @property
    def dim(self) -> int:
        return 2 * self.ell + 3

    def evolve_to(self, field: numpy.ndarray, velocity: numpy.ndarray, time: float) -> "WaveState":
        return replace(self, field=field, velocity=velocity, time=time)

    def to_bytes(self) -> bytes:
        """Little-endian checkpoint: fixed header followed by field and velocity as float64."""
        header = numpy.zeros(1, dtype=CHECKPOINT_HEADER)
        header["magic"] = CHECKPOINT_MAGIC
        header["form"] = self.form.value.encode()
        header["ell"] = self.ell
        header["n"] = self.degree
        header["time"] = self.time
        header["npoints"] = self.grid.npoints
        header["dr"] = self.grid.dr
        header["r_min"] = self.grid.r_min
        header["r_max"] = self.grid.r_max
        return header.tobytes() + self.field.astype("<f8").tobytes() + self.velocity.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, payload: bytes) -> "WaveState":
        header = numpy.frombuffer(payload, dtype=CHECKPOINT_HEADER, count=1)[0]
        if header["magic"] != CHECKPOINT_MAGIC:
            raise ValueError("Not a wave state checkpoint")
        npoints = int(header["npoints"])
        expected = CHECKPOINT_HEADER.itemsize + 16 * npoints
        if len(payload) != expected:
            raise ValueError(f"Checkpoint holds {len(payload)} bytes, expected {expected}")
        arrays = numpy.frombuffer(payload, dtype="<f8", offset=CHECKPOINT_HEADER.itemsize)
        grid = RadialGrid(r_max=float(header["r_max"]), npoints=npoints, r_min=float(header["r_min"]))
        return cls(
            form=Form(header["form"].decode()),
            grid=grid,
            field=arrays[:npoints].copy(),
            velocity=arrays[npoints:].copy(),
            time=float(header["time"]),
            ell=int(header["ell"]),
            degree=int(header["n"]),
        )
