from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple
import logging
import os


@dataclass(frozen=True)
class ParamSpec:
    key: str
    data_type: str  # 'int', 'float', 'str', 'bool', 'int_list', 'float_list'
    default: Any = None
    minimum: Optional[float] = None
    maximum: Optional[float] = None
    kinds: Tuple[str, ...] = ()  # empty tuple: valid for every kind
    help: str = ""
    choices: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class GridConfig:
    r_max: float
    npoints: int
    r_min: float = 1.0


@dataclass(frozen=True)
class PerturbationConfig:
    amplitude: float = 0.0
    center: float = 3.0
    width: float = 1.0
    velocity: float = 0.0


@dataclass(frozen=True)
class ProbeConfig:
    radii: Tuple[float, ...] = field(default_factory=lambda: (5.0,))
    cadence: float = 0.5
    snapshots: bool = True


EVOLVE_KINDS = ("evolve", "sweep")


class Config:
    tool_version = "0.1.0"
    kinds = ("tabulate-coefficients", "shoot", "evolve", "channels", "spectral", "sweep")

    class Grid:
        r_max = 60.0
        npoints = 3001

    class Evolution:
        cfl = 0.5
        max_cfl = 0.8
        causal_margin_cells = 5
        checkpoint_every = 0  # steps; 0 keeps only the final checkpoint

    class Shooting:
        s_max = 40.0
        rtol = 1e-10
        atol = 1e-12
        basin_radius = 1e-6
        bracket_width = 1e-12
        scan_start = 1.0
        scan_limit = 1e8
        sample_ds = 1e-3
        sample_method = "DOP853"
        sample_rtol = 1e-13
        fit_deviation = 1e-3  # largest n*pi - Q inside the alpha fit window

    class Channels:
        plateau_gap = 0.05  # |E(T) - limit| relative to the initial exterior energy
        plateau_slope = 0.01

    class Projection:
        tail_tolerance = 1e-12
        negative_tolerance = 1e-9
        min_track_points = 8

    class Output:
        root = "runs"
        env_var = "EWM_OUTPUT_ROOT"

    experiment_params: List[ParamSpec] = [
        ParamSpec("kind", "str", None, choices=kinds, help="experiment kind"),
        ParamSpec("seed", "int", 12345, minimum=0, help="random seed"),
        ParamSpec("output.dir", "str", None, help="output directory (relative to the output root)"),
        ParamSpec("dims.min", "int", 3, minimum=3, maximum=101, kinds=("tabulate-coefficients",)),
        ParamSpec("dims.max", "int", 31, minimum=3, maximum=101, kinds=("tabulate-coefficients",)),
        ParamSpec("ell", "int", 1, minimum=1, maximum=8, kinds=("shoot", "evolve", "spectral")),
        ParamSpec("n", "int", 1, minimum=0, maximum=6, kinds=("shoot",)),
        ParamSpec("s_max", "float", Shooting.s_max, minimum=5.0, maximum=200.0, kinds=("shoot",)),
        ParamSpec("degree", "int", 1, minimum=0, maximum=6, kinds=("evolve", "spectral")),
        ParamSpec("form", "str", "psi", kinds=EVOLVE_KINDS, choices=("psi", "u")),
        ParamSpec("T", "float", 30.0, minimum=0.0, maximum=1000.0, kinds=EVOLVE_KINDS + ("channels",)),
        ParamSpec("cfl", "float", Evolution.cfl, minimum=1e-6, maximum=Evolution.max_cfl, kinds=EVOLVE_KINDS,
                  help="dt = cfl * dr; the RK4 step is only stable for cfl <= 0.8"),
        ParamSpec("grid.rmax", "float", Grid.r_max, minimum=2.0, maximum=1e5, kinds=EVOLVE_KINDS + ("spectral",)),
        ParamSpec("grid.npoints", "int", Grid.npoints, minimum=16, maximum=10**7, kinds=EVOLVE_KINDS + ("spectral",)),
        ParamSpec("perturbation.amplitude", "float", 0.3, minimum=-10.0, maximum=10.0, kinds=EVOLVE_KINDS),
        ParamSpec("perturbation.center", "float", 3.0, minimum=1.0, kinds=EVOLVE_KINDS),
        ParamSpec("perturbation.width", "float", 1.0, minimum=1e-3, kinds=EVOLVE_KINDS),
        ParamSpec("perturbation.velocity", "float", 0.0, minimum=-10.0, maximum=10.0, kinds=EVOLVE_KINDS),
        ParamSpec("probes.radii", "float_list", (5.0,), minimum=1.0, kinds=EVOLVE_KINDS),
        ParamSpec("probes.cadence", "float", 0.5, minimum=1e-6, kinds=EVOLVE_KINDS),
        ParamSpec("dim", "int", 5, minimum=3, maximum=31, kinds=("channels",)),
        ParamSpec("R", "float", 2.0, minimum=1.0, maximum=1e3, kinds=("channels",)),
        ParamSpec("data", "str", "random", kinds=("channels",), choices=("power", "bump-f", "bump-g", "random")),
        ParamSpec("samples", "int", 20, minimum=1, maximum=10**4, kinds=("channels",)),
        ParamSpec("probes.count", "int", 100, minimum=1, maximum=10**4, kinds=("spectral",)),
        ParamSpec("sweep.ell", "int_list", (1, 2), minimum=1, maximum=4, kinds=("sweep",)),
        ParamSpec("sweep.degree", "int_list", (0, 1), minimum=0, maximum=3, kinds=("sweep",)),
        ParamSpec("sweep.amplitude", "float_list", (0.3,), minimum=-10.0, maximum=10.0, kinds=("sweep",)),
        ParamSpec("sweep.workers", "int", 2, minimum=1, maximum=256, kinds=("sweep",)),
    ]

    @classmethod
    def get_param_spec(cls, key: str) -> ParamSpec:
        for spec in cls.experiment_params:
            if spec.key == key:
                return spec
        else:
            raise KeyError(f"Unknown configuration key '{key}'")

    @classmethod
    def params_for_kind(cls, kind: str) -> List[ParamSpec]:
        return [p for p in cls.experiment_params if not p.kinds or kind in p.kinds]

    @classmethod
    def output_root(cls) -> str:
        return os.environ.get(cls.Output.env_var, cls.Output.root)

    @classmethod
    def init_logging(cls, logging_level: int = logging.WARNING) -> logging.Logger:
        logging.basicConfig(
            level=logging_level,
            format="%(asctime)s - %(levelname)s - %(message)s",
            handlers=[logging.StreamHandler()],
        )
        return logging.getLogger()
