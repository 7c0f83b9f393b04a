from typing import List, Optional

from pydantic import BaseModel


class ChannelReport(BaseModel):
    dim: int
    R: float
    times: List[float]
    exterior_plus: List[float]
    exterior_minus: List[float]
    initial_exterior: float
    limit_plus: float
    limit_minus: float
    perp_norm_sq: float
    proj_norm_sq: float
    ratio: Optional[float] = None  # undefined for data inside P(R)
    plateau_flagged: bool = False
    oracle: str = "exact"

    @property
    def max_limit(self) -> float:
        return max(self.limit_plus, self.limit_minus)


class SpectralCheck(BaseModel):
    dim: int
    ell: int
    n: int
    npoints: int
    r_max: float
    smallest_eigenvalue: float
    converged: bool
    iterations: int
    negative_count: int
    rayleigh_min: float
    rayleigh_max: float
    probes: int


class OracleComparison(BaseModel):
    dim: int
    T: float
    dr: float
    relative_error: float
    residual: float
