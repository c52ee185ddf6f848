"""Pydantic request/response models for the service (and the CLI config files).

The JSON schema is versioned via a literal `schema` field; units are fixed
(hours, vehicles, veh/hr) with no inference.  Validation errors pinpoint the
offending field and the violated inequality.
"""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..model import (
    MERGE_DIVERGE,
    MERGE_ONLY,
    MODES,
    DivergeParams,
    InflowChain,
    MergeParams,
    NetworkState,
    PriorityVector,
    ProductChain,
)
from ..simulator import SimConfig


class ChainModel(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    a_plus: float = Field(gt=0)
    lam: float = Field(gt=0, alias="lambda")
    mu: float = Field(gt=0)

    def to_chain(self) -> InflowChain:
        return InflowChain(self.a_plus, self.lam, self.mu)


class MergeModel(BaseModel):
    F_1: float = Field(gt=0)
    F_2: float = Field(gt=0)
    phi_1: float
    R_3: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check_priority(self):
        if not 0.0 <= self.phi_1 <= 1.0:
            raise ValueError(
                f"phi_1 = {self.phi_1} violates the priority constraint "
                "(components nonnegative, phi_1 + phi_2 = 1 requires phi_1 in [0, 1])"
            )
        return self

    def to_params(self, default_r3: float | None = None) -> MergeParams:
        r3 = self.R_3 if self.R_3 is not None else default_r3
        if r3 is None:
            raise ValueError("R_3 is required when no shared-link capacity is given")
        return MergeParams(self.F_1, self.F_2, r3, PriorityVector.from_phi1(self.phi_1))


class DivergeModel(BaseModel):
    F_3: float = Field(gt=0)
    theta: float = Field(gt=0)
    R_4: float = Field(gt=0)
    R_5: float = Field(gt=0)

    @model_validator(mode="after")
    def _check_standing(self):
        message = DivergeParams(self.F_3, self.theta, self.R_4, self.R_5).standing_violation()
        if message is not None:
            raise ValueError(message)
        return self

    def to_params(self) -> DivergeParams:
        return DivergeParams(self.F_3, self.theta, self.R_4, self.R_5)


class StateModel(BaseModel):
    mode: str = "00"
    q_1: float = Field(0.0, ge=0)
    q_2: float = Field(0.0, ge=0)
    q3_1: float = Field(0.0, ge=0)
    q3_2: float = Field(0.0, ge=0)

    @model_validator(mode="after")
    def _check_mode(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        return self

    def to_state(self) -> NetworkState:
        return NetworkState(self.mode, self.q_1, self.q_2, self.q3_1, self.q3_2)


class SimulateRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    topology: Literal["merge-only", "merge-diverge"] = MERGE_ONLY
    merge: MergeModel
    horizon: float = Field(ge=0)
    chain_1: Optional[ChainModel] = None
    chain_2: Optional[ChainModel] = None
    diverge: Optional[DivergeModel] = None
    seed: int = Field(0, ge=0, lt=2**64)
    max_step: float = Field(1e-3, gt=0)
    initial_state: Optional[StateModel] = None
    constant_inflow: Optional[tuple[float, float]] = None
    sample_interval: Optional[float] = Field(None, gt=0)
    checkpoints: int = Field(200, ge=1)

    @model_validator(mode="after")
    def _check_shape(self):
        if self.topology == MERGE_DIVERGE and self.diverge is None:
            raise ValueError("merge-diverge topology requires the diverge block")
        if self.topology == MERGE_ONLY and self.merge.R_3 is None:
            raise ValueError("merge-only topology requires merge.R_3")
        if self.constant_inflow is None and (self.chain_1 is None or self.chain_2 is None):
            raise ValueError("chain_1 and chain_2 are required unless constant_inflow is set")
        if self.constant_inflow is not None and any(v < 0 for v in self.constant_inflow):
            raise ValueError("constant_inflow components must be >= 0")
        return self

    def to_config(self) -> SimConfig:
        chains = None
        if self.chain_1 is not None and self.chain_2 is not None:
            chains = ProductChain(self.chain_1.to_chain(), self.chain_2.to_chain())
        diverge = self.diverge.to_params() if self.diverge is not None else None
        merge = self.merge.to_params(default_r3=diverge.F_3 if diverge else None)
        state = self.initial_state.to_state() if self.initial_state else NetworkState("00", 0.0, 0.0)
        return SimConfig(
            topology=self.topology,
            merge=merge,
            horizon=self.horizon,
            chains=chains,
            diverge=diverge,
            initial_state=state,
            seed=self.seed,
            max_step=self.max_step,
            constant_inflow=self.constant_inflow,
            sample_interval=self.sample_interval,
            n_checkpoints=self.checkpoints,
        )


class EstimateRequest(SimulateRequest):
    ensemble: int = Field(8, ge=1)
    slope_threshold: Optional[float] = Field(None, gt=0)
    avg_tol: float = Field(0.05, gt=0)


class ClassifyRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    phi_1: float
    a_bar_1: float = Field(gt=0)
    a_bar_2: float = Field(gt=0)
    F_1: float = Field(gt=0)
    F_2: float = Field(gt=0)
    R_3: Optional[float] = Field(None, gt=0)
    F_3: Optional[float] = Field(None, gt=0)
    R_4: Optional[float] = Field(None, gt=0)
    R_5: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if not 0.0 <= self.phi_1 <= 1.0:
            raise ValueError(
                f"phi_1 = {self.phi_1} violates the priority constraint "
                "(components nonnegative, phi_1 + phi_2 = 1 requires phi_1 in [0, 1])"
            )
        network = self.F_3 is not None
        if network and (self.R_4 is None or self.R_5 is None):
            raise ValueError("network classification requires R_4 and R_5")
        if not network and self.R_3 is None:
            raise ValueError("merge classification requires R_3")
        return self


class SweepRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    a_bar_1: float = Field(gt=0)
    a_bar_2: float = Field(gt=0)
    F_1: float = Field(gt=0)
    F_2: float = Field(gt=0)
    R_4: float = Field(gt=0)
    R_5: float = Field(gt=0)
    R_3: Optional[float] = Field(None, gt=0)
    f3_values: Optional[list[float]] = None
    f3_start: Optional[float] = None
    f3_stop: Optional[float] = None
    f3_step: Optional[float] = Field(None, gt=0)
    phi1_values: Optional[list[float]] = None
    phi1_start: float = 0.0
    phi1_stop: float = 1.0
    phi1_step: Optional[float] = Field(None, gt=0)

    @staticmethod
    def _range(start, stop, step):
        count = int(round((stop - start) / step))
        values = [start + i * step for i in range(count + 1)]
        if values[-1] > stop + 1e-12:
            values.pop()
        return values

    def f3_axis(self) -> list[float]:
        if self.f3_values:
            return list(self.f3_values)
        if self.f3_start is None or self.f3_stop is None or self.f3_step is None:
            raise ValueError("either f3_values or f3_start/f3_stop/f3_step is required")
        return self._range(self.f3_start, self.f3_stop, self.f3_step)

    def phi1_axis(self) -> list[float]:
        if self.phi1_values:
            return list(self.phi1_values)
        if self.phi1_step is None:
            raise ValueError("either phi1_values or phi1_step is required")
        return self._range(self.phi1_start, self.phi1_stop, self.phi1_step)


class DriftCheckRequest(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    schema_version: Literal[1] = Field(1, alias="schema")
    certificate: Literal["v1", "v2"] = "v1"
    chain_1: ChainModel
    chain_2: ChainModel
    merge: MergeModel
    diverge: Optional[DivergeModel] = None
    box: float = Field(1e4, gt=0)
    samples: int = Field(10000, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    sample_scale: float = Field(1.0, gt=0)
    quadratic_scale: float = Field(0.5, gt=0)

    @model_validator(mode="after")
    def _check(self):
        if self.certificate == "v2" and self.diverge is None:
            raise ValueError("the v2 certificate requires the diverge block")
        if self.certificate == "v1" and self.merge.R_3 is None:
            raise ValueError("the v1 certificate requires merge.R_3")
        return self


# --- responses ---


class StatsModel(BaseModel):
    horizon: float
    time_avg_q1: float
    time_avg_q2: float
    time_avg_q3: float
    occupancy: tuple[float, float, float, float]
    mean_throughput: float
    event_count: int
    final_state: StateModel
    total_inflow_veh: float
    total_outflow_veh: float
    checkpoint_times: tuple[float, ...]
    checkpoint_avg_upstream: tuple[float, ...]


class TrajectoryModel(BaseModel):
    columns: tuple[str, ...]
    rows: list[list]


class SimulateResponse(BaseModel):
    stats: StatsModel
    trajectory: Optional[TrajectoryModel] = None


class ClassifyResponse(BaseModel):
    verdict: str
    in_phi0: int
    in_phi1: int
    in_phi2: Optional[int] = None
    existence: int
    uniform: int


class SweepResponse(BaseModel):
    columns: tuple[str, ...] = ("F3", "phi1", "in_phi0", "in_phi1", "in_phi2", "verdict")
    rows: list[list]


class EstimateResponse(BaseModel):
    verdict: str
    slope: float
    bound_estimate: float
    runs: int
    slope_threshold: float
    avg_tol: float
    rel_change: float
    checkpoint_times: tuple[float, ...]
    ensemble_avg: tuple[float, ...]


class RemainderStats(BaseModel):
    mean: float
    std: float


class DriftCheckResponse(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    cert: str
    c: float
    d: float
    max_lhs: float
    samples: int
    passed: bool = Field(alias="pass")
    per_mode_remainder: dict[str, RemainderStats]
    region: str


class HealthResponse(BaseModel):
    status: str
    version: str
