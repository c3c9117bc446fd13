from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, model_validator

from app.core.config import REPORT_SCHEMA_VERSION
from app.utils.expr import ExpressionError, parse, parse_graph


EXPERIMENT_IDS = (
    "mcf-convergence",
    "brakke-verify",
    "brakke-violate",
    "blowup",
    "mollify-lemmas",
    "projection-maps",
    "ac-circle",
    "ac-forced-flat",
    "ac-tderiv",
    "exponents",
    "lpq",
)

# dotted names each experiment cannot run without
REQUIRED: Dict[str, List[str]] = {
    "mcf-convergence": ["grid.levels", "physics.exact"],
    "brakke-verify": ["grid.levels"],
    "brakke-violate": ["grid.N", "grid.M", "physics.flow"],
    "blowup": ["grid.N", "grid.M", "physics.flow", "physics.lambdas", "physics.s"],
    "mollify-lemmas": ["grid.N", "grid.M", "physics.flow", "physics.eps", "physics.alpha"],
    "projection-maps": ["grid.N", "grid.M", "physics.flow", "physics.eps", "physics.alpha", "physics.test_function"],
    "ac-circle": ["physics.eps", "physics.R0", "physics.t_final"],
    "ac-forced-flat": ["physics.eps", "physics.c", "physics.t_final", "physics.test_function"],
    "ac-tderiv": ["physics.eps", "physics.R0", "physics.t_final", "physics.test_function"],
    "exponents": ["physics.k", "physics.p", "physics.q", "physics.beta", "physics.gamma"],
    "lpq": ["grid.N", "grid.M", "physics.flow", "physics.forcing", "physics.p", "physics.q"],
}


class GridSection(BaseModel):
    n: int = Field(default=2, ge=2, le=3)
    N: Optional[int] = None
    M: Optional[int] = None
    t0: float = 0.0
    t1: float = 1.0
    levels: Optional[List[int]] = None


class TestFunctionSpec(BaseModel):
    __test__ = False

    center: List[float]
    radius: float
    height: Optional[float] = None
    time: Optional[float] = None
    time_radius: Optional[float] = None
    profile: str = "bump"


class PhysicsSection(BaseModel):
    flow: Optional[str] = None
    exact: Optional[str] = None
    forcing: Optional[List[str]] = None
    eps: Optional[List[float]] = None
    lambdas: Optional[List[float]] = None
    alpha: Optional[float] = None
    p: Optional[float] = None
    q: Optional[float] = None
    k: Optional[int] = None
    beta: Optional[float] = None
    gamma: Optional[float] = None
    c: Optional[float] = None
    R0: Optional[float] = None
    y: Optional[List[float]] = None
    s: Optional[float] = None
    t_final: Optional[float] = None
    height: float = 0.0
    snapshots: int = Field(default=10, ge=2)
    test_function: Optional[TestFunctionSpec] = None
    shape_radius: float = 1.0
    shape_offset: float = 0.5
    dt_factor: float = 1.0
    h_ratio: float = 0.25
    error_constant: float = 1.0
    tol_constant: float = 10.0
    expected: Dict[str, float] = Field(default_factory=dict)


class ExperimentConfig(BaseModel):
    experiment: str
    output_dir: str = "lab-out"
    seed: int = 0
    grid: GridSection = Field(default_factory=GridSection)
    physics: PhysicsSection = Field(default_factory=PhysicsSection)

    @model_validator(mode="after")
    def _check(self):
        if self.experiment not in EXPERIMENT_IDS:
            raise ValueError(f"unknown experiment '{self.experiment}' (known: {', '.join(EXPERIMENT_IDS)})")
        missing = []
        for dotted in REQUIRED[self.experiment]:
            section, key = dotted.split(".")
            if getattr(getattr(self, section), key) is None:
                missing.append(dotted)
        if missing:
            raise ValueError(f"{self.experiment} requires {', '.join(missing)}")
        n = self.grid.n
        try:
            for key in ("flow", "exact"):
                text = getattr(self.physics, key)
                if text is not None:
                    parse_graph(text, n)
            if self.physics.forcing is not None:
                if len(self.physics.forcing) != n:
                    raise ValueError(f"physics.forcing needs {n} components, got {len(self.physics.forcing)}")
                for comp in self.physics.forcing:
                    parse(comp, n)
        except ExpressionError as ex:
            raise ValueError(f"physics expression: {ex}") from ex
        return self


class Verdict(BaseModel):
    name: str
    passed: bool
    value: Optional[float] = None
    threshold: Optional[float] = None
    detail: Optional[str] = None


class RunReport(BaseModel):
    schema_version: int = REPORT_SCHEMA_VERSION
    experiment: str
    input: Dict[str, Any]
    metrics: Dict[str, Any] = Field(default_factory=dict)
    verdicts: List[Verdict] = Field(default_factory=list)
    artifacts: List[str] = Field(default_factory=list)
    wall_clock_s: float = 0.0

    @property
    def passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def to_json_dict(self) -> Dict[str, Any]:
        data = self.model_dump()
        data["passed"] = self.passed
        return data
