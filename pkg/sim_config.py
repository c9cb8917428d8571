# sim_config.py

from __future__ import annotations

import logging
from typing import Annotated, Dict, List, Optional, Set, Tuple

import orjson
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from core_model import MAX_MESH_DIM, MeshCoordinate, Mode, VNoCError
from processing_element import ServiceModelParams, known_pe_types, service_model
from workload import DEFAULT_RSA_EXPONENT, DEFAULT_RSA_MODULUS, Mix

logger = logging.getLogger(__name__)

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3

NonNegative = Annotated[int, Field(ge=0)]
Coord = Tuple[NonNegative, NonNegative]


class ConfigError(VNoCError):
    pass


class SchemaError(ConfigError):
    pass


class SemanticError(ConfigError):
    pass


# what build() raises for a config whose roles cannot be laid out
InvalidConfig = SemanticError


# ---------------------------------------------------------
# Schema
# ---------------------------------------------------------


class _Block(BaseModel):
    model_config = ConfigDict(extra="forbid")


class MeshBlock(_Block):
    width: int = Field(default=3, ge=1, le=MAX_MESH_DIM)
    height: int = Field(default=3, ge=1, le=MAX_MESH_DIM)


class PRRSpec(_Block):
    node: Coord
    pe_type: Optional[str] = None


def _default_hosts() -> List[Coord]:
    return [(0, 1), (0, 2), (1, 0), (2, 0)]


def _default_prrs() -> List[PRRSpec]:
    return [
        PRRSpec(node=(1, 1)),
        PRRSpec(node=(2, 1), pe_type="GCD"),
        PRRSpec(node=(1, 2), pe_type="RSA"),
        PRRSpec(node=(2, 2)),
    ]


class RolesBlock(_Block):
    manager: Optional[Coord] = (0, 0)
    hosts: List[Coord] = Field(default_factory=_default_hosts)
    prrs: List[PRRSpec] = Field(default_factory=_default_prrs)


class RouterBlock(_Block):
    buffer_depth: int = Field(default=4, ge=1)
    send_queue: int = Field(default=8, ge=1)


class PEBlock(_Block):
    queue_capacity: int = Field(default=4, ge=1)


class PolicyBlock(_Block):
    prefer_virtualize_over_reconfig: bool = False


class WorkloadBlock(_Block):
    n_tasks: int = Field(default=4, ge=1)
    mix: Mix = Mix.MIXED
    num_requests: int = Field(default=16, ge=1)
    think_cycles: int = Field(default=1000, ge=0)
    arrival_cycle: int = Field(default=0, ge=0)
    arrival_interval: int = Field(default=0, ge=0)
    arrival_cycles: Optional[List[NonNegative]] = None
    rsa_exponent: int = Field(default=DEFAULT_RSA_EXPONENT, ge=1, le=0xFFFFFFFF)
    rsa_modulus: int = Field(default=DEFAULT_RSA_MODULUS, ge=2, le=0xFFFFFFFF)
    fixed_operands: Dict[str, List[Annotated[int, Field(ge=0, le=0xFFFFFFFF)]]] = Field(
        default_factory=dict
    )


class SimConfig(_Block):
    """
    One simulation run. Every block has documented defaults, so `{}` is a
    valid config (3x3 mesh, vnoc mode, four mixed tasks).
    """

    mesh: MeshBlock = Field(default_factory=MeshBlock)
    roles: RolesBlock = Field(default_factory=RolesBlock)
    mode: Mode = Mode.VNOC
    router: RouterBlock = Field(default_factory=RouterBlock)
    pe: PEBlock = Field(default_factory=PEBlock)
    service: ServiceModelParams = Field(default_factory=ServiceModelParams)
    policy: PolicyBlock = Field(default_factory=PolicyBlock)
    workload: WorkloadBlock = Field(default_factory=WorkloadBlock)
    seed: int = Field(default=1, ge=0, le=(1 << 64) - 1)
    watchdog: int = Field(default=50_000_000, ge=1)
    trace: Optional[str] = None

    # -- convenience ----------------------------------------------------

    @property
    def manager_node(self) -> MeshCoordinate:
        return MeshCoordinate(*self.roles.manager)

    @property
    def host_nodes(self) -> List[MeshCoordinate]:
        return [MeshCoordinate(*h) for h in self.roles.hosts]

    @property
    def prr_nodes(self) -> Dict[MeshCoordinate, Optional[str]]:
        return {MeshCoordinate(*p.node): p.pe_type for p in self.roles.prrs}

    def with_overrides(
        self,
        mode: Optional[Mode] = None,
        seed: Optional[int] = None,
        n_tasks: Optional[int] = None,
        trace: Optional[str] = None,
    ) -> SimConfig:
        """Copy with CLI-style overrides applied; the copy is re-validated."""
        data = self.model_dump(mode="json")
        if mode is not None:
            data["mode"] = Mode(mode).value
        if seed is not None:
            data["seed"] = seed
        if n_tasks is not None:
            data["workload"]["n_tasks"] = n_tasks
        if trace is not None:
            data["trace"] = trace
        try:
            updated = SimConfig.model_validate(data)
        except ValidationError as exc:
            raise SchemaError(_schema_message(exc)) from exc
        return validate_config(updated)


# ---------------------------------------------------------
# Semantic checks
# ---------------------------------------------------------


def _check_bounds(config: SimConfig, coord: Coord, role: str) -> None:
    x, y = coord
    if x >= config.mesh.width or y >= config.mesh.height:
        raise SemanticError(
            f"{role} node ({x},{y}) is outside the {config.mesh.width}x{config.mesh.height} mesh"
        )


def validate_config(config: SimConfig) -> SimConfig:
    """
    Purpose:
        Cross-field checks the schema cannot express.

    Raises:
        SemanticError: missing manager, empty host list, no PRR, a node out
            of bounds, two roles on one node, an unknown PE type, or a
            workload that cannot be generated.
    """
    roles = config.roles
    if roles.manager is None:
        raise SemanticError("roles.manager: a manager node is required")
    if not roles.hosts:
        raise SemanticError("roles.hosts: at least one host node is required")
    if not roles.prrs:
        raise SemanticError("roles.prrs: at least one PRR node is required")

    seen: Set[Coord] = set()

    def claim(coord: Coord, role: str) -> None:
        coord = tuple(coord)
        _check_bounds(config, coord, role)
        if coord in seen:
            raise SemanticError(f"{role} node ({coord[0]},{coord[1]}) already has an attachment")
        seen.add(coord)

    claim(roles.manager, "manager")
    for host in roles.hosts:
        claim(host, "host")
    for prr in roles.prrs:
        claim(prr.node, "PRR")
        if prr.pe_type is not None and prr.pe_type not in known_pe_types():
            raise SemanticError(f"PRR ({prr.node[0]},{prr.node[1]}): unknown PE type {prr.pe_type!r}")

    wl = config.workload
    if wl.arrival_cycles is not None and len(wl.arrival_cycles) < wl.n_tasks:
        raise SemanticError(
            f"workload.arrival_cycles lists {len(wl.arrival_cycles)} entries for {wl.n_tasks} tasks"
        )
    for pe_type, operands in wl.fixed_operands.items():
        if pe_type not in known_pe_types():
            raise SemanticError(f"workload.fixed_operands: unknown PE type {pe_type!r}")
        arity = service_model(pe_type).arity
        if len(operands) != arity:
            raise SemanticError(
                f"workload.fixed_operands.{pe_type}: expected {arity} operands, got {len(operands)}"
            )
        problem = _operand_problem(pe_type, operands)
        if problem is not None:
            raise SemanticError(f"workload.fixed_operands.{pe_type}: {problem}")
    return config


def _operand_problem(pe_type: str, operands: List[int]) -> Optional[str]:
    if pe_type == "GCD" and min(operands) < 1:
        return "GCD operands must be nonzero"
    if pe_type == "RSA":
        _, e, n = operands
        if e < 1:
            return "RSA exponent must be >= 1"
        if n < 2:
            return "RSA modulus must be >= 2"
    return None


def _schema_message(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        path = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{path}: {err['msg']}")
    return "; ".join(parts)


def parse_config(text: str | bytes) -> SimConfig:
    """
    Purpose:
        Parse and validate a JSON config document.

    Args:
        text: UTF-8 JSON text.

    Returns:
        SimConfig with defaults filled in.

    Raises:
        SchemaError: malformed JSON, unknown fields or out-of-range values.
        SemanticError: see `validate_config`.

    Example usage:
        >>> parse_config('{"workload": {"n_tasks": 2}}').workload.mix
        <Mix.MIXED: 'mixed'>
    """
    try:
        config = SimConfig.model_validate_json(text)
    except ValidationError as exc:
        raise SchemaError(_schema_message(exc)) from exc
    return validate_config(config)


def load_config(path: str) -> SimConfig:
    with open(path, "rb") as fh:
        return parse_config(fh.read())


# ---------------------------------------------------------
# Digests
# ---------------------------------------------------------


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def canonical_json(config: SimConfig, exclude: Set[str]) -> bytes:
    return orjson.dumps(config.model_dump(mode="json", exclude=exclude), option=orjson.OPT_SORT_KEYS)


def config_digest(config: SimConfig) -> str:
    """FNV-1a 64 of the canonical config, ignoring where the trace goes."""
    return f"{fnv1a_64(canonical_json(config, {'trace'})):016x}"


def workload_digest(config: SimConfig) -> str:
    """Like `config_digest` but also blind to the mode: baseline and vnoc
    runs of one experiment share it."""
    return f"{fnv1a_64(canonical_json(config, {'trace', 'mode'})):016x}"


# ---------------------------------------------------------
# Process settings
# ---------------------------------------------------------


class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="VNOC_", extra="ignore")

    log_level: str = "INFO"
    api_host: str = "0.0.0.0"
    api_port: int = 8032
    sweep_workers: int = Field(default=1, ge=1)


def get_settings() -> Settings:
    load_dotenv()
    return Settings()
