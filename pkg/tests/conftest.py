from pathlib import Path
from typing import Callable, Optional, Sequence

import pytest

from core_model import MeshCoordinate, Message, MessageKind, SlotId, VirtualAddress
from sim_config import SimConfig, load_config, parse_config
from sim_engine import Tracer

ROOT = Path(__file__).resolve().parent.parent
CONFIG_DIR = ROOT / "configs"


def vaddr(x: int, y: int, slot: int = 0) -> VirtualAddress:
    return VirtualAddress(MeshCoordinate(x, y), SlotId(slot))


@pytest.fixture()
def make_message() -> Callable[..., Message]:
    def _make(
        kind: MessageKind = MessageKind.COMPUTE_REQ,
        src: Sequence[int] = (0, 1, 0),
        dst: Sequence[int] = (2, 1, 0),
        payload: Sequence[int] = (48, 18),
        msg_id: int = 7,
    ) -> Message:
        return Message(msg_id, kind, vaddr(*src), vaddr(*dst), tuple(payload))

    return _make


@pytest.fixture()
def default_config() -> SimConfig:
    return parse_config("{}")


@pytest.fixture()
def suite_config() -> Callable[[str], SimConfig]:
    def _load(name: str) -> SimConfig:
        return load_config(str(CONFIG_DIR / name))

    return _load


@pytest.fixture()
def tracer() -> Tracer:
    return Tracer()


@pytest.fixture()
def small_config() -> Callable[..., SimConfig]:
    """A fast config: one GCD PE with a constant service time."""

    def _make(
        n_tasks: int = 2,
        num_requests: int = 4,
        think_cycles: int = 200,
        service: int = 100,
        mode: str = "vnoc",
        watchdog: Optional[int] = None,
    ) -> SimConfig:
        data = {
            "mode": mode,
            "roles": {
                "manager": [0, 0],
                "hosts": [[0, 1], [1, 0], [0, 2], [2, 0]],
                "prrs": [{"node": [2, 1], "pe_type": "GCD"}],
            },
            "service": {"gcd_base": service - 24, "gcd_per_iter": 8},
            "workload": {
                "n_tasks": n_tasks,
                "mix": "gcd_only",
                "num_requests": num_requests,
                "think_cycles": think_cycles,
                "fixed_operands": {"GCD": [48, 18]},
            },
        }
        if watchdog is not None:
            data["watchdog"] = watchdog
        return SimConfig.model_validate(data)

    return _make
