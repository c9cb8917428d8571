# core_model.py

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import List, Optional, Sequence, Tuple

MAX_MESH_DIM = 16
MAX_PAYLOAD_WORDS = 127
FLIT_MASK = 0xFFFF
WORD_MASK = 0xFFFFFFFF
ID_MASK = 0xFFFF
HEADER_FLITS = 4

# ---------------------------------------------------------
# Errors
# ---------------------------------------------------------


class VNoCError(Exception):
    """Root of every simulator error."""


class SimulationFault(VNoCError, RuntimeError):
    """A run-time fault inside the simulated system."""


class IllegalTransition(VNoCError):
    """A router control command was issued in a state that forbids it."""


class UnexpectedMessage(SimulationFault):
    """A message arrived that its receiver's protocol state does not allow."""


class PayloadTooLarge(VNoCError, ValueError):
    """More payload words than the size flit can count."""


class MalformedPacket(VNoCError, ValueError):
    """A flit sequence that does not decode to a message."""


class AddressOutOfRange(VNoCError, ValueError):
    """A coordinate that does not fit the 4-bit address fields."""


class FieldOutOfRange(VNoCError, ValueError):
    """A message id or payload word too wide for its flits."""


# ---------------------------------------------------------
# Value types
# ---------------------------------------------------------


class Mode(str, Enum):
    """Router flavor of a whole simulation."""

    BASELINE = "baseline"
    VNOC = "vnoc"


@dataclass(frozen=True, order=True)
class MeshCoordinate:
    x: int
    y: int

    def __post_init__(self) -> None:
        if self.x < 0 or self.y < 0:
            raise AddressOutOfRange(f"negative mesh coordinate ({self.x},{self.y})")

    def sort_key(self) -> Tuple[int, int]:
        """Row-major ordering key: (y, x)."""
        return (self.y, self.x)

    def manhattan(self, other: MeshCoordinate) -> int:
        return abs(self.x - other.x) + abs(self.y - other.y)

    def __str__(self) -> str:
        return f"({self.x},{self.y})"


class SlotId(IntEnum):
    SLOT_0 = 0
    SLOT_1 = 1


@dataclass(frozen=True)
class VirtualAddress:
    node: MeshCoordinate
    slot: SlotId = SlotId.SLOT_0

    def __str__(self) -> str:
        return f"{self.node}/slot{int(self.slot)}"


class MessageKind(IntEnum):
    COMPUTE_REQ = 0
    COMPUTE_REP = 1
    MAP_REQ = 2
    MAP_GRANT = 3
    RELEASE = 4
    RELEASE_ACK = 5
    ENABLE_PORT = 6
    ENABLE_ACK = 7
    DISABLE_PORT = 8
    DISABLE_ACK = 9


CONTROL_KINDS = frozenset({MessageKind.ENABLE_PORT, MessageKind.DISABLE_PORT})


@dataclass(frozen=True)
class Message:
    id: int
    kind: MessageKind
    src: VirtualAddress
    dst: VirtualAddress
    payload: Tuple[int, ...] = ()

    @property
    def key(self) -> Tuple[VirtualAddress, MessageKind, int]:
        """(src, kind, id): unique per packet within a run."""
        return (self.src, self.kind, self.id)

    @property
    def flit_count(self) -> int:
        return HEADER_FLITS + 2 * len(self.payload)


@dataclass(frozen=True)
class Flit:
    """
    One 16-bit flow-control unit. `trace_tag` is (packet id, ordinal) and is
    excluded from equality; nothing in the simulator branches on it.
    """

    value: int
    trace_tag: Optional[Tuple[int, int]] = field(default=None, compare=False)


# ---------------------------------------------------------
# Codec
# ---------------------------------------------------------


def _check_address(addr: VirtualAddress, role: str) -> None:
    node = addr.node
    if node.x >= MAX_MESH_DIM or node.y >= MAX_MESH_DIM:
        raise AddressOutOfRange(
            f"{role} node {node} does not fit the 4-bit address fields"
        )


def encode_packet(msg: Message) -> List[Flit]:
    """
    Serialize a message into its wire flits.

    Layout:
        [0] header : dst slot bit 8, dst x bits 7..4, dst y bits 3..0
        [1] size   : number of flits that follow (2 + 2 * |payload|)
        [2] control: kind bits 12..9, src slot bit 8, src x 7..4, src y 3..0
        [3] id
        [4..] each 32-bit payload word as two flits, high half first

    Example usage:
        >>> m = Message(7, MessageKind.COMPUTE_REQ,
        ...             VirtualAddress(MeshCoordinate(0, 1)),
        ...             VirtualAddress(MeshCoordinate(2, 1)), (48, 18))
        >>> [f.value for f in encode_packet(m)]
        [33, 6, 1, 7, 0, 48, 0, 18]
    """
    if len(msg.payload) > MAX_PAYLOAD_WORDS:
        raise PayloadTooLarge(
            f"payload of {len(msg.payload)} words exceeds {MAX_PAYLOAD_WORDS}"
        )
    _check_address(msg.dst, "destination")
    _check_address(msg.src, "source")
    if not 0 <= msg.id <= ID_MASK:
        raise FieldOutOfRange(f"message id {msg.id} does not fit 16 bits")
    for i, word in enumerate(msg.payload):
        if not 0 <= word <= WORD_MASK:
            raise FieldOutOfRange(f"payload word {i} ({word}) does not fit 32 bits")

    header = (int(msg.dst.slot) << 8) | (msg.dst.node.x << 4) | msg.dst.node.y
    control = (
        (int(msg.kind) << 9)
        | (int(msg.src.slot) << 8)
        | (msg.src.node.x << 4)
        | msg.src.node.y
    )
    values = [header, 2 + 2 * len(msg.payload), control, msg.id]
    for word in msg.payload:
        values.append(word >> 16)
        values.append(word & FLIT_MASK)

    return [Flit(v, (msg.id, i)) for i, v in enumerate(values)]


def decode_packet(flits: Sequence[Flit]) -> Message:
    """Exact inverse of `encode_packet`."""
    if len(flits) < HEADER_FLITS:
        raise MalformedPacket(f"packet of {len(flits)} flits is shorter than its header")
    values = [f.value & FLIT_MASK for f in flits]
    size = values[1]
    if len(values) != size + 2:
        raise MalformedPacket(
            f"size flit says {size} flits follow, got {len(values) - 2}"
        )
    body = size - 2
    if body % 2:
        raise MalformedPacket(f"odd payload flit count {body}")

    kind_code = (values[2] >> 9) & 0xF
    try:
        kind = MessageKind(kind_code)
    except ValueError:
        raise MalformedPacket(f"unknown message kind code {kind_code}") from None

    header, control = values[0], values[2]
    dst = VirtualAddress(
        MeshCoordinate((header >> 4) & 0xF, header & 0xF), SlotId((header >> 8) & 1)
    )
    src = VirtualAddress(
        MeshCoordinate((control >> 4) & 0xF, control & 0xF), SlotId((control >> 8) & 1)
    )
    payload = tuple(
        (values[i] << 16) | values[i + 1] for i in range(HEADER_FLITS, len(values), 2)
    )
    return Message(values[3], kind, src, dst, payload)


def header_destination(flit: Flit) -> VirtualAddress:
    """Destination carried by a header flit; used by routers at routing time."""
    v = flit.value
    return VirtualAddress(MeshCoordinate((v >> 4) & 0xF, v & 0xF), SlotId((v >> 8) & 1))
