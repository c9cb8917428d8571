import random

import pytest

from core_model import (
    AddressOutOfRange,
    FieldOutOfRange,
    Flit,
    MalformedPacket,
    MeshCoordinate,
    Message,
    MessageKind,
    PayloadTooLarge,
    SlotId,
    VirtualAddress,
    decode_packet,
    encode_packet,
    header_destination,
)

EXAMPLE_FLITS = [0x0021, 0x0006, 0x0001, 0x0007, 0x0000, 0x0030, 0x0000, 0x0012]


def test_encode_compute_request_example(make_message):
    msg = make_message()
    assert [f.value for f in encode_packet(msg)] == EXAMPLE_FLITS


def test_decode_is_inverse_of_example(make_message):
    flits = [Flit(v) for v in EXAMPLE_FLITS]
    assert decode_packet(flits) == make_message()


def test_flits_carry_trace_tags_that_do_not_affect_equality(make_message):
    flits = encode_packet(make_message())
    assert flits[0].trace_tag == (7, 0)
    assert flits[7].trace_tag == (7, 7)
    assert flits[3] == Flit(0x0007)


def test_empty_payload_is_four_flits(make_message):
    msg = make_message(kind=MessageKind.RELEASE_ACK, payload=())
    flits = encode_packet(msg)
    assert len(flits) == 4
    assert flits[1].value == 2
    assert msg.flit_count == 4


def test_destination_slot_one_sets_header_bit_8(make_message):
    msg = make_message(dst=(2, 1, 1))
    assert encode_packet(msg)[0].value == 0x0021 | 0x0100
    assert header_destination(encode_packet(msg)[0]) == msg.dst


def test_wide_words_split_high_half_first(make_message):
    msg = make_message(payload=(0xDEADBEEF,))
    values = [f.value for f in encode_packet(msg)]
    assert values[4:] == [0xDEAD, 0xBEEF]
    assert decode_packet(encode_packet(msg)).payload == (0xDEADBEEF,)


def test_payload_limit(make_message):
    assert make_message(payload=(1,) * 127).flit_count == 258
    encode_packet(make_message(payload=(1,) * 127))
    with pytest.raises(PayloadTooLarge):
        encode_packet(make_message(payload=(1,) * 128))


def test_address_must_fit_four_bits(make_message):
    with pytest.raises(AddressOutOfRange):
        encode_packet(make_message(dst=(16, 0, 0)))
    with pytest.raises(AddressOutOfRange):
        MeshCoordinate(-1, 0)


def test_size_mismatch_is_malformed():
    with pytest.raises(MalformedPacket):
        decode_packet([Flit(v) for v in [0x0021, 0x0005, 1, 7, 0, 48, 0, 18]])


def test_short_or_unknown_packets_are_malformed():
    with pytest.raises(MalformedPacket):
        decode_packet([Flit(0x0021), Flit(2)])
    with pytest.raises(MalformedPacket):
        decode_packet([Flit(0x0021), Flit(2), Flit(15 << 9), Flit(0)])
    with pytest.raises(MalformedPacket):
        decode_packet([Flit(0x0021), Flit(3), Flit(1), Flit(0), Flit(0)])


def test_control_flit_carries_kind_and_source():
    msg = Message(
        3,
        MessageKind.DISABLE_ACK,
        VirtualAddress(MeshCoordinate(2, 1), SlotId.SLOT_1),
        VirtualAddress(MeshCoordinate(0, 0)),
        (1,),
    )
    control = encode_packet(msg)[2].value
    assert control >> 9 == int(MessageKind.DISABLE_ACK)
    assert (control >> 8) & 1 == 1
    assert control & 0xFF == 0x21
    assert decode_packet(encode_packet(msg)) == msg


def test_coordinate_ordering_is_row_major():
    coords = [MeshCoordinate(1, 0), MeshCoordinate(0, 1), MeshCoordinate(0, 0)]
    assert sorted(coords, key=MeshCoordinate.sort_key) == [
        MeshCoordinate(0, 0),
        MeshCoordinate(1, 0),
        MeshCoordinate(0, 1),
    ]
    assert MeshCoordinate(2, 2).manhattan(MeshCoordinate(0, 1)) == 3


def test_wide_ids_and_words_are_rejected(make_message):
    with pytest.raises(FieldOutOfRange):
        encode_packet(make_message(msg_id=0x10000))
    with pytest.raises(FieldOutOfRange):
        encode_packet(make_message(msg_id=-1))
    with pytest.raises(FieldOutOfRange):
        encode_packet(make_message(payload=(1 << 33,)))
    with pytest.raises(FieldOutOfRange):
        encode_packet(make_message(payload=(3, -1)))
    encode_packet(make_message(msg_id=0xFFFF, payload=(0xFFFFFFFF,)))


def _random_message(rng):
    def address():
        return VirtualAddress(
            MeshCoordinate(rng.randrange(16), rng.randrange(16)), SlotId(rng.randrange(2))
        )

    return Message(
        rng.randrange(1 << 16),
        rng.choice(list(MessageKind)),
        address(),
        address(),
        tuple(rng.randrange(1 << 32) for _ in range(rng.choice([0, 1, 2, 3, 4, 127]))),
    )


def test_random_messages_round_trip_with_length_law():
    rng = random.Random(31)
    for _ in range(10_000):
        msg = _random_message(rng)
        flits = encode_packet(msg)
        assert len(flits) == 4 + 2 * len(msg.payload) == msg.flit_count
        assert flits[1].value == len(flits) - 2
        assert all(0 <= f.value <= 0xFFFF for f in flits)
        assert header_destination(flits[0]) == msg.dst
        assert decode_packet(flits) == msg
