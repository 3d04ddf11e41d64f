"""Protocol-buffer wire codec for the GTFS-realtime message subset.

Implements exactly the messages a trip-update / vehicle-position feed
needs: FeedMessage, FeedHeader, FeedEntity, TripUpdate, TripDescriptor,
StopTimeUpdate, StopTimeEvent, VehiclePosition and Position. Field
numbers and scalar types follow the published gtfs-realtime.proto,
version 2.0.

Encoding is canonical: fields in ascending number order, entities
sorted by id, stop time updates sorted by stop sequence. Decoding is
deliberately strict and rejects field numbers outside the subset, so a
malformed or truncated feed fails loudly instead of being half-read.
"""

from __future__ import annotations

import struct

from .model import (
    RtEntity,
    RtFeedMessage,
    RtStopTimeUpdate,
    RtTripUpdate,
    RtVehiclePosition,
)

_WIRE_VARINT = 0
_WIRE_I64 = 1
_WIRE_LEN = 2
_WIRE_I32 = 5

_U64 = 1 << 64
_U32 = 1 << 32


class WireError(Exception):
    pass


# ----------------------------------------------------------------- varints


def encode_varint(value: int) -> bytes:
    if value < 0 or value >= _U64:
        raise WireError(f"varint out of range: {value}")
    out = bytearray()
    while True:
        byte = value & 0x7F
        value >>= 7
        if value:
            out.append(byte | 0x80)
        else:
            out.append(byte)
            return bytes(out)


def decode_varint(data: bytes, pos: int) -> tuple[int, int]:
    """Return (value, next position); raises on truncation or overlong runs."""
    result = 0
    shift = 0
    while True:
        if pos >= len(data):
            raise WireError("truncated varint")
        if shift >= 64:
            raise WireError("varint exceeds 64 bits")
        byte = data[pos]
        pos += 1
        result |= (byte & 0x7F) << shift
        if not byte & 0x80:
            if result >= _U64:
                raise WireError("varint exceeds 64 bits")
            return result, pos
        shift += 7


# ------------------------------------------------------------ field emitters


def _key(field_number: int, wire_type: int) -> bytes:
    return encode_varint((field_number << 3) | wire_type)


def _emit_varint(out: bytearray, field_number: int, value: int) -> None:
    # Negative int32/int64 values go out sign-extended to 64 bits.
    out += _key(field_number, _WIRE_VARINT)
    out += encode_varint(value + _U64 if value < 0 else value)


def _emit_string(out: bytearray, field_number: int, value: str) -> None:
    raw = value.encode("utf-8")
    out += _key(field_number, _WIRE_LEN)
    out += encode_varint(len(raw))
    out += raw


def _emit_float(out: bytearray, field_number: int, value: float) -> None:
    out += _key(field_number, _WIRE_I32)
    out += struct.pack("<f", value)


def _emit_message(out: bytearray, field_number: int, payload: bytes) -> None:
    out += _key(field_number, _WIRE_LEN)
    out += encode_varint(len(payload))
    out += payload


# ---------------------------------------------------------------- encoding


def _encode_stop_time_event(delay_seconds: int) -> bytes:
    out = bytearray()
    _emit_varint(out, 1, delay_seconds)
    return bytes(out)


def _encode_stop_time_update(stu: RtStopTimeUpdate) -> bytes:
    out = bytearray()
    _emit_varint(out, 1, stu.stop_sequence)
    _emit_message(out, 2, _encode_stop_time_event(stu.arrival_delay_seconds))
    _emit_string(out, 4, stu.stop_id)
    return bytes(out)


def _encode_trip_descriptor(trip_id: str) -> bytes:
    out = bytearray()
    _emit_string(out, 1, trip_id)
    return bytes(out)


def _encode_trip_update(tu: RtTripUpdate) -> bytes:
    out = bytearray()
    _emit_message(out, 1, _encode_trip_descriptor(tu.trip_id))
    for stu in sorted(tu.stop_time_updates, key=lambda s: s.stop_sequence):
        _emit_message(out, 2, _encode_stop_time_update(stu))
    if tu.timestamp is not None:
        _emit_varint(out, 4, tu.timestamp)
    return bytes(out)


def _encode_position(vp: RtVehiclePosition) -> bytes:
    out = bytearray()
    _emit_float(out, 1, vp.latitude)
    _emit_float(out, 2, vp.longitude)
    if vp.bearing is not None:
        _emit_float(out, 3, vp.bearing)
    return bytes(out)


def _encode_vehicle_position(vp: RtVehiclePosition) -> bytes:
    out = bytearray()
    if vp.trip_id is not None:
        _emit_message(out, 1, _encode_trip_descriptor(vp.trip_id))
    _emit_message(out, 2, _encode_position(vp))
    if vp.timestamp is not None:
        _emit_varint(out, 5, vp.timestamp)
    return bytes(out)


def _encode_entity(entity: RtEntity) -> bytes:
    out = bytearray()
    _emit_string(out, 1, entity.id)
    if entity.trip_update is not None:
        _emit_message(out, 3, _encode_trip_update(entity.trip_update))
    else:
        _emit_message(out, 4, _encode_vehicle_position(entity.vehicle_position))
    return bytes(out)


def _encode_header(msg: RtFeedMessage) -> bytes:
    out = bytearray()
    _emit_string(out, 1, msg.version)
    _emit_varint(out, 2, msg.incrementality)
    _emit_varint(out, 3, msg.timestamp)
    return bytes(out)


def encode_feed_message(msg: RtFeedMessage) -> bytes:
    seen: set[str] = set()
    for entity in msg.entities:
        if entity.id in seen:
            raise ValueError(f"duplicate entity id {entity.id!r}")
        seen.add(entity.id)
    out = bytearray()
    _emit_message(out, 1, _encode_header(msg))
    for entity in sorted(msg.entities, key=lambda e: e.id):
        _emit_message(out, 2, _encode_entity(entity))
    return bytes(out)


# ---------------------------------------------------------------- decoding

# Schema tables: field number -> (name, kind[, repeated]). Kinds are scalar
# tags or a nested schema dict; enums travel as plain varints.

_STOP_TIME_EVENT = {
    1: ("delay", "int32"),
    2: ("time", "int64"),
    3: ("uncertainty", "int32"),
}

_STOP_TIME_UPDATE = {
    1: ("stop_sequence", "uint32"),
    2: ("arrival", _STOP_TIME_EVENT),
    3: ("departure", _STOP_TIME_EVENT),
    4: ("stop_id", "string"),
    5: ("schedule_relationship", "enum"),
}

_TRIP_DESCRIPTOR = {
    1: ("trip_id", "string"),
    2: ("start_time", "string"),
    3: ("start_date", "string"),
    4: ("schedule_relationship", "enum"),
    5: ("route_id", "string"),
    6: ("direction_id", "uint32"),
}

_TRIP_UPDATE = {
    1: ("trip", _TRIP_DESCRIPTOR),
    2: ("stop_time_update", _STOP_TIME_UPDATE, "repeated"),
    4: ("timestamp", "uint64"),
    5: ("delay", "int32"),
}

_POSITION = {
    1: ("latitude", "float"),
    2: ("longitude", "float"),
    3: ("bearing", "float"),
    4: ("odometer", "double"),
    5: ("speed", "float"),
}

_VEHICLE_POSITION = {
    1: ("trip", _TRIP_DESCRIPTOR),
    2: ("position", _POSITION),
    3: ("current_stop_sequence", "uint32"),
    4: ("current_status", "enum"),
    5: ("timestamp", "uint64"),
    6: ("congestion_level", "enum"),
    7: ("stop_id", "string"),
}

_FEED_ENTITY = {
    1: ("id", "string"),
    2: ("is_deleted", "bool"),
    3: ("trip_update", _TRIP_UPDATE),
    4: ("vehicle", _VEHICLE_POSITION),
}

_FEED_HEADER = {
    1: ("gtfs_realtime_version", "string"),
    2: ("incrementality", "enum"),
    3: ("timestamp", "uint64"),
}

_FEED_MESSAGE = {
    1: ("header", _FEED_HEADER),
    2: ("entity", _FEED_ENTITY, "repeated"),
}

_VARINT_KINDS = {"int32", "int64", "uint32", "uint64", "enum", "bool"}


def _to_signed(raw: int, bits: int) -> int:
    raw &= (1 << bits) - 1
    if raw >= 1 << (bits - 1):
        raw -= 1 << bits
    return raw


def _decode_scalar(kind: str, data: bytes, wire_type: int, pos: int):
    if kind in _VARINT_KINDS:
        if wire_type != _WIRE_VARINT:
            raise WireError(f"expected varint, got wire type {wire_type}")
        raw, pos = decode_varint(data, pos)
        if kind == "int32":
            return _to_signed(raw, 32), pos
        if kind == "int64":
            return _to_signed(raw, 64), pos
        if kind == "bool":
            return bool(raw), pos
        return raw, pos
    if kind == "string":
        if wire_type != _WIRE_LEN:
            raise WireError(f"expected length-delimited, got wire type {wire_type}")
        size, pos = decode_varint(data, pos)
        if pos + size > len(data):
            raise WireError("truncated string")
        return data[pos:pos + size].decode("utf-8"), pos + size
    if kind == "float":
        if wire_type != _WIRE_I32:
            raise WireError(f"expected 32-bit, got wire type {wire_type}")
        if pos + 4 > len(data):
            raise WireError("truncated float")
        return struct.unpack_from("<f", data, pos)[0], pos + 4
    if kind == "double":
        if wire_type != _WIRE_I64:
            raise WireError(f"expected 64-bit, got wire type {wire_type}")
        if pos + 8 > len(data):
            raise WireError("truncated double")
        return struct.unpack_from("<d", data, pos)[0], pos + 8
    raise WireError(f"unhandled kind {kind!r}")


def _decode_message(data: bytes, schema: dict) -> dict:
    out: dict = {}
    pos = 0
    while pos < len(data):
        key, pos = decode_varint(data, pos)
        field_number, wire_type = key >> 3, key & 7
        spec = schema.get(field_number)
        if spec is None:
            raise WireError(f"unknown field number {field_number}")
        name, kind = spec[0], spec[1]
        repeated = len(spec) > 2
        if isinstance(kind, dict):
            if wire_type != _WIRE_LEN:
                raise WireError(f"expected submessage, got wire type {wire_type}")
            size, pos = decode_varint(data, pos)
            if pos + size > len(data):
                raise WireError("truncated submessage")
            value = _decode_message(data[pos:pos + size], kind)
            pos += size
        else:
            value, pos = _decode_scalar(kind, data, wire_type, pos)
        if repeated:
            out.setdefault(name, []).append(value)
        else:
            out[name] = value
    return out


def decode_feed_dict(data: bytes) -> dict:
    """Decode feed bytes into plain nested dicts, field names per the proto."""
    return _decode_message(data, _FEED_MESSAGE)


def _stu_from_dict(obj: dict) -> RtStopTimeUpdate:
    arrival = obj.get("arrival")
    if arrival is None or "delay" not in arrival:
        raise WireError("stop time update carries no arrival delay")
    return RtStopTimeUpdate(
        stop_id=obj.get("stop_id", ""),
        stop_sequence=obj.get("stop_sequence", 0),
        arrival_delay_seconds=arrival["delay"],
    )


def decode_feed_message(data: bytes) -> RtFeedMessage:
    """Decode feed bytes back into the typed message model."""
    raw = decode_feed_dict(data)
    header = raw.get("header")
    if header is None or "gtfs_realtime_version" not in header:
        raise WireError("feed has no header")
    entities = []
    for ent in raw.get("entity", ()):
        if "id" not in ent:
            raise WireError("entity carries no id")
        trip_update = None
        vehicle_position = None
        if "trip_update" in ent:
            tu = ent["trip_update"]
            trip = tu.get("trip", {})
            if "trip_id" not in trip:
                raise WireError("trip update carries no trip id")
            trip_update = RtTripUpdate(
                trip_id=trip["trip_id"],
                stop_time_updates=tuple(
                    _stu_from_dict(s) for s in tu.get("stop_time_update", ())
                ),
                timestamp=tu.get("timestamp"),
            )
        if "vehicle" in ent:
            vp = ent["vehicle"]
            position = vp.get("position")
            if position is None:
                raise WireError("vehicle position carries no position")
            vehicle_position = RtVehiclePosition(
                latitude=position["latitude"],
                longitude=position["longitude"],
                bearing=position.get("bearing"),
                trip_id=vp.get("trip", {}).get("trip_id"),
                timestamp=vp.get("timestamp"),
            )
        entities.append(RtEntity(
            id=ent["id"],
            trip_update=trip_update,
            vehicle_position=vehicle_position,
        ))
    return RtFeedMessage(
        timestamp=header.get("timestamp", 0),
        entities=tuple(entities),
        version=header["gtfs_realtime_version"],
        incrementality=header.get("incrementality", 0),
    )
