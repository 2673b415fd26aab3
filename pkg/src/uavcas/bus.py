"""Coordination bus: periodic state broadcast between cooperative vehicles.

Every vehicle publishes one message per control cycle: its cycle-start pose
and velocity, the input sequence it just planned (when the trajectory layer
ran), and a short lookahead of reference points.  Transport is either an
in-process mailbox or loopback UDP datagrams carrying one JSON object each;
both deliver whole messages or nothing, and receivers always keep only the
newest message per sender.
"""

from __future__ import annotations

import json
import logging
import select
import socket
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MAX_DATAGRAM = 8192


@dataclass
class StateMessage:
    """One broadcast: where the sender was at the start of `cycle`, where it
    intends to go (sequence and/or reference lookahead)."""

    sender: int
    cycle: int
    x: float
    y: float
    phi: float
    vx: float
    vy: float
    sequence: np.ndarray | None = None       # planned heading rates, rad/s
    ref_lookahead: np.ndarray | None = None  # (m, 2) expected track points

    def __post_init__(self) -> None:
        if self.sequence is not None:
            self.sequence = np.asarray(self.sequence, dtype=np.float64)
        if self.ref_lookahead is not None:
            self.ref_lookahead = np.asarray(self.ref_lookahead, dtype=np.float64)


def encode_message(msg: StateMessage) -> bytes:
    """Serialize to one JSON line.  repr-precision floats survive the trip."""
    body = {
        "sender": msg.sender,
        "cycle": msg.cycle,
        "x": msg.x,
        "y": msg.y,
        "phi": msg.phi,
        "vx": msg.vx,
        "vy": msg.vy,
    }
    if msg.sequence is not None:
        body["seq"] = msg.sequence.tolist()
    if msg.ref_lookahead is not None:
        body["ref"] = msg.ref_lookahead.tolist()
    return (json.dumps(body, separators=(",", ":")) + "\n").encode("ascii")


def decode_message(data: bytes) -> StateMessage:
    body = json.loads(data.decode("ascii"))
    return StateMessage(
        sender=int(body["sender"]),
        cycle=int(body["cycle"]),
        x=float(body["x"]),
        y=float(body["y"]),
        phi=float(body["phi"]),
        vx=float(body["vx"]),
        vy=float(body["vy"]),
        sequence=np.asarray(body["seq"], dtype=np.float64) if "seq" in body else None,
        ref_lookahead=np.asarray(body["ref"], dtype=np.float64) if "ref" in body else None,
    )


class InProcessBus:
    """Shared mailbox for all vehicles in one process.

    publish() files the message under its sender; a second publish for the
    same sender and cycle replaces the first.  collect() returns, per other
    sender, the newest message strictly older than the asking cycle, and
    drops anything staler than max_stale_cycles.
    """

    def __init__(self, roster: list[int], max_stale_cycles: int = 10):
        self.roster = list(roster)
        self.max_stale_cycles = max_stale_cycles
        self._box: dict[int, StateMessage] = {}

    def publish(self, msg: StateMessage) -> None:
        held = self._box.get(msg.sender)
        if held is None or msg.cycle >= held.cycle:
            self._box[msg.sender] = msg

    def collect(self, self_id: int, cycle: int) -> list[StateMessage]:
        out = []
        for sender in self.roster:
            if sender == self_id:
                continue
            msg = self._box.get(sender)
            if msg is None or msg.cycle >= cycle:
                continue
            if cycle - msg.cycle > self.max_stale_cycles:
                log.debug("dropping stale message from %d (age %d cycles)",
                          sender, cycle - msg.cycle)
                continue
            out.append(msg)
        return out


class UdpBus:
    """One vehicle's endpoint on a fully connected loopback UDP mesh.

    Vehicle i binds port base_port + i and unicasts every publish to each
    other roster port.  Loopback delivery is synchronous, so messages
    published at the end of one cycle are readable at the next collect; a
    lost or oversized datagram is logged and simply missing, never fatal.
    """

    def __init__(self, self_id: int, roster: list[int], base_port: int,
                 host: str = "127.0.0.1", max_stale_cycles: int = 10):
        self.self_id = self_id
        self.roster = list(roster)
        self.base_port = base_port
        self.host = host
        self.max_stale_cycles = max_stale_cycles
        self._box: dict[int, StateMessage] = {}
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, base_port + self_id))
        self.sock.setblocking(False)

    def close(self) -> None:
        self.sock.close()

    def publish(self, msg: StateMessage) -> None:
        data = encode_message(msg)
        if len(data) > MAX_DATAGRAM:
            log.warning("message from %d exceeds %d bytes, dropped",
                        msg.sender, MAX_DATAGRAM)
            return
        for other in self.roster:
            if other == self.self_id:
                continue
            try:
                self.sock.sendto(data, (self.host, self.base_port + other))
            except OSError as exc:
                log.warning("send to %d failed: %s", other, exc)

    def _drain(self) -> None:
        while True:
            ready, _, _ = select.select([self.sock], [], [], 0.0)
            if not ready:
                return
            try:
                data, _ = self.sock.recvfrom(MAX_DATAGRAM)
            except OSError:
                return
            try:
                msg = decode_message(data)
            except (ValueError, KeyError) as exc:
                log.warning("undecodable datagram dropped: %s", exc)
                continue
            held = self._box.get(msg.sender)
            if held is None or msg.cycle >= held.cycle:
                self._box[msg.sender] = msg

    def collect(self, self_id: int, cycle: int) -> list[StateMessage]:
        self._drain()
        out = []
        for sender in self.roster:
            if sender == self_id:
                continue
            msg = self._box.get(sender)
            if msg is None or msg.cycle >= cycle:
                continue
            if cycle - msg.cycle > self.max_stale_cycles:
                continue
            out.append(msg)
        return out
