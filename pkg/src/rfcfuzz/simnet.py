"""Discrete-event simulation of toy TCP- and DCCP-like endpoints behind a malicious proxy.

Both endpoints talk through a proxy that applies one test strategy to every
packet of the targeted type. The proxy records the type of each packet it
sees before touching it; that ordered list is the packet-type trace used for
coverage.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from rfcfuzz.errors import ConfigurationError
from rfcfuzz.fuzzer import (Delivery, FieldModify, Inject, RandomBytes, TestStrategy,
                            packet_type_field, packet_type_values)
from rfcfuzz.grammar import PropertyKind, ProtocolGrammar


def internet_checksum(data: bytes) -> int:
    """RFC 1071 ones-complement checksum; odd input is zero-padded."""
    if len(data) % 2:
        data = bytes(data) + b"\x00"
    total = 0
    for i in range(0, len(data), 2):
        total += (data[i] << 8) | data[i + 1]
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def get_bits(buf: bytes, offset: int, size: int) -> int:
    """Big-endian unsigned value of ``size`` bits starting at bit ``offset``."""
    first, last = offset // 8, (offset + size - 1) // 8
    chunk = int.from_bytes(bytes(buf[first:last + 1]), "big")
    shift = (last + 1) * 8 - (offset + size)
    return (chunk >> shift) & ((1 << size) - 1)


def set_bits(buf: bytearray, offset: int, size: int, value: int) -> None:
    first, last = offset // 8, (offset + size - 1) // 8
    width = last - first + 1
    chunk = int.from_bytes(bytes(buf[first:last + 1]), "big")
    shift = width * 8 - (offset - first * 8) - size
    mask = ((1 << size) - 1) << shift
    chunk = (chunk & ~mask) | ((value << shift) & mask)
    buf[first:last + 1] = chunk.to_bytes(width, "big")


@dataclass(frozen=True)
class Layout:
    fields: tuple[tuple[str, int], ...]

    @property
    def bits(self) -> int:
        return sum(s for _, s in self.fields)

    def offsets(self) -> dict[str, tuple[int, int]]:
        out, pos = {}, 0
        for name, size in self.fields:
            out.setdefault(name, (pos, size))
            pos += size
        return out


def _encode(layout: Layout, values: dict, payload: bytes = b"") -> bytes:
    buf = bytearray(layout.bits // 8)
    pos = 0
    for name, size in layout.fields:
        set_bits(buf, pos, size, int(values.get(name, 0)) & ((1 << size) - 1))
        pos += size
    return bytes(buf) + payload


def _decode(layout: Layout, raw: bytes) -> dict:
    out, pos = {}, 0
    for name, size in layout.fields:
        out.setdefault(name, get_bits(raw, pos, size))
        pos += size
    return out


# -- protocols ------------------------------------------------------------------

FIN, SYN, RST, PSH, ACK, URG = 0x01, 0x02, 0x04, 0x08, 0x10, 0x20

TCP_LAYOUT = Layout((("Source Port", 16), ("Destination Port", 16),
                     ("Sequence Number", 32), ("Acknowledgment Number", 32),
                     ("Data Offset", 4), ("Reserved", 6), ("Control Bits", 6),
                     ("Window", 16), ("Checksum", 16), ("Urgent Pointer", 16)))
TCP_TYPES = {"SYN": SYN, "SYN-ACK": SYN | ACK, "ACK": ACK, "PSH-ACK": PSH | ACK,
             "FIN-ACK": FIN | ACK, "RST": RST, "RST-ACK": RST | ACK}

DCCP_LAYOUT = Layout((("Source Port", 16), ("Destination Port", 16), ("Data Offset", 8),
                      ("CCVal", 4), ("Checksum Coverage", 4), ("Checksum", 16),
                      ("Res", 3), ("Type", 4), ("X", 1), ("Reserved", 8),
                      ("Sequence Number", 48)))
DCCP_ACK_LAYOUT = Layout((("Ack Reserved", 16), ("Acknowledgement Number", 48)))
DCCP_TYPES = {"Request": 0, "Response": 1, "Data": 2, "Ack": 3, "DataAck": 4,
              "CloseReq": 5, "Close": 6, "Reset": 7, "Sync": 8, "SyncAck": 9}
DCCP_NO_ACK = (0, 2)


class ToyProtocol:
    name = ""
    layout: Layout
    checksum_field = "Checksum"
    client_port, server_port = 40000, 80

    def header_len(self, raw: bytes) -> int:
        return self.layout.bits // 8

    def fields(self, raw: bytes) -> dict:
        return _decode(self.layout, raw)

    def checksum(self, raw: bytes) -> int:
        off, size = self.layout.offsets()[self.checksum_field]
        buf = bytearray(raw)
        set_bits(buf, off, size, 0)
        return internet_checksum(bytes(buf))

    def seal(self, raw: bytes) -> bytes:
        buf = bytearray(raw)
        off, size = self.layout.offsets()[self.checksum_field]
        set_bits(buf, off, size, self.checksum(raw))
        return bytes(buf)

    def verify(self, raw: bytes) -> bool:
        if len(raw) < self.layout.bits // 8:
            return False
        off, size = self.layout.offsets()[self.checksum_field]
        return get_bits(raw, off, size) == self.checksum(raw)

    def type_name(self, raw: bytes) -> str:
        raise NotImplementedError

    def endpoints(self, sim) -> tuple["Endpoint", "Endpoint"]:
        raise NotImplementedError


class ToyTCP(ToyProtocol):
    name = "tcp"
    layout = TCP_LAYOUT
    _names = {v: k for k, v in TCP_TYPES.items()}

    def type_name(self, raw: bytes) -> str:
        flags = self.fields(raw)["Control Bits"]
        return self._names.get(flags, f"FLAGS-{flags:#04x}")

    def make(self, src, dst, seq, ack, flags, window=4096, payload=b"") -> bytes:
        raw = _encode(self.layout, {"Source Port": src, "Destination Port": dst,
                                    "Sequence Number": seq, "Acknowledgment Number": ack,
                                    "Data Offset": 5, "Control Bits": flags,
                                    "Window": window}, payload)
        return self.seal(raw)

    def endpoints(self, sim):
        return (TCPClient(sim, self, self.client_port, self.server_port, 1000),
                TCPServer(sim, self, self.server_port, self.client_port, 5000))


class ToyDCCP(ToyProtocol):
    name = "dccp"
    layout = DCCP_LAYOUT
    _names = {v: k for k, v in DCCP_TYPES.items()}

    def type_name(self, raw: bytes) -> str:
        t = self.fields(raw)["Type"]
        return self._names.get(t, f"TYPE-{t}")

    def parse(self, raw: bytes) -> tuple[dict, bytes] | None:
        base = self.layout.bits // 8
        if len(raw) < base:
            return None
        f = self.fields(raw)
        if f["Type"] in DCCP_NO_ACK:
            return f, raw[base:]
        if len(raw) < base + 8:
            return None
        f.update(_decode(DCCP_ACK_LAYOUT, raw[base:base + 8]))
        return f, raw[base + 8:]

    def make(self, src, dst, ptype, seq, ack=None, payload=b"") -> bytes:
        has_ack = ptype not in DCCP_NO_ACK
        raw = _encode(self.layout, {"Source Port": src, "Destination Port": dst,
                                    "Data Offset": 6 if has_ack else 4, "Type": ptype,
                                    "X": 1, "Sequence Number": seq})
        if has_ack:
            raw += _encode(DCCP_ACK_LAYOUT, {"Acknowledgement Number": ack or 0})
        return self.seal(raw + payload)

    def endpoints(self, sim):
        return (DCCPClient(sim, self, self.client_port, self.server_port, 100),
                DCCPServer(sim, self, self.server_port, self.client_port, 900))


PROTOCOLS = {"tcp": ToyTCP, "dccp": ToyDCCP}


def get_protocol(name: str) -> ToyProtocol:
    try:
        return PROTOCOLS[name.lower()]()
    except KeyError:
        raise ConfigurationError(f"unknown toy protocol {name!r}") from None


# -- endpoints ------------------------------------------------------------------

class Endpoint:
    def __init__(self, sim, proto, port, peer_port, iss):
        self.sim = sim
        self.proto = proto
        self.port = port
        self.peer_port = peer_port
        self.iss = iss
        self.state = "CLOSED"
        self.outstanding: bytes | None = None
        self.retries = 0
        self.timer_gen = 0
        self.rounds = 0

    def send(self, raw: bytes, reliable: bool = False) -> None:
        self.sim.transmit(self, raw)
        if reliable:
            self.outstanding = raw
            self.retries = 0
            self._arm()

    def _arm(self) -> None:
        self.timer_gen += 1
        self.sim.schedule_timer(self, self.timer_gen)

    def settle(self) -> None:
        self.outstanding = None
        self.timer_gen += 1

    def on_timer(self, gen: int) -> bool:
        if gen != self.timer_gen or self.outstanding is None:
            return False
        if self.retries >= self.sim.params.max_retransmits:
            self.sim.finish("stalled", f"{self.name} gave up retransmitting")
            return True
        self.retries += 1
        self.sim.transmit(self, self.outstanding)
        self._arm()
        return True

    def payload(self) -> bytes:
        return f"{self.name[0]}{self.rounds:02d}data!".encode()

    def snapshot(self):
        raise NotImplementedError


class TCPEndpoint(Endpoint):
    def __init__(self, *a):
        super().__init__(*a)
        self.snd_una = self.snd_nxt = self.iss
        self.rcv_nxt = 0
        self.irs = None
        self.peer_window = 0
        self.received = 0

    def snapshot(self):
        return (self.state, self.snd_una, self.snd_nxt, self.rcv_nxt, self.received)

    def seg(self, flags, payload=b"", seq=None) -> bytes:
        ack = self.rcv_nxt if flags & ACK else 0
        return self.proto.make(self.port, self.peer_port,
                               (self.snd_nxt if seq is None else seq) & 0xFFFFFFFF,
                               ack & 0xFFFFFFFF, flags, payload=payload)

    def send_data(self, flags, payload=b"") -> None:
        raw = self.seg(flags, payload)
        self.snd_nxt += len(payload) + (1 if flags & (SYN | FIN) else 0)
        self.send(raw, reliable=True)

    def valid(self, raw: bytes):
        p = self.proto
        if len(raw) < 20 or not p.verify(raw):
            return None
        f = p.fields(raw)
        if f["Source Port"] != self.peer_port or f["Destination Port"] != self.port:
            return None
        if f["Data Offset"] != 5:
            return None
        return f, raw[20:]

    def abort(self, why: str) -> None:
        self.sim.transmit(self, self.seg(RST))
        self.sim.finish("failed", why)

    def common(self, f, data) -> bool:
        """Shared synchronized-state checks; False means the segment is consumed."""
        flags = f["Control Bits"]
        if flags & RST:
            if f["Sequence Number"] == self.rcv_nxt:
                self.sim.finish("failed", f"{self.name} reset by peer")
            return False
        if flags & SYN:
            if f["Sequence Number"] == self.irs:
                self.sim.transmit(self, self.seg(ACK))
            else:
                self.abort(f"{self.name} saw SYN in {self.state}")
            return False
        if flags & ACK:
            ack = f["Acknowledgment Number"]
            if ack > self.snd_nxt:
                self.sim.transmit(self, self.seg(ACK))
                return False
            if ack > self.snd_una:
                self.snd_una = ack
            if self.snd_una == self.snd_nxt:
                self.settle()
        self.peer_window = f["Window"]
        if data or flags & FIN:
            if f["Sequence Number"] != self.rcv_nxt:
                self.sim.transmit(self, self.seg(ACK))
                return False
            self.rcv_nxt += len(data) + (1 if flags & FIN else 0)
            if data:
                self.received += 1
        return True


class TCPClient(TCPEndpoint):
    name = "client"

    def start(self) -> None:
        self.state = "SYN-SENT"
        self.send_data(SYN)

    def advance(self) -> None:
        if self.state != "ESTABLISHED" or self.snd_una != self.snd_nxt:
            return
        if self.received < self.rounds:
            return
        if self.rounds >= self.sim.params.data_packets:
            self.state = "FIN-WAIT"
            self.send_data(FIN | ACK)
            return
        data = self.payload()
        if self.peer_window < len(data):
            return
        self.rounds += 1
        self.send_data(PSH | ACK, self.payload())

    def on_packet(self, raw: bytes) -> None:
        v = self.valid(raw)
        if v is None:
            return
        f, data = v
        flags = f["Control Bits"]
        if self.state == "SYN-SENT":
            if flags == SYN | ACK and f["Acknowledgment Number"] == self.iss + 1:
                self.irs = f["Sequence Number"]
                self.rcv_nxt = self.irs + 1
                self.snd_una = self.snd_nxt
                self.peer_window = f["Window"]
                self.settle()
                self.state = "ESTABLISHED"
                self.sim.transmit(self, self.seg(ACK))
                self.advance()
            elif flags & RST and flags & ACK and f["Acknowledgment Number"] == self.snd_nxt:
                self.sim.finish("failed", "connection refused")
            return
        if not self.common(f, data):
            return
        if self.state == "ESTABLISHED":
            self.advance()
        elif self.state == "FIN-WAIT" and flags & FIN and self.snd_una == self.snd_nxt:
            self.state = "DONE"
            self.sim.transmit(self, self.seg(ACK))
        elif self.state == "DONE":
            pass


class TCPServer(TCPEndpoint):
    name = "server"

    def start(self) -> None:
        self.state = "LISTEN"

    def on_packet(self, raw: bytes) -> None:
        v = self.valid(raw)
        if v is None:
            return
        f, data = v
        flags = f["Control Bits"]
        if self.state == "LISTEN":
            if flags == SYN:
                self.irs = f["Sequence Number"]
                self.rcv_nxt = self.irs + 1
                self.state = "SYN-RCVD"
                self.send_data(SYN | ACK)
            return
        if self.state == "SYN-RCVD":
            # data is not accepted until the handshake's final ACK has arrived
            if flags == SYN and f["Sequence Number"] == self.irs:
                self.sim.transmit(self, self.seg(SYN | ACK, seq=self.iss))
            elif flags == ACK and not data and f["Acknowledgment Number"] == self.snd_nxt \
                    and f["Sequence Number"] == self.rcv_nxt:
                self.snd_una = self.snd_nxt
                self.settle()
                self.state = "ESTABLISHED"
            elif flags & RST and f["Sequence Number"] == self.rcv_nxt:
                self.sim.finish("failed", "server reset by peer")
            return
        if self.state == "CLOSED":
            return
        if self.state == "LAST-ACK" and flags & FIN and f["Sequence Number"] + 1 == self.rcv_nxt:
            self.sim.transmit(self, self.seg(FIN | ACK, seq=self.snd_nxt - 1))
            return
        before = self.received
        if not self.common(f, data):
            return
        if self.state == "ESTABLISHED":
            if flags & FIN:
                self.state = "LAST-ACK"
                self.send_data(FIN | ACK)
            elif self.received > before:
                self.rounds += 1
                self.send_data(PSH | ACK, self.payload())
        elif self.state == "LAST-ACK" and self.snd_una == self.snd_nxt:
            self.state = "CLOSED"


class DCCPEndpoint(Endpoint):
    window = 100

    def __init__(self, *a):
        super().__init__(*a)
        self.gss = self.iss
        self.gsr = None
        self.isr = None
        self.received = 0

    def snapshot(self):
        return (self.state, self.gss, self.gsr, self.received)

    def pkt(self, ptype, payload=b"", new_seq=True, ack=None) -> bytes:
        if new_seq:
            self.gss += 1
        return self.proto.make(self.port, self.peer_port, ptype, self.gss & (2**48 - 1),
                               self.gsr if ack is None else ack, payload)

    def valid(self, raw: bytes):
        p = self.proto
        parsed = p.parse(raw)
        if parsed is None or not p.verify(raw):
            return None
        f, data = parsed
        if f["Source Port"] != self.peer_port or f["Destination Port"] != self.port:
            return None
        if f["X"] != 1 or f["Type"] > 9:
            return None
        if f["Data Offset"] != (4 if f["Type"] in DCCP_NO_ACK else 6):
            return None
        return f, data

    def in_window(self, f) -> bool:
        seq = f["Sequence Number"]
        if not (self.gsr < seq <= self.gsr + self.window):
            return False
        if f["Type"] not in DCCP_NO_ACK:
            ack = f["Acknowledgement Number"]
            if not (self.iss <= ack <= self.gss):
                return False
        return True

    def sync(self, f) -> None:
        self.sim.transmit(self, self.pkt(DCCP_TYPES["Sync"], ack=f["Sequence Number"]))

    def handle_sync(self, f) -> bool:
        t = f["Type"]
        if t == DCCP_TYPES["Sync"]:
            self.sim.transmit(self, self.pkt(DCCP_TYPES["SyncAck"], ack=f["Sequence Number"]))
            return True
        return t == DCCP_TYPES["SyncAck"]


class DCCPClient(DCCPEndpoint):
    name = "client"

    def start(self) -> None:
        self.state = "REQUEST"
        self.send(self.pkt(DCCP_TYPES["Request"], new_seq=False), reliable=True)

    def advance(self) -> None:
        if self.outstanding is not None or self.state != "OPEN":
            return
        if self.rounds >= self.sim.params.data_packets:
            self.state = "CLOSING"
            self.send(self.pkt(DCCP_TYPES["Close"]), reliable=True)
            return
        self.rounds += 1
        self.send(self.pkt(DCCP_TYPES["Data"], self.payload()), reliable=True)

    def on_packet(self, raw: bytes) -> None:
        v = self.valid(raw)
        if v is None:
            return
        f, data = v
        t = f["Type"]
        if self.state == "REQUEST":
            if t == DCCP_TYPES["Response"] and f["Acknowledgement Number"] == self.iss:
                self.isr = self.gsr = f["Sequence Number"]
                self.settle()
                self.state = "OPEN"
                self.sim.transmit(self, self.pkt(DCCP_TYPES["Ack"]))
                self.advance()
            elif t == DCCP_TYPES["Reset"]:
                self.sim.finish("failed", "connection refused")
            return
        if self.state == "DONE":
            return
        if t == DCCP_TYPES["Response"] and f["Sequence Number"] == self.isr:
            # our Ack was lost; the server is still waiting for it
            self.sim.transmit(self, self.pkt(DCCP_TYPES["Ack"]))
            return
        if t == DCCP_TYPES["Reset"]:
            if self.state == "CLOSING" and self.in_window(f):
                self.state = "DONE"
                self.settle()
            elif self.state != "CLOSING":
                self.sim.finish("failed", "client reset by peer")
            return
        if self.handle_sync(f):
            return
        if not self.in_window(f):
            self.sync(f)
            return
        self.gsr = f["Sequence Number"]
        if t == DCCP_TYPES["DataAck"] and self.outstanding is not None \
                and f["Acknowledgement Number"] == self.gss:
            if data:
                self.received += 1
            self.settle()
            self.advance()


class DCCPServer(DCCPEndpoint):
    name = "server"

    def start(self) -> None:
        self.state = "LISTEN"

    def on_packet(self, raw: bytes) -> None:
        v = self.valid(raw)
        if v is None:
            return
        f, data = v
        t = f["Type"]
        if self.state == "LISTEN":
            if t == DCCP_TYPES["Request"]:
                self.isr = self.gsr = f["Sequence Number"]
                self.state = "RESPOND"
                self.send(self.pkt(DCCP_TYPES["Response"], new_seq=False), reliable=True)
            return
        if self.state == "CLOSED":
            if t != DCCP_TYPES["Reset"]:
                self.sim.transmit(self, self.pkt(DCCP_TYPES["Reset"], new_seq=False))
            return
        if t == DCCP_TYPES["Request"]:
            if f["Sequence Number"] == self.isr:
                if self.state == "RESPOND":
                    self.sim.transmit(self, self.outstanding)
            else:
                self.sim.transmit(self, self.pkt(DCCP_TYPES["Reset"]))
                self.sim.finish("failed", "server saw a second Request")
            return
        if t == DCCP_TYPES["Reset"]:
            self.sim.finish("failed", "server reset by peer")
            return
        if self.state == "RESPOND":
            # nothing but the handshake Ack opens the connection
            if t == DCCP_TYPES["Ack"] and self.in_window(f):
                self.gsr = f["Sequence Number"]
                self.settle()
                self.state = "OPEN"
            return
        if self.handle_sync(f):
            return
        if t == DCCP_TYPES["Data"] and f["Sequence Number"] == self.gsr:
            self.sim.transmit(self, self.pkt(DCCP_TYPES["DataAck"], self.last_reply,
                                             new_seq=False))
            return
        if not self.in_window(f):
            self.sync(f)
            return
        self.gsr = f["Sequence Number"]
        if t == DCCP_TYPES["Data"] and data:
            self.received += 1
            self.rounds += 1
            self.last_reply = self.payload()
            self.sim.transmit(self, self.pkt(DCCP_TYPES["DataAck"], self.last_reply))
        elif t == DCCP_TYPES["Close"]:
            self.state = "CLOSED"
            self.sim.transmit(self, self.pkt(DCCP_TYPES["Reset"]))

    last_reply = b""


# -- proxy and runs -------------------------------------------------------------

@dataclass(frozen=True)
class SimParams:
    event_budget: int = 100
    stall_window: int = 20
    max_retransmits: int = 3
    rto: int = 5
    data_packets: int = 5


@dataclass(frozen=True)
class AttackReport:
    strategy_id: int
    attack_class: str
    path: str
    verdict: str
    trace: tuple[str, ...]


@dataclass
class RunResult:
    trace: tuple[str, ...]
    verdict: str  # completed | stalled | failed
    events_used: int
    reason: str = ""
    attack: AttackReport | None = None
    modified_packets: int = 0
    inconsistent_packets: int = 0
    injected_packets: int = 0


class Proxy:
    """Applies a strategy's action to every matching packet, in both directions."""

    def __init__(self, proto: ToyProtocol, strategy: TestStrategy,
                 grammar: ProtocolGrammar | None):
        self.proto = proto
        self.strategy = strategy
        self.grammar = grammar
        self.trace: list[str] = []
        self.held: dict[str, bytes | None] = {"c2s": None, "s2c": None}
        self.template: tuple[str, bytes] | None = None
        self.modified = 0
        self.inconsistent = 0
        self.injected = 0
        self.match_field = None
        self.match_value = None
        self.checksum_at = None
        if grammar is not None:
            if strategy.target_packet_type is not None:
                f = packet_type_field(grammar)
                self.match_field = (f.offset_bits, f.size_bits)
                self.match_value = packet_type_values(grammar)[strategy.target_packet_type]
            cks = [f for f in grammar.fields_with(PropertyKind.Checksum)
                   if f.size_bits is not None]
            if cks:
                self.checksum_at = (cks[0].name, cks[0].offset_bits, cks[0].size_bits)
        if isinstance(strategy.action, Inject):
            self.rng = np.random.default_rng(strategy.action.seed)

    def matches(self, raw: bytes) -> bool:
        if self.match_field is None:
            return True
        off, size = self.match_field
        if off + size > len(raw) * 8:
            return False
        return get_bits(raw, off, size) == self.match_value

    def _reseal(self, buf: bytearray, skip: str | None = None) -> None:
        if self.checksum_at is None:
            return
        name, off, size = self.checksum_at
        if name == skip or off + size > len(buf) * 8:
            return
        set_bits(buf, off, size, 0)
        set_bits(buf, off, size, internet_checksum(bytes(buf)) & ((1 << size) - 1))

    def _note(self, before: bytes, after: bytes) -> None:
        if after != before:
            self.modified += 1
            if not self.proto.verify(after):
                self.inconsistent += 1

    def process(self, raw: bytes, direction: str) -> list[tuple[int, str, bytes]]:
        """Returns (extra delay, direction, bytes) deliveries."""
        self.trace.append(self.proto.type_name(raw))
        action = self.strategy.action
        hit = action is not None and self.matches(raw)
        out: list[tuple[int, str, bytes]] = []
        if not hit or isinstance(action, Inject):
            out.append((0, direction, raw))
        elif isinstance(action, RandomBytes):
            buf = bytearray(raw)
            for i, b in zip(action.byte_indices, action.data()):
                if i < len(buf):
                    buf[i] = b
            self._note(raw, bytes(buf))
            out.append((0, direction, bytes(buf)))
        elif isinstance(action, FieldModify):
            f = self.grammar.field(action.field)
            buf = bytearray(raw)
            if f.size_bits is not None and f.offset_bits + f.size_bits <= len(buf) * 8:
                cur = get_bits(buf, f.offset_bits, f.size_bits)
                set_bits(buf, f.offset_bits, f.size_bits, action.rule.value(cur, f.size_bits))
                self._reseal(buf, skip=f.name)
            self._note(raw, bytes(buf))
            out.append((0, direction, bytes(buf)))
        elif isinstance(action, Delivery):
            if action.kind == "drop":
                pass
            elif action.kind == "duplicate":
                out += [(0, direction, raw), (0, direction, raw)]
            elif action.kind == "delay":
                out.append((action.delay, direction, raw))
            elif action.kind == "reorder":
                held = self.held[direction]
                if held is None:
                    self.held[direction] = raw
                    return out
                self.held[direction] = None
                out += [(0, direction, raw), (0, direction, held)]
        if not hit and self.held[direction] is not None and not isinstance(action, Inject):
            out.append((0, direction, self.held[direction]))
            self.held[direction] = None
        if isinstance(action, Inject):
            if hit:
                self.template = (direction, raw)
            if self.template is not None:
                out.append((0, *self._forge()))
        return out

    def _forge(self) -> tuple[str, bytes]:
        direction, raw = self.template
        buf = bytearray(raw)
        byte = int(self.rng.integers(0, 256))
        base = self.proto.header_len(raw)
        if len(buf) > base:
            buf[-1] = byte
        else:
            buf.append(byte)
        self._reseal(buf)
        self.injected += 1
        return direction, bytes(buf)


class Simulation:
    def __init__(self, proto: ToyProtocol, proxy: Proxy, params: SimParams):
        self.proto = proto
        self.proxy = proxy
        self.params = params
        self.client, self.server = proto.endpoints(self)
        self.queue: list = []
        self.seq = 0
        self.now = 0
        self.verdict: str | None = None
        self.reason = ""

    def transmit(self, sender: Endpoint, raw: bytes) -> None:
        if self.verdict is not None:
            return
        direction = "c2s" if sender is self.client else "s2c"
        for delay, d, pkt in self.proxy.process(raw, direction):
            target = self.server if d == "c2s" else self.client
            self._push(self.now + 1 + delay, "pkt", target, pkt)

    def schedule_timer(self, ep: Endpoint, gen: int) -> None:
        self._push(self.now + self.params.rto, "timer", ep, gen)

    def _push(self, t, kind, target, payload) -> None:
        heapq.heappush(self.queue, (t, self.seq, kind, target, payload))
        self.seq += 1

    def finish(self, verdict: str, reason: str) -> None:
        if self.verdict is None:
            self.verdict, self.reason = verdict, reason

    def done(self) -> bool:
        return self.client.state == "DONE" and self.server.state == "CLOSED"

    def snapshot(self):
        return (self.client.snapshot(), self.server.snapshot())

    def run(self) -> RunResult:
        self.client.start()
        self.server.start()
        events = idle = 0
        last = self.snapshot()
        while self.verdict is None:
            if not self.queue:
                self.finish("stalled", "no pending events")
                break
            if events >= self.params.event_budget:
                self.finish("stalled", "event budget exhausted")
                break
            t, _, kind, target, payload = heapq.heappop(self.queue)
            self.now = t
            if kind == "timer":
                if not target.on_timer(payload):
                    continue
            else:
                target.on_packet(payload)
            events += 1
            if self.verdict is not None:
                break
            if self.done():
                self.finish("completed", "")
                break
            snap = self.snapshot()
            if snap != last:
                last, idle = snap, 0
            else:
                idle += 1
                if idle >= self.params.stall_window:
                    self.finish("stalled", "no progress")
        return RunResult(tuple(self.proxy.trace), self.verdict, events, self.reason,
                         modified_packets=self.proxy.modified,
                         inconsistent_packets=self.proxy.inconsistent,
                         injected_packets=self.proxy.injected)


def check_layout(proto: ToyProtocol, grammar: ProtocolGrammar | None) -> None:
    if grammar is None:
        return
    if grammar.protocol_id and grammar.protocol_id.lower() != proto.name:
        raise ConfigurationError(
            f"grammar is for {grammar.protocol_id!r}, simulator runs {proto.name!r}")
    f = packet_type_field(grammar)
    if f.offset_bits + f.size_bits > proto.layout.bits:
        raise ConfigurationError(
            f"packet type field {f.name!r} lies outside the {proto.name} fixed header")


def detect_attack(result: RunResult, strategy: TestStrategy) -> AttackReport | None:
    if result.verdict == "completed":
        return None
    path = "off-path" if isinstance(strategy.action, Inject) else "on-path"
    return AttackReport(strategy.id, "availability", path, result.verdict, result.trace)


def run_strategy(proto: ToyProtocol | str, strategy: TestStrategy,
                 grammar: ProtocolGrammar | None = None,
                 params: SimParams | None = None) -> RunResult:
    proto = get_protocol(proto) if isinstance(proto, str) else proto
    params = params or SimParams()
    if strategy.action is not None and not isinstance(strategy.action, RandomBytes):
        if grammar is None:
            raise ConfigurationError("grammar strategies need the grammar they came from")
    check_layout(proto, grammar)
    result = Simulation(proto, Proxy(proto, strategy, grammar), params).run()
    result.attack = detect_attack(result, strategy)
    return result


@dataclass
class Coverage:
    unique_traces: int
    strategies: int
    attacks: int = 0
    off_path_attacks: int = 0
    verdicts: dict = field(default_factory=dict)


def coverage(results: list[RunResult]) -> Coverage:
    verdicts: dict[str, int] = {}
    for r in results:
        verdicts[r.verdict] = verdicts.get(r.verdict, 0) + 1
    attacks = [r.attack for r in results if r.attack is not None]
    return Coverage(len({r.trace for r in results}), len(results), len(attacks),
                    sum(a.path == "off-path" for a in attacks), dict(sorted(verdicts.items())))
