"""Test-strategy generation for the Random, Manual and NLPBased configurations."""
from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

from rfcfuzz.errors import PipelineError
from rfcfuzz.grammar import GrammarField, PropertyKind, ProtocolGrammar

CONFIGS = ("Random", "Manual", "NLPBased")
SIZE_RULES = ("zeros", "ones", "one", "random")
DELIVERY_ACTIONS = ("drop", "duplicate", "delay", "reorder")
DELAY_EVENTS = 3
RANDOM_REGION = 20  # bytes at the front of every packet the Random config may touch
MAX_ENUMERATED_TYPES = 256


class UngeneratableError(PipelineError):
    stage = "fuzz"


@dataclass(frozen=True)
class ValueRule:
    kind: str  # zeros | ones | one | random | single-random | not-multiple | huge-offset
    seed: int = 0

    def value(self, current: int, bits: int) -> int:
        top = (1 << bits) - 1
        if self.kind == "zeros":
            return 0
        if self.kind == "ones":
            return top
        if self.kind == "one":
            return 1 & top
        if self.kind in ("random", "single-random"):
            return int(np.random.default_rng(self.seed).integers(0, top + 1, dtype=np.uint64))
        if self.kind == "not-multiple":
            return (current + 1) & top
        if self.kind == "huge-offset":
            return (current + (1 << (bits - 1))) & top
        raise ValueError(f"unknown value rule {self.kind!r}")


@dataclass(frozen=True)
class FieldModify:
    field: str
    rule: ValueRule


@dataclass(frozen=True)
class Delivery:
    kind: str  # drop | duplicate | delay | reorder
    delay: int = 0


@dataclass(frozen=True)
class Inject:
    template: str = "last-seen"
    seed: int = 0


@dataclass(frozen=True)
class RandomBytes:
    byte_indices: tuple[int, ...]
    seed: int

    def data(self) -> tuple[int, ...]:
        rng = np.random.default_rng(self.seed)
        return tuple(int(b) for b in rng.integers(0, 256, len(self.byte_indices)))


@dataclass(frozen=True)
class TestStrategy:
    id: int
    config: str
    target_packet_type: str | None
    action: FieldModify | Delivery | Inject | RandomBytes | None

    __test__ = False  # keep pytest from collecting this class

    def describe(self) -> str:
        a = self.action
        target = self.target_packet_type or "*"
        if a is None:
            return f"{target}: none"
        if isinstance(a, FieldModify):
            return f"{target}: set {a.field} {a.rule.kind}"
        if isinstance(a, Delivery):
            return f"{target}: {a.kind}" + (f"({a.delay})" if a.delay else "")
        if isinstance(a, Inject):
            return f"{target}: inject"
        return f"{target}: bytes {list(a.byte_indices)}"


NULL_STRATEGY = TestStrategy(-1, "None", None, None)


def _stable_seed(*parts) -> int:
    return zlib.crc32(":".join(str(p) for p in parts).encode())


def generate_random_strategies(n: int, seed: int = 0) -> list[TestStrategy]:
    """Each strategy overwrites a fixed random subset of the first 20 bytes with fixed data."""
    if n < 1:
        raise ValueError("need at least one strategy")
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        k = int(rng.integers(1, RANDOM_REGION + 1))
        idx = tuple(sorted(int(b) for b in rng.choice(RANDOM_REGION, k, replace=False)))
        out.append(TestStrategy(i, "Random", None,
                                RandomBytes(idx, int(rng.integers(0, 2**31)))))
    return out


def packet_type_field(g: ProtocolGrammar) -> GrammarField:
    fields = [f for f in g.fields_with(PropertyKind.PacketType) if f.size_bits is not None]
    if not fields:
        raise UngeneratableError(
            f"grammar {g.protocol_id!r} has no field with the PacketType property")
    return fields[0]


def packet_type_values(g: ProtocolGrammar) -> dict[str, int]:
    """Declared packet types, or every value of the PacketType field up to a cap."""
    f = packet_type_field(g)
    top = 1 << f.size_bits
    if g.packet_types:
        return {n: v for n, v in sorted(g.packet_types.items(), key=lambda kv: (kv[1], kv[0]))
                if v < top}
    return {f"{f.name}={v}": v for v in range(min(top, MAX_ENUMERATED_TYPES))}


def field_rules(f: GrammarField, g: ProtocolGrammar, config: str, seed: int,
                ptype: str) -> list[ValueRule]:
    def rule(kind):
        return ValueRule(kind, _stable_seed(seed, ptype, f.name, kind))

    if config == "Manual":
        return [rule(k) for k in SIZE_RULES]
    kinds = g.kinds_of(f.name)
    if kinds & {PropertyKind.Checksum, PropertyKind.Port}:
        return [rule("single-random")]
    rules = [rule(k) for k in SIZE_RULES]
    if PropertyKind.Multiple in kinds:
        rules.append(rule("not-multiple"))
    if PropertyKind.SequenceNumber in kinds:
        rules.append(rule("huge-offset"))
    return rules


def generate_grammar_strategies(g: ProtocolGrammar, config: str,
                                seed: int = 0) -> list[TestStrategy]:
    """Per packet type: every delivery action, one inject, then field modifications."""
    if config not in ("Manual", "NLPBased"):
        raise ValueError(f"grammar strategies need Manual or NLPBased, not {config!r}")
    types = packet_type_values(g)
    out: list[TestStrategy] = []

    def add(ptype, action):
        out.append(TestStrategy(len(out), config, ptype, action))

    for ptype in types:
        for kind in DELIVERY_ACTIONS:
            add(ptype, Delivery(kind, DELAY_EVENTS if kind == "delay" else 0))
        add(ptype, Inject("last-seen", _stable_seed(seed, ptype, "inject")))
        for f in g.layout:
            for r in field_rules(f, g, config, seed, ptype):
                add(ptype, FieldModify(f.name, r))
    return out


def strategy_to_dict(s: TestStrategy) -> dict:
    a = s.action
    if a is None:
        action = None
    elif isinstance(a, FieldModify):
        action = {"type": "modify", "field": a.field, "rule": a.rule.kind, "seed": a.rule.seed}
    elif isinstance(a, Delivery):
        action = {"type": "delivery", "kind": a.kind, "delay": a.delay}
    elif isinstance(a, Inject):
        action = {"type": "inject", "template": a.template, "seed": a.seed}
    else:
        action = {"type": "random-bytes", "byte_indices": list(a.byte_indices), "seed": a.seed}
    return {"id": s.id, "config": s.config, "target": s.target_packet_type, "action": action}


def strategy_from_dict(d: dict) -> TestStrategy:
    a = d["action"]
    if a is None:
        action = None
    elif a["type"] == "modify":
        action = FieldModify(a["field"], ValueRule(a["rule"], a["seed"]))
    elif a["type"] == "delivery":
        action = Delivery(a["kind"], a["delay"])
    elif a["type"] == "inject":
        action = Inject(a["template"], a["seed"])
    elif a["type"] == "random-bytes":
        action = RandomBytes(tuple(a["byte_indices"]), a["seed"])
    else:
        raise ValueError(f"unknown action type {a['type']!r}")
    return TestStrategy(d["id"], d["config"], d["target"], action)


def dump_strategies(strategies: list[TestStrategy]) -> str:
    return "".join(json.dumps(strategy_to_dict(s), sort_keys=True) + "\n" for s in strategies)


def load_strategies(text: str) -> list[TestStrategy]:
    return [strategy_from_dict(json.loads(line)) for line in text.splitlines() if line.strip()]
