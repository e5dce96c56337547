"""Netflow timestamp decomposition and structural invariant checks.

The seven rules below are concrete stand-in formulations of common
netflow sanity checks; violation rates are exact counts over the
applicable records for each rule.
"""

from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from datetime import datetime

PROTOCOLS = ("TCP", "UDP", "ICMP", "IGMP", "other")

WELL_KNOWN_TCP_PORTS = frozenset({80, 443, 22, 21, 25})
NETBIOS_PORTS = frozenset({137, 138, 139})
MIN_FRAME_BYTES = 42
MAX_FRAME_BYTES = 65535

RULES = (
    "tcp_flags",
    "private_ips",
    "tcp_port",
    "dns",
    "valid_values",
    "netbios",
    "packet_ratios",
)


class FlowError(ValueError):
    pass


@dataclass(frozen=True)
class FlowRecord:
    weekday: int
    hour: int
    minute: int
    second: int
    millisecond: int
    src_ip: str
    dst_ip: str
    protocol: str
    src_port: int
    dst_port: int
    duration: float
    bytes: int
    packets: int
    flags: str
    tos: int = 0

    def __post_init__(self):
        bounds = (("weekday", 7), ("hour", 24), ("minute", 60),
                  ("second", 60), ("millisecond", 1000))
        for name, limit in bounds:
            v = getattr(self, name)
            if not 0 <= v < limit:
                raise FlowError(f"{name}={v} outside 0..{limit - 1}")
        if self.protocol not in PROTOCOLS:
            raise FlowError(f"unknown protocol {self.protocol!r}")
        for name in ("src_port", "dst_port"):
            v = getattr(self, name)
            if not 0 <= v <= 65535:
                raise FlowError(f"{name}={v} outside 0..65535")
        if self.duration < 0:
            raise FlowError("duration must be non-negative")
        if self.bytes < 1 or self.packets < 1:
            raise FlowError("bytes and packets must be positive")


def decompose_timestamp(ts: datetime | str) -> tuple[int, int, int, int, int]:
    """Calendar decomposition (Monday=0); the date itself is dropped."""
    if isinstance(ts, str):
        try:
            ts = datetime.fromisoformat(ts)
        except ValueError as e:
            raise FlowError(f"unparseable timestamp: {e}")
    return (ts.weekday(), ts.hour, ts.minute, ts.second,
            ts.microsecond // 1000)


def _is_private(ip: str) -> bool:
    try:
        return ipaddress.ip_address(ip).is_private
    except ValueError:
        raise FlowError(f"invalid IP address {ip!r}")


@dataclass
class InvariantReport:
    violations: dict[str, int] = field(default_factory=dict)
    applicable: dict[str, int] = field(default_factory=dict)

    def rate(self, rule: str) -> float:
        n = self.applicable.get(rule, 0)
        return self.violations.get(rule, 0) / n if n else 0.0

    def to_json(self) -> dict:
        return {
            rule: {
                "violations": self.violations.get(rule, 0),
                "applicable": self.applicable.get(rule, 0),
                "rate": self.rate(rule),
            }
            for rule in RULES
        }


def _flags_empty(flags: str) -> bool:
    return all(ch in ".- " for ch in flags)


def check_invariants(records: list[FlowRecord],
                     vocab: dict[str, set] | None = None,
                     dns_bytes_per_packet: int = 512) -> InvariantReport:
    """Evaluate each rule per record; denominators count only records the
    rule applies to.

    ``vocab`` maps field names to allowed value sets for the
    valid-values rule; fields not listed are not checked.
    """
    report = InvariantReport()
    for rule in RULES:
        report.violations[rule] = 0
        report.applicable[rule] = 0

    for rec in records:
        # Non-TCP flows must not carry TCP flags.
        if rec.protocol != "TCP":
            report.applicable["tcp_flags"] += 1
            if not _flags_empty(rec.flags):
                report.violations["tcp_flags"] += 1

        # At least one endpoint of every flow must be private.
        report.applicable["private_ips"] += 1
        if not (_is_private(rec.src_ip) or _is_private(rec.dst_ip)):
            report.violations["private_ips"] += 1

        # Well-known TCP service ports imply protocol TCP.
        if rec.src_port in WELL_KNOWN_TCP_PORTS or rec.dst_port in WELL_KNOWN_TCP_PORTS:
            report.applicable["tcp_port"] += 1
            if rec.protocol != "TCP":
                report.violations["tcp_port"] += 1

        # Port-53 traffic is UDP, or TCP with a bounded payload.
        if rec.src_port == 53 or rec.dst_port == 53:
            report.applicable["dns"] += 1
            ok = rec.protocol == "UDP" or (
                rec.protocol == "TCP"
                and rec.bytes <= dns_bytes_per_packet * rec.packets
            )
            if not ok:
                report.violations["dns"] += 1

        # Every field value must come from the training vocabulary.
        if vocab is not None:
            report.applicable["valid_values"] += 1
            ok = all(
                getattr(rec, name) in allowed for name, allowed in vocab.items()
            )
            if not ok:
                report.violations["valid_values"] += 1

        # NetBios ports imply UDP/TCP and a private destination.
        if rec.src_port in NETBIOS_PORTS or rec.dst_port in NETBIOS_PORTS:
            report.applicable["netbios"] += 1
            ok = rec.protocol in ("UDP", "TCP") and _is_private(rec.dst_ip)
            if not ok:
                report.violations["netbios"] += 1

        # Byte count bounded by min/max frame size times packet count.
        report.applicable["packet_ratios"] += 1
        if not (MIN_FRAME_BYTES * rec.packets <= rec.bytes
                <= MAX_FRAME_BYTES * rec.packets):
            report.violations["packet_ratios"] += 1

    return report
