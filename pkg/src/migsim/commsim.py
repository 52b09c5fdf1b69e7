"""Communicator bootstrap for ranks that may share a physical PCIe device.

Ranks bound to different instances of one partitioned GPU report the same
PCIe bus id, so bus-id-only duplicate detection wrongly aborts and bus-id
keyed topology nodes collapse.  Discovery here compares an additional
per-instance identity token, and topology construction hands the k-th
duplicate of a bus id a synthetic label with its PCIe function digit set to
k (00:4B:00.0 -> 00:4B:00.1).  Synthetic labels never leave the topology
layer: anything driver-facing goes through restore_bus_id first.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .errors import DuplicateDeviceError, MalformedLabelError

# Canonical device bus ids always carry function digit 0; synthetic labels
# reuse the digit for the duplicate ordinal, so a single digit bounds fan-out
# at 10, far above the 7 instances a GPU can hold.
_CANONICAL_RE = re.compile(r"^[0-9A-F]{2}:[0-9A-F]{2}:[0-9A-F]{2}\.0$")
_LABEL_RE = re.compile(r"^[0-9A-F]{2}:[0-9A-F]{2}:[0-9A-F]{2}\.[0-9]$")


@dataclass(frozen=True)
class PeerInfo:
    rank: int
    pcie_bus_id: str
    mig_id: str
    host_hash: int
    pid_hash: int

    def __post_init__(self) -> None:
        normalized = self.pcie_bus_id.upper()
        if not _CANONICAL_RE.match(normalized):
            raise MalformedLabelError(
                f"bus id {self.pcie_bus_id!r} is not a canonical device id")
        object.__setattr__(self, "pcie_bus_id", normalized)
        if not self.mig_id:
            raise ValueError(f"rank {self.rank} has an empty mig_id")


@dataclass(frozen=True)
class Communicator:
    peers: tuple[PeerInfo, ...]

    @property
    def size(self) -> int:
        return len(self.peers)


@dataclass(frozen=True)
class TopoNode:
    label: str
    canonical: str
    rank: int


@dataclass
class TopologyGraph:
    nodes: list[TopoNode]
    mig_list: list[tuple[str, int]]  # (pcie_bus_id, occurrence count)


def discover_peers(peers: list[PeerInfo], mig_aware: bool = True) -> Communicator:
    """Exchange peer metadata and reject colliding device bindings.

    Legacy behavior (mig_aware=False) keys devices on (host, bus id) alone
    and aborts as soon as two same-host ranks share a bus id.  MIG-aware
    discovery additionally compares the instance identity, so only a true
    double-binding of one instance raises.
    """
    ranks = sorted(p.rank for p in peers)
    if ranks != list(range(len(peers))):
        raise ValueError(f"ranks must be 0..{len(peers) - 1} and distinct")
    ordered = sorted(peers, key=lambda p: p.rank)
    seen: dict[tuple, int] = {}
    for peer in ordered:
        if mig_aware:
            key = (peer.host_hash, peer.pcie_bus_id, peer.mig_id)
        else:
            key = (peer.host_hash, peer.pcie_bus_id)
        if key in seen:
            raise DuplicateDeviceError(seen[key], peer.rank)
        seen[key] = peer.rank
    return Communicator(tuple(ordered))


def build_topology(peers: list[PeerInfo] | Communicator) -> TopologyGraph:
    """Register every rank as a distinct topology node.

    The first occurrence of a bus id keeps its canonical label; the k-th
    duplicate gets the canonical with its function digit replaced by k.
    """
    if isinstance(peers, Communicator):
        peer_list = list(peers.peers)
    else:
        peer_list = sorted(peers, key=lambda p: p.rank)
    counts: dict[str, int] = {}
    nodes: list[TopoNode] = []
    for peer in peer_list:
        bus = peer.pcie_bus_id
        ordinal = counts.get(bus, 0)
        if ordinal == 0:
            label = bus
        else:
            if ordinal >= 10:
                raise MalformedLabelError(
                    f"more than 10 ranks on bus {bus}; ordinal does not fit one digit")
            label = bus[:-1] + str(ordinal)
        counts[bus] = ordinal + 1
        nodes.append(TopoNode(label=label, canonical=bus, rank=peer.rank))
    mig_list = [(bus, n) for bus, n in counts.items()]
    return TopologyGraph(nodes=nodes, mig_list=mig_list)


def restore_bus_id(label: str) -> str:
    """Strip a synthetic suffix, returning the canonical device bus id."""
    if not _LABEL_RE.match(label.upper()):
        raise MalformedLabelError(f"bad bus id label {label!r}")
    return label.upper()[:-1] + "0"


def select_transport(peer_a: PeerInfo, peer_b: PeerInfo) -> str:
    """SHM for same-host pairs, NET otherwise.

    Cross-instance P2P/NVLink is never selected; instances on one GPU talk
    through host shared memory like any other same-host pair.
    """
    return "SHM" if peer_a.host_hash == peer_b.host_hash else "NET"


def load_peers_jsonl(data: bytes) -> list[PeerInfo]:
    peers = []
    for line_no, line in enumerate(data.decode().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            peers.append(PeerInfo(
                rank=int(rec["rank"]),
                pcie_bus_id=str(rec["pcie_bus_id"]),
                mig_id=str(rec["mig_id"]),
                host_hash=int(rec["host_hash"]),
                pid_hash=int(rec["pid_hash"]),
            ))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise MalformedLabelError(f"peer file line {line_no}: {exc}") from None
    return peers
