import random

import pytest

from migsim.commsim import (
    Communicator,
    PeerInfo,
    build_topology,
    discover_peers,
    load_peers_jsonl,
    restore_bus_id,
    select_transport,
)
from migsim.errors import DuplicateDeviceError, MalformedLabelError


def peer(rank, bus="00:4B:00.0", mig=None, host=1, pid=None):
    return PeerInfo(rank=rank, pcie_bus_id=bus,
                    mig_id=mig or f"MIG-GPU-uuid-{rank}",
                    host_hash=host, pid_hash=pid if pid is not None else 1000 + rank)


def test_legacy_mode_aborts_on_shared_bus():
    peers = [peer(0), peer(1)]
    with pytest.raises(DuplicateDeviceError) as err:
        discover_peers(peers, mig_aware=False)
    assert (err.value.rank_a, err.value.rank_b) == (0, 1)


def test_mig_aware_accepts_shared_bus():
    comm = discover_peers([peer(0), peer(1)], mig_aware=True)
    assert isinstance(comm, Communicator)
    assert comm.size == 2


def test_mig_aware_rejects_double_binding():
    peers = [peer(0, mig="MIG-same"), peer(1, mig="MIG-same")]
    with pytest.raises(DuplicateDeviceError):
        discover_peers(peers, mig_aware=True)


def test_distinct_hosts_may_share_bus_id():
    peers = [peer(0, host=1), peer(1, host=2)]
    discover_peers(peers, mig_aware=False)
    discover_peers(peers, mig_aware=True)


def test_rank_set_must_be_contiguous():
    with pytest.raises(ValueError):
        discover_peers([peer(0), peer(2)], mig_aware=True)


def test_topology_suffixes_duplicates():
    peers = [peer(r) for r in range(3)]
    topo = build_topology(discover_peers(peers))
    assert [n.label for n in topo.nodes] == [
        "00:4B:00.0", "00:4B:00.1", "00:4B:00.2"]
    assert topo.mig_list == [("00:4B:00.0", 3)]


def test_topology_example_suffix():
    topo = build_topology([peer(0), peer(1)])
    assert topo.nodes[0].label == "00:4B:00.0"
    assert topo.nodes[1].label == "00:4B:00.1"


def test_topology_all_distinct_buses():
    peers = [peer(r, bus=f"00:{0x40 + r:02X}:00.0") for r in range(4)]
    topo = build_topology(peers)
    assert [n.label for n in topo.nodes] == [n.canonical for n in topo.nodes]
    assert all(count == 1 for _, count in topo.mig_list)


def test_topology_two_buses_four_each():
    peers = [peer(r, bus="00:4B:00.0" if r % 2 == 0 else "00:65:00.0")
             for r in range(8)]
    topo = build_topology(peers)
    assert len(topo.nodes) == 8
    assert sorted(topo.mig_list) == [("00:4B:00.0", 4), ("00:65:00.0", 4)]


def test_topology_node_count_matches_ranks_up_to_14():
    for n in range(1, 15):
        peers = [peer(r, bus="00:4B:00.0" if r < (n + 1) // 2 else "00:65:00.0")
                 for r in range(n)]
        topo = build_topology(discover_peers(peers))
        assert len(topo.nodes) == n
        assert len({node.label for node in topo.nodes}) == n


def test_restore_strips_suffix():
    assert restore_bus_id("00:4B:00.2") == "00:4B:00.0"


def test_restore_idempotent_on_canonical():
    assert restore_bus_id("00:4B:00.0") == "00:4B:00.0"


def test_restore_round_trip_law():
    rng = random.Random(11)
    for _ in range(500):
        bus = f"{rng.randrange(256):02X}:{rng.randrange(256):02X}:00.0"
        n = rng.randint(1, 7)
        peers = [peer(r, bus=bus) for r in range(n)]
        topo = build_topology(peers)
        for node in topo.nodes:
            assert restore_bus_id(node.label) == node.canonical == bus


def test_restore_rejects_malformed():
    for bad in ("garbage", "00:4B:00", "00:4B:00.A", "0:4B:00.0", ""):
        with pytest.raises(MalformedLabelError):
            restore_bus_id(bad)


def test_peer_requires_canonical_bus():
    with pytest.raises(MalformedLabelError):
        peer(0, bus="00:4B:00.3")
    with pytest.raises(ValueError):
        PeerInfo(0, "00:4B:00.0", "", 1, 1)


def test_bus_id_normalized_to_upper():
    p = peer(0, bus="00:4b:00.0")
    assert p.pcie_bus_id == "00:4B:00.0"


def test_select_transport():
    a, b = peer(0, host=1), peer(1, host=1)
    c = peer(2, bus="00:65:00.0", host=2)
    assert select_transport(a, b) == "SHM"  # same GPU, different instances
    assert select_transport(a, c) == "NET"
    d = peer(3, bus="00:65:00.0", host=1)
    assert select_transport(a, d) == "SHM"  # same host, different GPUs


def test_no_synthetic_label_escapes_restoration():
    peers = [peer(r) for r in range(5)]
    topo = build_topology(peers)
    for node in topo.nodes:
        restored = restore_bus_id(node.label)
        assert restored.endswith(".0")


def test_load_peers_jsonl():
    data = (b'{"rank": 0, "pcie_bus_id": "00:4B:00.0", "mig_id": "a", '
            b'"host_hash": 1, "pid_hash": 2}\n'
            b'{"rank": 1, "pcie_bus_id": "00:4B:00.0", "mig_id": "b", '
            b'"host_hash": 1, "pid_hash": 3}\n')
    peers = load_peers_jsonl(data)
    assert [p.rank for p in peers] == [0, 1]
    with pytest.raises(MalformedLabelError):
        load_peers_jsonl(b"{}\n")
