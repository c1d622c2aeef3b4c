import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import ALLOW, KEY_HEX, RecordingNet, frames, world
from smcgate.config import Params
from smcgate.consumer import ConsumerNode, corrupt_tag
from smcgate.errors import AccessDenied, AuthFailed, Implausible, InsufficientSources
from smcgate.gateway import (
    AccessControlList,
    Gateway,
    Grant,
    MetadataDirectory,
    authenticate,
    keys_to_bytes,
    plan_session,
    query_directory,
)
from smcgate.protocol import Phase
from smcgate.request import DataRequest
from smcgate.scenario import run_sim
from smcgate.source import DataTypeInfo, PolicyRule, ScriptedReadings, SourceMetadata, SourceNode, SourcePolicy
from smcgate.transport import Fault, SimNetwork
from smcgate.wire import MessageKind, ProtocolMessage, decode_message, encode_message

KEY = bytes.fromhex(KEY_HEX)
ACL = AccessControlList(Grant("display-1", "occupancy", a, "statistics") for a in ("sum", "count", "average"))


def request(**kw) -> DataRequest:
    fields = dict(
        request_id="r1",
        consumer_id="display-1",
        purpose="statistics",
        aggregate="average",
        data_type="occupancy",
        scope="3.A",
        window=(0.0, 3600.0),
    )
    fields.update(kw)
    return DataRequest(**fields).signed(KEY)


def meta(sid, scope="3.A", types=("occupancy",)):
    return SourceMetadata(sid, tuple(DataTypeInfo(t, "persons") for t in types), scope=scope)


def detached(keys=None, acl=ACL, **kw) -> Gateway:
    gw = Gateway({"display-1": KEY} if keys is None else keys, acl, **kw)
    gw.attach(RecordingNet())
    return gw


def directory_with(n, now=0.0, scope="3.A") -> MetadataDirectory:
    d = MetadataDirectory(3.0)
    for i in range(n):
        d.register(meta(f"S{i + 1}", scope), f"S{i + 1}", now)
    return d


def source(sid, address=None, readings=(), params=Params()):
    return SourceNode(meta(sid), ALLOW, ScriptedReadings(readings), address=address, rng=random.Random(sid),
                      params=params)


def sim(*nodes, params=Params()):
    net = SimNetwork()
    gw = Gateway({"display-1": KEY}, ACL, params)
    net.register(gw)
    for node in nodes:
        net.register(node)
    net.start()
    return net, gw


# -- discovery --


def test_single_announcement_registers_source():
    net, gw = sim(source("S1"))
    net.advance_time(0.5)
    assert [e.metadata.source_id for e in gw.directory.live(net.now)] == ["S1"]
    entry = gw.directory.entries["S1"]
    assert entry.metadata.data_types[0].name == "occupancy" and entry.endpoint == "S1"


def test_discovery_handshake_sequence():
    net, gw = sim(source("S1"))
    net.advance_time(0.5)
    kinds = [(r.sender, m["kind"], m["payload"].get("phase")) for r, m in frames(net.transcript)]
    assert kinds[:4] == [
        ("S1", "DiscoveryAnnounce", None),
        ("gateway", "SetupMetadata", "request"),
        ("S1", "SetupMetadata", "offer"),
        ("gateway", "SetupMetadata", "ack"),
    ]


def test_stale_entry_replaced_by_new_endpoint():
    net, gw = sim(source("S1"))
    net.advance_time(5.0)
    net.drop_node("S1")
    replacement = source("S1", address="S1-b")
    net.register(replacement)
    replacement.start()
    net.advance_time(net.now + 1.0)
    # old entry is still live: the newcomer is refused
    assert gw.directory.entries["S1"].endpoint == "S1"
    assert gw.rejected_announcements >= 1
    net.advance_time(net.now + gw.params.liveness_timeout + 1.0)
    assert gw.directory.entries["S1"].endpoint == "S1-b"
    assert gw.directory.is_live("S1", net.now)


@settings(max_examples=10, deadline=None)
@given(st.permutations(range(10)))
def test_ten_sources_any_order(order):
    nodes = [source(f"S{i:02d}") for i in order]
    net, gw = sim(*nodes)
    net.advance_time(1.0)
    assert [e.metadata.source_id for e in gw.directory.live(net.now)] == [f"S{i:02d}" for i in range(10)]


def test_duplicate_id_at_other_endpoint_rejected():
    net, gw = sim(source("S1"), source("S1", address="impostor"))
    net.advance_time(10.0)
    assert gw.directory.entries["S1"].endpoint == "S1"
    assert gw.rejected_announcements > 0


def test_setup_timeout_leaves_directory_unchanged():
    # a node that announces but never answers the metadata request
    class Mute(SourceNode):
        def on_frame(self, sender, frame):
            pass

    net, gw = sim(Mute(meta("S9"), ALLOW, ScriptedReadings()))
    net.advance_time(10.0)
    assert len(gw.directory) == 0
    # a fresh handshake is only opened once the previous one has expired
    asks = [r.sent_at for r, m in frames(net.transcript, kind="SetupMetadata", sender="gateway")]
    assert len(asks) > 1
    assert all(b - a >= gw.params.setup_timeout - 1e-9 for a, b in zip(asks, asks[1:]))


def test_heartbeats_keep_entry_live():
    net, gw = sim(source("S1"))
    net.advance_time(30.0)
    assert gw.directory.is_live("S1", net.now)
    net.drop_node("S1")
    net.advance_time(net.now + gw.params.liveness_timeout + 0.1)
    assert not gw.directory.is_live("S1", net.now)


# -- admission --


def test_canonical_request_accepted():
    d = directory_with(5)
    gw = detached()
    gw.directory = d
    assert gw.admit(request().to_bytes()) == request()


def test_tampered_tag_fails_auth_without_source_traffic():
    net = RecordingNet()
    gw = Gateway({"display-1": KEY}, ACL)
    gw.attach(net)
    gw.directory = directory_with(5)
    bad = corrupt_tag(request()).to_bytes()
    with pytest.raises(AuthFailed):
        authenticate(bad, gw.keys)
    gw.handle_request("display-1", bad)
    assert [dst for _, dst, _ in net.sent] == ["display-1"]
    reply = decode_message(net.sent[0][2])
    assert reply.kind is MessageKind.ERROR and reply.payload["error"] == "AuthFailed"


def test_unknown_consumer_fails_auth():
    req = DataRequest("r1", "stranger", "statistics", "sum", "occupancy", "3.A", (0.0, 1.0)).signed(KEY)
    with pytest.raises(AuthFailed):
        authenticate(req.to_bytes(), {"display-1": KEY})


def test_acl_denies_unlisted_purpose():
    gw = detached()
    gw.directory = directory_with(5)
    with pytest.raises(AccessDenied):
        gw.admit(request(purpose="billing").to_bytes())


@pytest.mark.parametrize(
    "change",
    [
        {"data_type": "humidity"},
        {"scope": "9.Z"},
        {"window": (10.0, 10.0)},
    ],
)
def test_implausible_requests(change):
    acl = AccessControlList(
        Grant("display-1", dt, "average", "statistics") for dt in ("occupancy", "humidity")
    )
    gw = detached(acl=acl)
    gw.directory = directory_with(5)
    with pytest.raises(Implausible):
        gw.admit(request(**change).to_bytes())


def test_auth_checked_before_acl():
    gw = detached(acl=AccessControlList())
    with pytest.raises(AuthFailed):
        gw.admit(corrupt_tag(request()).to_bytes())


# -- planning --


def test_plan_five_sources_min_three():
    raw = request().to_bytes()
    spec = plan_session(request(), raw, directory_with(5), 0.0, "gateway.0.1")
    assert len(spec.participants) == 5
    assert spec.original_request == raw
    assert spec.protocol_id == "average" and spec.data_type == "occupancy"


def test_plan_two_sources_insufficient():
    with pytest.raises(InsufficientSources) as info:
        plan_session(request(), request().to_bytes(), directory_with(2), 0.0, "s")
    assert (info.value.found, info.value.required) == (2, 3)
    assert info.value.to_payload()["detail"] == {"found": 2, "required": 3}


def test_plan_caps_participants():
    spec = plan_session(request(), request().to_bytes(), directory_with(20), 0.0, "s")
    assert len(spec.participants) == 16


def test_plan_excludes_dead_and_out_of_scope():
    d = directory_with(4)
    d.register(meta("T1", scope="3.B"), "T1", 0.0)
    d.mark_dead("S2")
    spec = plan_session(request(), request().to_bytes(), d, 0.0, "s")
    assert list(spec.party_ids) == ["S1", "S3", "S4"]


@given(st.text(min_size=1, max_size=20), st.sampled_from(["sum", "count", "average"]))
def test_spec_carries_exact_request_bytes(request_id, aggregate):
    req = request(request_id=request_id, aggregate=aggregate)
    raw = req.to_bytes()
    spec = plan_session(req, raw, directory_with(3), 0.0, "s")
    assert spec.original_request == raw
    assert DataRequest.from_bytes(spec.original_request) == req


# -- sessions end to end --


def test_session_ids_are_unique_and_epoch_scoped():
    sc = world([1.0, 2.0, 3.0], extra_requests=[])
    res = run_sim(sc)
    assert res.gateway.outcomes["r1"]["sessions"] == ["gateway.0.1"]


def test_veto_one_of_four():
    deny = SourcePolicy((), "deny")
    res = run_sim(world([1.0, 2.0, 3.0, 4.0], policies={"S4": deny}))
    r = res.result("r1")
    assert r["outcome"] == "error" and r["error"] == "Vetoed"
    assert r["detail"]["parties"] == ["S4"]
    aborted = {rec.receiver for rec, m in frames(res.transcript, kind="Abort", sender="gateway")}
    assert aborted == {"S1", "S2", "S3"}
    assert not frames(res.transcript, kind="ShareTransfer")
    for tlog in res.logs.values():
        assert len(tlog.records()) == 1


def test_policy_examples_through_gateway():
    policy = SourcePolicy((PolicyRule("display-*", "statistics", "occupancy", "allow"),), "deny")
    res = run_sim(world([1.0, 2.0, 3.0], policies={f"S{i}": policy for i in (1, 2, 3)}))
    assert res.result("r1")["value"] == 2.0


def test_recovery_four_to_three():
    sc = world([1.0, 2.0, 4.5, 100.0],
               faults=[Fault("drop_node", after={"kind": "ShareTransfer", "sender": "S4"}, node="S4")])
    res = run_sim(sc)
    r = res.result("r1")
    assert r["outcome"] == "ok" and r["restarts"] == 1
    assert r["value"] == pytest.approx(2.5) and r["contributors"] == 3
    sessions = res.gateway.outcomes["r1"]["sessions"]
    assert len(sessions) == 2 and sessions[0] != sessions[1]
    # the second attempt used fresh shares: no ShareTransfer payload repeats
    shares = [m["payload"]["share"] for _, m in frames(res.transcript, kind="ShareTransfer")]
    assert len(shares) == len(set(shares))


def test_recovery_below_quorum_fails():
    sc = world([1.0, 2.0, 4.5],
               faults=[Fault("drop_node", after={"kind": "ShareTransfer", "sender": "S3"}, node="S3")])
    res = run_sim(sc)
    r = res.result("r1")
    assert r["outcome"] == "error" and r["error"] == "SessionFailed"
    assert r["detail"]["last_cause"] == "Timeout"
    assert r["detail"]["attempts"] <= 2


def test_repeated_churn_exhausts_restart_budget():
    # one crash per attempt, each mid-exchange
    faults = [
        Fault("drop_node", after={"kind": "ShareTransfer", "sender": sid, "session_id": f"gateway.0.{k}"}, node=sid)
        for k, sid in enumerate(("S5", "S4", "S3"), start=1)
    ]
    res = run_sim(world([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], faults=faults))
    r = res.result("r1")
    assert r["outcome"] == "error" and r["error"] == "SessionFailed"
    assert r["detail"]["attempts"] == 2 and r["detail"]["last_cause"] == "Timeout"
    assert res.gateway.outcomes["r1"]["restarts"] == 2 and res.gateway.sessions == {}


def test_decision_timeout_counts_as_failure():
    # S3 silently drops the Announce; the others commit
    sc = world([1.0, 2.0, 3.0, 4.0],
               faults=[Fault("lose_message", at=0.0, match={"kind": "Announce", "receiver": "S3"}, count=1)])
    res = run_sim(sc)
    r = res.result("r1")
    assert r["outcome"] == "ok" and r["restarts"] == 1 and r["contributors"] == 3
    assert r["value"] == pytest.approx((1.0 + 2.0 + 4.0) / 3)


def test_session_state_reaches_terminal_phase():
    res = run_sim(world([1.0, 2.0, 3.0]))
    assert res.gateway.sessions == {}
    assert res.gateway.outcomes["r1"]["status"] == "ok"
    assert Phase.COMPLETED.value == "Completed"


# -- directory query --


def test_query_directory_lists_types_and_scopes():
    d = directory_with(2)
    d.register(meta("T1", scope="3.B"), "T1", 0.0)
    assert query_directory(d, 0.0) == {
        "occupancy": {"aggregates": ["average", "count", "sum"], "scopes": ["3.A", "3.B"], "unit": ["persons"]}
    }
    assert query_directory(MetadataDirectory(), 0.0) == {}


def test_query_directory_hides_identities():
    d = directory_with(3)
    text = repr(query_directory(d, 0.0))
    assert "S1" not in text and "endpoint" not in text


def test_directory_listing_tracks_liveness():
    params = Params()
    s1, s2 = source("S1"), source("S2")
    consumer = ConsumerNode("display-1", KEY)
    net, gw = sim(s1, s2, consumer, params=params)
    net.advance_time(1.0)
    consumer.query()
    net.advance_time(1.5)
    assert consumer.listings[-1]["occupancy"]["scopes"] == ["3.A"]
    net.drop_node("S1")
    net.drop_node("S2")
    net.advance_time(net.now + params.liveness_timeout + 0.5)
    consumer.query()
    net.advance_time(net.now + 0.5)
    assert consumer.listings[-1] == {}


# -- operator reload --


def test_reload_from_files(tmp_path):
    acl_path, keys_path = tmp_path / "acl.jsonl", tmp_path / "keys.jsonl"
    acl_path.write_bytes(AccessControlList().to_bytes())
    keys_path.write_bytes(keys_to_bytes({"display-1": KEY}))
    net = RecordingNet()
    gw = Gateway({"display-1": KEY}, ACL, acl_path=acl_path, keys_path=keys_path)
    gw.attach(net)
    gw.directory = directory_with(3)
    gw.admit(request().to_bytes())
    gw.on_frame("intruder", encode_message(ProtocolMessage(MessageKind.RELOAD, "intruder")))
    assert net.sent == [] and gw.acl is ACL
    gw.on_frame("operator", encode_message(ProtocolMessage(MessageKind.RELOAD, "operator")))
    reply = decode_message(net.sent[-1][2])
    assert reply.payload == {"status": "ok", "grants": 0, "keys": 1}
    with pytest.raises(AccessDenied):
        gw.admit(request().to_bytes())
    assert AccessControlList.from_bytes(ACL.to_bytes()).grants == ACL.grants
