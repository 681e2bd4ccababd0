import numpy as np
import pytest

from comm_fabric import (CommFabric, CommLedger, DeterministicScheduler, Message, Recv, Tag, ThreadedRunner,
                         assign_groups, ledger_report, run_programs, write_comm_report)
from errors import CommError, DeadlockError
from sim_clock import CostModel, SimClock, epoch_span, merge_events, read_trace, write_trace


def _ping_pong(fabric, rounds=3):
    def sender():
        for i in range(rounds):
            fabric.send(Message(0, 1, Tag.FORWARD_EMB, epoch=0, chunk=i, payload=(np.ones((2, 3)),)))
            msg, _ = yield Recv(1, Tag.BACKWARD_GRAD)
            assert msg.chunk == i

    def receiver():
        for i in range(rounds):
            msg, _ = yield Recv(0, Tag.FORWARD_EMB)
            fabric.send(Message(1, 0, Tag.BACKWARD_GRAD, epoch=0, chunk=msg.chunk,
                                vertex_ids=np.arange(2), payload=(msg.payload[0] * 2,)))

    return {0: sender(), 1: receiver()}


def test_groups_stay_inside_nodes():
    gm = assign_groups(8, 4, 2, 4)
    assert gm.groups == ((0, 1, 2, 3), (4, 5, 6, 7))
    assert gm.spanning_groups() == 0
    assert gm.link_class(0, 3) == "intra-node"
    assert gm.link_class(3, 4) == "inter-node"
    assert gm.rank_in_group[5] == 1


def test_leftover_workers_are_pooled():
    gm = assign_groups(6, 4, 2, 3)
    assert gm.groups == ((0, 1, 2), (3, 4, 5))
    assert gm.spanning_groups() == 1
    with pytest.raises(ValueError):
        assign_groups(8, 4, 3, 2)


def test_message_sizes():
    msg = Message(0, 1, Tag.GRAPH_BOUNDARY_FWD, 0, vertex_ids=np.arange(5), payload=(np.zeros((5, 4)),))
    assert msg.data_bytes == 80
    assert msg.id_bytes == 40
    control = Message(0, 1, Tag.CONTROL, 0, control={"ready": True}, payload=(np.zeros(3),))
    assert control.byte_size == 0


def test_deterministic_scheduler_conserves_bytes():
    ledger = CommLedger()
    fabric = CommFabric(2, ledger)
    DeterministicScheduler(fabric).run(_ping_pong(fabric))
    ledger.close_epoch(0)
    report = ledger_report(ledger, 0)
    assert report.pipeline_bytes == 2 * 3 * 24
    assert report.graph_bytes == 0
    assert report.id_bytes == 3 * 16
    assert fabric.pending() == 0


def test_threaded_runner_matches_scheduler():
    ledger = CommLedger()
    fabric = CommFabric(2, ledger)
    ThreadedRunner(fabric, watchdog_timeout=5.0).run(_ping_pong(fabric, rounds=5))
    ledger.close_epoch(0)
    assert ledger_report(ledger, 0).by_tag()["ForwardEmb"] == 5 * 24


def test_undelivered_message_breaks_conservation():
    ledger = CommLedger()
    fabric = CommFabric(2, ledger)
    fabric.send(Message(0, 1, Tag.WEIGHT_SYNC, 0, payload=(np.zeros(2),)))
    with pytest.raises(CommError):
        ledger.close_epoch(0)
    fabric.try_recv(1, 0, Tag.WEIGHT_SYNC)
    ledger.close_epoch(0)
    with pytest.raises(CommError):
        fabric.send(Message(0, 1, Tag.WEIGHT_SYNC, 0, payload=(np.zeros(2),)))


def test_send_copies_payload():
    fabric = CommFabric(2, CommLedger())
    data = np.zeros(3)
    fabric.send(Message(0, 1, Tag.EVAL_EMB, 0, payload=(data,)))
    data[:] = 9
    msg, _ = fabric.try_recv(1, 0, Tag.EVAL_EMB)
    assert not msg.payload[0].any()
    with pytest.raises(CommError):
        fabric.send(Message(1, 1, Tag.EVAL_EMB, 0))


def _stuck(fabric):
    def waiting(w):
        yield Recv(1 - w, Tag.CONTROL)
    return {0: waiting(0), 1: waiting(1)}


def test_scheduler_reports_deadlock():
    fabric = CommFabric(2, CommLedger())
    with pytest.raises(DeadlockError) as info:
        run_programs(fabric, _stuck(fabric), deterministic=True)
    assert info.value.blocked == {0: (1, "Control"), 1: (0, "Control")}


def test_watchdog_reports_deadlock():
    fabric = CommFabric(2, CommLedger())
    with pytest.raises(DeadlockError):
        ThreadedRunner(fabric, watchdog_timeout=0.3, poll_interval=0.05).run(_stuck(fabric))


def test_comm_report_csv(tmp_path):
    ledger = CommLedger()
    fabric = CommFabric(2, ledger)
    DeterministicScheduler(fabric).run(_ping_pong(fabric, rounds=1))
    ledger.close_epoch(0)
    path = write_comm_report([ledger_report(ledger, 0)], tmp_path / "comm.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,tag,link_class,bytes,gib"
    assert "0,ForwardEmb,intra-node,24," in "\n".join(lines)


def test_clock_records_idle_and_trace_round_trip(tmp_path):
    clock = SimClock(0, CostModel.uniform(unit=2.0))
    clock.compute(10, 1, chunk=0, lo=1, hi=1)
    clock.receive(5.0)
    clock.compute(10, 1, chunk=0, lo=1, hi=1, backward=True)
    assert clock.now == 9.0
    assert [e.kind for e in clock.events] == ["compute", "idle", "recv", "compute"]
    events = merge_events([clock])
    assert epoch_span(events, 0) == 9.0
    assert read_trace(write_trace(events, tmp_path / "trace.jsonl")) == events
    clock.training = False
    clock.compute(10, 1, chunk=0, lo=1, hi=1)
    assert clock.now == 9.0
