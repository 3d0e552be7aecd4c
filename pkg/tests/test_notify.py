from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone

import pytest

from floodwatch.mapping import MapState, Status, CameraStatus, report_text, summary_report
from floodwatch.notify import (
    DeliveryLog,
    NotificationPolicy,
    Notifier,
    NotifyMode,
    PolicyError,
    notify,
    should_notify,
)

NOW = datetime(2023, 8, 13, 6, 0, 0, tzinfo=timezone.utc)


def _state(floods: set[str], round_id: int, cameras=("A", "B", "C")) -> MapState:
    statuses = {}
    for i, tvid in enumerate(cameras):
        statuses[tvid] = CameraStatus(
            tvid=tvid,
            status=Status.FLOOD if tvid in floods else Status.NORMAL,
            longitude=121.0 + i * 0.01,
            latitude=25.0 - i * 0.01,
            roadsection=f"section {tvid}",
        )
    return MapState(round_id=round_id, statuses=statuses, generated_at=NOW)


def _policy(sink_url: str = "http://127.0.0.1:1/hook", **kw) -> NotificationPolicy:
    kw.setdefault("mode", NotifyMode.ON_CHANGE)
    kw.setdefault("min_gap_s", 0.0)
    kw.setdefault("recipients", (sink_url,))
    return NotificationPolicy(**kw)


class TestPolicyValidation:
    def test_recipient_uri_checked_at_startup(self):
        with pytest.raises(PolicyError):
            NotificationPolicy(recipients=("not a uri",))
        with pytest.raises(PolicyError):
            NotificationPolicy(recipients=("ftp://host/x",))

    def test_enabled_needs_recipients(self):
        with pytest.raises(PolicyError):
            NotificationPolicy(recipients=())
        NotificationPolicy(recipients=(), enabled=False)

    def test_negative_gap_rejected(self):
        with pytest.raises(PolicyError):
            NotificationPolicy(min_gap_s=-1, recipients=("http://h/x",))


class TestShouldNotify:
    def test_no_change_no_send(self):
        policy = _policy()
        assert not should_notify(_state({"A", "B"}, 1), _state({"A", "B"}, 2), policy, None)

    def test_new_event_sends(self):
        assert should_notify(_state(set(), 1), _state({"A"}, 2), _policy(), None)

    def test_first_round_with_floods_sends(self):
        assert should_notify(None, _state({"A"}, 1), _policy(), None)

    def test_every_round_mode_skips_empty(self):
        policy = _policy(mode=NotifyMode.EVERY_ROUND)
        assert not should_notify(None, _state(set(), 1), policy, None)
        assert should_notify(_state({"A"}, 1), _state({"A"}, 2), policy, None)

    def test_cleared_floods_suppress(self):
        assert not should_notify(_state({"A", "B"}, 1), _state(set(), 2), _policy(), None)

    def test_min_gap_gates(self):
        policy = _policy(min_gap_s=300)
        last = NOW - timedelta(seconds=100)
        assert not should_notify(
            _state(set(), 1), _state({"A"}, 2), policy, last, now=NOW
        )
        last = NOW - timedelta(seconds=400)
        assert should_notify(_state(set(), 1), _state({"A"}, 2), policy, last, now=NOW)

    def test_disabled_policy_never_sends(self):
        policy = NotificationPolicy(enabled=False, recipients=())
        assert not should_notify(None, _state({"A"}, 1), policy, None)


class TestNotify:
    def test_payload_and_header(self, webhook_sink):
        state = _state({"A", "B"}, 9)
        report = summary_report(state, "http://maps/flood")
        policy = _policy(webhook_sink.url())
        deliveries = notify(report, policy)
        assert [d.outcome for d in deliveries] == ["delivered"]
        path, round_header, body = webhook_sink.requests[0]
        assert round_header == "9"
        assert body.decode("utf-8") == report_text(report)
        doc = json.loads(body)
        assert [e["tvid"] for e in doc["events"]] == ["A", "B"]
        assert doc["map_url"] == "http://maps/flood"

    def test_failed_recipient_does_not_affect_others(self, webhook_sink):
        webhook_sink.status_for_path["/bad"] = 500
        policy = _policy(recipients=(webhook_sink.url("/bad"), webhook_sink.url("/good")))
        report = summary_report(_state({"A"}, 1), "http://maps")
        deliveries = notify(report, policy)
        outcomes = {d.recipient.rsplit("/", 1)[-1]: d for d in deliveries}
        assert outcomes["bad"].outcome == "failed"
        assert "500" in outcomes["bad"].reason
        assert outcomes["good"].outcome == "delivered"

    def test_unreachable_recipient_is_failed_delivery(self):
        policy = _policy("http://127.0.0.1:9/hook", timeout_s=2.0)
        report = summary_report(_state({"A"}, 1), "http://maps")
        deliveries = notify(report, policy)
        assert deliveries[0].outcome == "failed"

    def test_empty_report_rejected(self):
        report = summary_report(_state(set(), 1), "http://maps")
        with pytest.raises(ValueError):
            notify(report, _policy())


class TestNotifier:
    def test_transition_sequence_and_replay(self, webhook_sink, tmp_path):
        policy = _policy(webhook_sink.url())
        notifier = Notifier(policy, tmp_path / "deliveries.log")
        rounds = [
            _state(set(), 1),
            _state({"A"}, 2),
            _state({"A"}, 3),
            _state({"A", "B"}, 4),
            _state(set(), 5),
        ]
        sent = 0
        previous = None
        for state in rounds:
            report = summary_report(state, "http://maps")
            if report.events:
                sent += len(notifier.maybe_notify(previous, state, report))
            previous = state
        assert sent == 2
        assert [h for _, h, _ in webhook_sink.requests] == ["2", "4"]
        # replaying round 4 produces no additional delivery
        report4 = summary_report(rounds[3], "http://maps")
        assert notifier.maybe_notify(rounds[2], rounds[3], report4) == []
        assert len(webhook_sink.requests) == 2

    def test_at_most_once_across_restart(self, webhook_sink, tmp_path):
        policy = _policy(webhook_sink.url())
        log_path = tmp_path / "deliveries.log"
        notifier = Notifier(policy, log_path)
        state = _state({"A"}, 2)
        report = summary_report(state, "http://maps")
        assert len(notifier.maybe_notify(_state(set(), 1), state, report)) == 1
        # new process, same log
        reborn = Notifier(policy, log_path)
        assert reborn.maybe_notify(_state(set(), 1), state, report) == []
        assert len(webhook_sink.requests) == 1

    def test_min_gap_respected_between_rounds(self, webhook_sink, tmp_path):
        policy = _policy(webhook_sink.url(), min_gap_s=3600)
        notifier = Notifier(policy, tmp_path / "deliveries.log")
        s1 = _state({"A"}, 1)
        assert len(notifier.maybe_notify(None, s1, summary_report(s1, "u"))) == 1
        s2 = _state({"A", "B"}, 2)
        # a change arrived, but the gap has not elapsed
        assert notifier.maybe_notify(s1, s2, summary_report(s2, "u")) == []
        assert len(webhook_sink.requests) == 1

    def test_failed_attempt_is_not_retried_same_round(self, webhook_sink, tmp_path):
        webhook_sink.status_for_path["/hook"] = 500
        policy = _policy(webhook_sink.url())
        notifier = Notifier(policy, tmp_path / "deliveries.log")
        state = _state({"A"}, 1)
        report = summary_report(state, "http://maps")
        deliveries = notifier.maybe_notify(None, state, report)
        assert deliveries[0].outcome == "failed"
        assert notifier.maybe_notify(None, state, report) == []
        assert len(webhook_sink.requests) == 1


class TestDeliveryLog:
    def test_reload_restores_index_and_last_delivered(self, tmp_path):
        path = tmp_path / "log"
        log = DeliveryLog(path)
        from floodwatch.notify import Delivery

        log.record(
            [
                Delivery("http://h/a", 1, "delivered", None, NOW),
                Delivery("http://h/b", 1, "failed", "http 500", NOW + timedelta(seconds=5)),
            ]
        )
        fresh = DeliveryLog(path)
        assert fresh.already_sent(1, "http://h/a")
        assert fresh.already_sent(1, "http://h/b")
        assert not fresh.already_sent(2, "http://h/a")
        assert fresh.last_delivered_at() == NOW
