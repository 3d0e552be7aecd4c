"""Push the flood-only summary report to configured webhooks.

Wire contract: HTTP POST, body = summary-report document (UTF-8 JSON),
header ``X-Floodwatch-Round: {round_id}``; any 2xx counts as delivered.
An append-only delivery log keyed on (round_id, recipient) makes sends
at-most-once per round, including across restarts.
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from urllib.parse import urlparse

from .mapping import MapState, SummaryReport, report_text

log = logging.getLogger(__name__)

ROUND_HEADER = "X-Floodwatch-Round"


class PolicyError(ValueError):
    """Notification policy is malformed (caught at startup, not send time)."""


class NotifyMode(str, Enum):
    EVERY_ROUND = "every_round"
    ON_CHANGE = "on_change"


@dataclass(frozen=True)
class NotificationPolicy:
    mode: NotifyMode = NotifyMode.ON_CHANGE
    min_gap_s: float = 300.0
    recipients: tuple[str, ...] = ()
    enabled: bool = True
    timeout_s: float = 10.0

    def __post_init__(self):
        if self.min_gap_s < 0:
            raise PolicyError("min_gap_s must be >= 0")
        if self.enabled and not self.recipients:
            raise PolicyError("an enabled policy needs at least one recipient")
        for uri in self.recipients:
            parsed = urlparse(uri)
            if parsed.scheme not in ("http", "https") or not parsed.netloc:
                raise PolicyError(f"recipient {uri!r} is not a valid http(s) URI")


@dataclass(frozen=True)
class Delivery:
    recipient: str
    round_id: int
    outcome: str  # "delivered" | "failed"
    reason: str | None
    attempted_at: datetime

    @property
    def delivered(self) -> bool:
        return self.outcome == "delivered"


def should_notify(
    previous: MapState | None,
    current: MapState,
    policy: NotificationPolicy,
    last_sent_at: datetime | None,
    now: datetime | None = None,
) -> bool:
    """Gate a send: floods must exist, the mode condition must hold, and
    min_gap since the last successful send must have elapsed."""
    if not policy.enabled:
        return False
    floods = current.flood_tvids()
    if not floods:
        return False
    if policy.mode is NotifyMode.ON_CHANGE:
        prev_floods = previous.flood_tvids() if previous is not None else frozenset()
        if floods == prev_floods:
            return False
    if last_sent_at is not None:
        now = now or datetime.now(timezone.utc)
        if (now - last_sent_at).total_seconds() < policy.min_gap_s:
            return False
    return True


def notify(
    report: SummaryReport,
    policy: NotificationPolicy,
    recipients: tuple[str, ...] | None = None,
) -> list[Delivery]:
    """POST the report to each recipient. Failures are recorded per
    recipient, never raised; the payload bytes are identical for all."""
    if not report.events:
        raise ValueError("refusing to notify with an empty report")
    payload = report_text(report).encode("utf-8")
    headers = {
        "Content-Type": "application/json; charset=utf-8",
        ROUND_HEADER: str(report.round_id),
    }
    deliveries: list[Delivery] = []
    for recipient in recipients if recipients is not None else policy.recipients:
        attempted_at = datetime.now(timezone.utc)
        try:
            request = urllib.request.Request(recipient, data=payload, headers=headers, method="POST")
            with urllib.request.urlopen(request, timeout=policy.timeout_s) as response:
                status = response.status
            if 200 <= status < 300:
                deliveries.append(Delivery(recipient, report.round_id, "delivered", None, attempted_at))
            else:
                deliveries.append(
                    Delivery(recipient, report.round_id, "failed", f"http {status}", attempted_at)
                )
        except urllib.error.HTTPError as exc:
            deliveries.append(
                Delivery(recipient, report.round_id, "failed", f"http {exc.code}", attempted_at)
            )
        except Exception as exc:
            deliveries.append(
                Delivery(
                    recipient,
                    report.round_id,
                    "failed",
                    str(exc) or exc.__class__.__name__,
                    attempted_at,
                )
            )
    return deliveries


class DeliveryLog:
    """Append-only JSONL log; the single serialization point for sends."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self._sent: set[tuple[int, str]] = set()
        self._last_delivered_at: datetime | None = None
        if self.path.exists():
            self._load()

    def _load(self) -> None:
        for line in self.path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                self._sent.add((int(doc["round_id"]), doc["recipient"]))
                if doc.get("outcome") == "delivered":
                    at = datetime.fromisoformat(doc["attempted_at"])
                    if self._last_delivered_at is None or at > self._last_delivered_at:
                        self._last_delivered_at = at
            except (ValueError, KeyError):
                log.warning("skipping malformed delivery log line: %r", line)

    def already_sent(self, round_id: int, recipient: str) -> bool:
        with self._lock:
            return (round_id, recipient) in self._sent

    def last_delivered_at(self) -> datetime | None:
        with self._lock:
            return self._last_delivered_at

    def record(self, deliveries: list[Delivery]) -> None:
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("a", encoding="utf-8") as fh:
                for d in deliveries:
                    fh.write(
                        json.dumps(
                            {
                                "round_id": d.round_id,
                                "recipient": d.recipient,
                                "outcome": d.outcome,
                                "reason": d.reason,
                                "attempted_at": d.attempted_at.isoformat(),
                            }
                        )
                        + "\n"
                    )
                    self._sent.add((d.round_id, d.recipient))
                    if d.delivered and (
                        self._last_delivered_at is None or d.attempted_at > self._last_delivered_at
                    ):
                        self._last_delivered_at = d.attempted_at


@dataclass
class Notifier:
    """Transition-aware notification agent bound to a delivery log."""

    policy: NotificationPolicy
    log_path: Path
    _log: DeliveryLog = field(init=False)

    def __post_init__(self):
        self._log = DeliveryLog(self.log_path)

    def maybe_notify(
        self,
        previous: MapState | None,
        current: MapState,
        report: SummaryReport,
        now: datetime | None = None,
    ) -> list[Delivery]:
        """Apply the policy, skip (round, recipient) pairs already decided,
        send, and record. Replaying a round never double-sends."""
        if not should_notify(previous, current, self.policy, self._log.last_delivered_at(), now):
            return []
        pending = tuple(
            r for r in self.policy.recipients if not self._log.already_sent(report.round_id, r)
        )
        if not pending:
            return []
        deliveries = notify(report, self.policy, recipients=pending)
        self._log.record(deliveries)
        return deliveries
