"""Acquisition-device simulator.

Plays the role of the software on board a sensing device: log in, then push
drone acquisitions from a CSV file either row by row (single-stream, paced
by a target rate with optional jitter) or as one massive batch upload.

Rows can be corrupted on purpose to exercise server-side validation, and a
resume file records the last acknowledged row so an interrupted stream can
continue where it stopped. Re-sending an already stored row is safe: the
server rejects the duplicate id and the simulator counts the row as
acknowledged, so each acquisition lands exactly once no matter how often
the stream restarts.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import random
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

MODE_SINGLE = "single-stream"
MODE_MASSIVE = "massive"

RETRYABLE_STATUS = 500


class SimError(Exception):
    """The simulation cannot proceed (bad config, bad source file)."""


class AuthFailed(SimError):
    """Login was rejected; nothing was sent."""


class ConnectionLost(SimError):
    """Retries exhausted mid-stream; progress survives in the resume file."""

    def __init__(self, message: str, summary: dict):
        super().__init__(message)
        self.summary = summary


@dataclass(frozen=True)
class SimConfig:
    server_url: str
    username: str
    password: str
    mode: str = MODE_SINGLE
    source: str = ""
    rate: float = 10.0
    jitter: float = 0.0
    fail_rows: tuple[int, ...] = ()
    resume_file: str | None = None
    timeout: float = 30.0
    max_retries: int = 4
    backoff: float = 0.2

    def __post_init__(self):
        if self.mode not in (MODE_SINGLE, MODE_MASSIVE):
            raise SimError(f"mode must be {MODE_SINGLE} or {MODE_MASSIVE}, got {self.mode!r}")
        if not (self.rate > 0):
            raise SimError(f"rate must be > 0 uploads/second, got {self.rate}")
        if not (0 <= self.jitter < 1):
            raise SimError(f"jitter must be in [0, 1), got {self.jitter}")
        if any(n < 1 for n in self.fail_rows):
            raise SimError("fail_rows are 1-based data row numbers")
        if not self.server_url:
            raise SimError("server_url must be set")


# --------------------------------------------------------------- CSV source


def _load_rows(path: str) -> tuple[list[str], list[list[str]]]:
    """Header and data rows of the source CSV; blank lines are skipped."""
    try:
        text = Path(path).read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise SimError(f"cannot read source CSV {path!r}: {exc}") from None
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if not rows:
        raise SimError(f"source CSV {path!r} is empty")
    return rows[0], rows[1:]


def _corrupt(row: list[str], header: list[str]) -> list[str]:
    """Damage one row so the server must reject it.

    An impossible latitude survives CSV quoting and trips validation in both
    single and batch uploads; without a lat column the id is blanked instead.
    """
    damaged = list(row)
    try:
        damaged[header.index("lat")] = "91.0"
    except ValueError:
        damaged[0] = ""
    return damaged


def _record(header: list[str], row: list[str]) -> dict:
    """One CSV row as the JSON record the single-upload endpoint expects."""
    return {key: cell for key, cell in zip(header, row) if cell != ""}


def _pacing(rate: float, jitter: float, rng: random.Random):
    """Endless sleep intervals averaging 1/rate, spread by +-jitter."""
    base = 1.0 / rate
    while True:
        yield base * (1.0 + rng.uniform(-jitter, jitter)) if jitter else base


# -------------------------------------------------------------- resume file


def _read_resume(path: str | None) -> int:
    if not path or not Path(path).exists():
        return 0
    try:
        state = json.loads(Path(path).read_text(encoding="utf-8"))
        return int(state["row"])
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise SimError(f"resume file {path!r} is unreadable: {exc}") from None


def _write_resume(path: str | None, row_number: int) -> None:
    if not path:
        return
    target = Path(path)
    tmp = target.with_suffix(target.suffix + ".tmp")
    tmp.write_text(json.dumps({"row": row_number}), encoding="utf-8")
    tmp.replace(target)


# ------------------------------------------------------------------- client


class _Client:
    """Thin wrapper around requests with login and retry/backoff."""

    def __init__(self, config: SimConfig, sleep=time.sleep):
        self.config = config
        self.base = config.server_url.rstrip("/")
        self.session = requests.Session()
        self.sleep = sleep

    def login(self) -> None:
        try:
            r = self.session.post(
                f"{self.base}/auth/login",
                json={"username": self.config.username, "password": self.config.password},
                timeout=self.config.timeout,
            )
        except requests.RequestException as exc:
            raise AuthFailed(f"cannot reach {self.base}: {exc}") from None
        if r.status_code != 200:
            raise AuthFailed(f"login rejected ({r.status_code}): {r.text}")
        self.session.headers["Authorization"] = f"Bearer {r.json()['token']}"

    def post_with_retry(self, path: str, **kwargs) -> requests.Response:
        """POST, retrying transport errors and 5xx with exponential backoff."""
        delay = self.config.backoff
        last: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self.sleep(delay)
                delay *= 2
            try:
                r = self.session.post(
                    f"{self.base}{path}", timeout=self.config.timeout, **kwargs
                )
            except requests.RequestException as exc:
                last = exc
                continue
            if r.status_code >= RETRYABLE_STATUS:
                last = SimError(f"server error {r.status_code}")
                continue
            return r
        raise last if last is not None else SimError("no attempts made")


# ---------------------------------------------------------------------- run


@dataclass
class _Tally:
    sent: int = 0
    acknowledged: int = 0
    failed: int = 0
    duplicates: int = 0
    errors: list[dict] = field(default_factory=list)

    def summary(self, mode: str, started: float, resumed_from: int) -> dict:
        return {
            "mode": mode,
            "sent": self.sent,
            "acknowledged": self.acknowledged,
            "failed": self.failed,
            "duplicates": self.duplicates,
            "resumed_from_row": resumed_from,
            "wall_time_seconds": round(time.monotonic() - started, 3),
            "errors": self.errors,
        }


def run(config: SimConfig, sleep=time.sleep, rng: random.Random | None = None) -> dict:
    """Execute the simulation and return its summary.

    The summary's acknowledged count equals the number of this file's rows
    the server now stores, so it reconciles against GET /api/drone.
    """
    header, rows = _load_rows(config.source)
    out_of_file = [n for n in config.fail_rows if n > len(rows)]
    if out_of_file:
        raise SimError(f"fail_rows {out_of_file} beyond the {len(rows)} data rows")
    damaged = {
        n: _corrupt(rows[n - 1], header) for n in config.fail_rows
    }

    client = _Client(config, sleep=sleep)
    client.login()
    started = time.monotonic()

    if config.mode == MODE_MASSIVE:
        return _run_massive(config, client, header, rows, damaged, started)
    return _run_single(config, client, header, rows, damaged, started,
                       sleep=sleep, rng=rng or random.Random())


def _run_massive(config, client, header, rows, damaged, started) -> dict:
    tally = _Tally()
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(header)
    for number, row in enumerate(rows, start=1):
        writer.writerow(damaged.get(number, row))
    try:
        r = client.post_with_retry(
            "/api/drone/batch",
            data=buffer.getvalue().encode("utf-8"),
            headers={"Content-Type": "text/csv"},
        )
    except (requests.RequestException, SimError) as exc:
        raise ConnectionLost(str(exc), tally.summary(config.mode, started, 0)) from None
    tally.sent = len(rows)
    if r.status_code != 200:
        tally.failed = len(rows)
        tally.errors.append(r.json())
        return tally.summary(config.mode, started, 0)
    report = r.json()
    tally.acknowledged = report["accepted"]
    tally.failed = report["rejected"]
    tally.errors = report["row_errors"]
    return tally.summary(config.mode, started, 0)


def _run_single(config, client, header, rows, damaged, started, sleep, rng) -> dict:
    tally = _Tally()
    resumed_from = _read_resume(config.resume_file)
    pacing = _pacing(config.rate, config.jitter, rng)
    for number, row in enumerate(rows, start=1):
        if number <= resumed_from:
            continue
        record = _record(header, damaged.get(number, row))
        try:
            r = client.post_with_retry("/api/drone", json=record)
        except (requests.RequestException, SimError) as exc:
            raise ConnectionLost(
                f"lost connection at row {number}: {exc}",
                tally.summary(config.mode, started, resumed_from),
            ) from None
        tally.sent += 1
        if r.status_code == 201:
            tally.acknowledged += 1
            _write_resume(config.resume_file, number)
        elif r.status_code == 409:
            # already stored by an earlier run; the acquisition is on the
            # server exactly once, which is what acknowledged means
            tally.acknowledged += 1
            tally.duplicates += 1
            _write_resume(config.resume_file, number)
        else:
            tally.failed += 1
            body = r.json()
            tally.errors.append({
                "row_number": number,
                "code": body.get("code", "error"),
                "message": body.get("message", r.text),
            })
        if number < len(rows):
            sleep(next(pacing))
    return tally.summary(config.mode, started, resumed_from)


# ---------------------------------------------------------------------- CLI


def _parse_fail_rows(raw: str) -> tuple[int, ...]:
    if not raw:
        return ()
    try:
        return tuple(int(part) for part in raw.split(","))
    except ValueError:
        raise SimError(f"--fail-rows wants comma-separated integers, got {raw!r}") from None


def build_config(argv: list[str] | None = None) -> SimConfig:
    parser = argparse.ArgumentParser(
        prog="soilatlas-device",
        description="Stream drone acquisitions from a CSV file to a running server.",
    )
    parser.add_argument("--server", required=True, help="base URL, e.g. http://127.0.0.1:8080")
    parser.add_argument("--username", required=True)
    parser.add_argument("--password", required=True)
    parser.add_argument("--mode", choices=[MODE_SINGLE, MODE_MASSIVE], default=MODE_SINGLE)
    parser.add_argument("--source", required=True, help="CSV file with drone acquisitions")
    parser.add_argument("--rate", type=float, default=10.0, help="uploads per second (single-stream)")
    parser.add_argument("--jitter", type=float, default=0.0, help="pacing spread as a fraction of 1/rate")
    parser.add_argument("--fail-rows", default="", help="comma-separated 1-based data rows to corrupt")
    parser.add_argument("--resume-file", default=None, help="path recording the last acknowledged row")
    parser.add_argument("--timeout", type=float, default=30.0)
    args = parser.parse_args(argv)
    return SimConfig(
        server_url=args.server,
        username=args.username,
        password=args.password,
        mode=args.mode,
        source=args.source,
        rate=args.rate,
        jitter=args.jitter,
        fail_rows=_parse_fail_rows(args.fail_rows),
        resume_file=args.resume_file,
        timeout=args.timeout,
    )


def main(argv: list[str] | None = None) -> int:
    try:
        config = build_config(argv)
        summary = run(config)
    except ConnectionLost as exc:
        print(json.dumps({"error": str(exc), "summary": exc.summary}), file=sys.stderr)
        return 2
    except SimError as exc:
        print(json.dumps({"error": str(exc)}), file=sys.stderr)
        return 2
    print(json.dumps(summary, indent=2))
    return 0 if summary["failed"] == 0 else 1


if __name__ == "__main__":
    sys.exit(main())
