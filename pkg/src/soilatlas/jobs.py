"""In-process background jobs with polled status.

Long-running work (overview builds, batch predictions) is accepted
immediately and executed on a small worker pool; callers poll the job id.
Job state lives in memory only: jobs interrupted by a process crash are
re-queued from persistent state at startup by their owning service.
"""

from __future__ import annotations

import threading
import time
import traceback
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import errors

QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"


@dataclass
class JobRecord:
    id: str
    kind: str
    status: str = QUEUED
    error: str | None = None
    result: dict | None = None
    created_at: float = field(default_factory=time.time)
    finished_at: float | None = None

    def snapshot(self) -> dict:
        return {
            "id": self.id,
            "kind": self.kind,
            "status": self.status,
            "error": self.error,
            "result": self.result,
        }


class JobRegistry:
    def __init__(self, workers: int = 2, synchronous: bool = False):
        self.synchronous = synchronous
        self._executor = None if synchronous else ThreadPoolExecutor(
            max_workers=workers, thread_name_prefix="job"
        )
        self._jobs: dict[str, JobRecord] = {}
        self._lock = threading.Lock()
        self._done = threading.Condition(self._lock)

    def submit(self, kind: str, fn, *args, **kwargs) -> str:
        job_id = str(uuid.uuid4())
        record = JobRecord(id=job_id, kind=kind)
        with self._lock:
            self._jobs[job_id] = record
        if self.synchronous:
            self._run(record, fn, args, kwargs)
        else:
            self._executor.submit(self._run, record, fn, args, kwargs)
        return job_id

    def _run(self, record: JobRecord, fn, args, kwargs) -> None:
        with self._lock:
            record.status = RUNNING
        try:
            result = fn(*args, **kwargs)
            with self._lock:
                record.result = result if isinstance(result, dict) else None
                record.status = DONE
        except BaseException as exc:
            with self._lock:
                record.error = f"{type(exc).__name__}: {exc}"
                record.status = FAILED
            if self.synchronous:
                raise
            traceback.print_exc()
        finally:
            with self._lock:
                record.finished_at = time.time()
                self._done.notify_all()

    def get(self, job_id: str) -> JobRecord:
        with self._lock:
            record = self._jobs.get(job_id)
        if record is None:
            raise errors.NotFound(f"job {job_id!r} not found")
        return record

    def wait(self, job_id: str, timeout: float = 30.0) -> JobRecord:
        deadline = time.time() + timeout
        with self._done:
            while True:
                record = self._jobs.get(job_id)
                if record is None:
                    raise errors.NotFound(f"job {job_id!r} not found")
                if record.status in (DONE, FAILED):
                    return record
                remaining = deadline - time.time()
                if remaining <= 0:
                    raise TimeoutError(f"job {job_id} still {record.status} after {timeout}s")
                self._done.wait(remaining)

    def shutdown(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
