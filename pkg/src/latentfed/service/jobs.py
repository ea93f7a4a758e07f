"""In-memory job registry; experiments run on daemon worker threads."""
from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"


@dataclass
class Job:
    job_id: str
    name: str
    out_dir: Path
    status: str = QUEUED
    error: Optional[str] = None
    summary: Optional[dict] = None


class JobStore:
    def __init__(self):
        self._jobs: Dict[str, Job] = {}
        self._lock = threading.Lock()
        self._counter = itertools.count(1)

    def submit(self, name: str, out_dir: Path, work: Callable[[], dict]) -> Job:
        with self._lock:
            job = Job(job_id=f"job-{next(self._counter)}", name=name, out_dir=out_dir)
            self._jobs[job.job_id] = job

        def _run():
            with self._lock:
                job.status = RUNNING
            try:
                summary = work()
            except Exception as exc:  # surfaced via the job status, not the server log
                with self._lock:
                    job.status = FAILED
                    job.error = f"{type(exc).__name__}: {exc}"
                return
            with self._lock:
                job.status = DONE
                job.summary = summary

        threading.Thread(target=_run, daemon=True).start()
        return job

    def get(self, job_id: str) -> Optional[Job]:
        with self._lock:
            return self._jobs.get(job_id)

    def all(self) -> List[Job]:
        with self._lock:
            return list(self._jobs.values())
