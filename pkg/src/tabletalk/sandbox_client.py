"""Client for the external script sandbox (JSON over stdio, one process
per request).

The sandbox is a separate program; this client only speaks the documented
protocol (docs/sandbox-protocol.md): one request JSON on stdin, one
response JSON on stdout. Used when students emit free-form scripts
instead of table programs; disabled by default.
"""

from __future__ import annotations

import json
import subprocess
import threading
from dataclasses import dataclass

from .answers import normalize_answer
from .tableprog import ExecFailure, ExecResult
from .tables import Table

KILL_GRACE_MS = 1000


@dataclass
class SandboxClient:
    command: list[str]
    timeout_ms: int = 10000
    memory_mb: int = 256
    max_concurrency: int = 4

    def __post_init__(self):
        if not 100 <= self.timeout_ms <= 60000:
            raise ValueError("timeout_ms must be within [100, 60000]")
        if self.memory_mb < 64:
            raise ValueError("memory_mb must be >= 64")
        self._limiter = threading.BoundedSemaphore(self.max_concurrency)

    def run(self, program: str, table: Table) -> ExecResult:
        """Execute a script over the table, mapped into an ExecResult.

        Sandbox timeouts map to the "timeout" failure kind; syntax errors
        to "parse"; any other scripted failure to "type".
        """
        request = {
            "table": table.to_json(),
            "program": program,
            "timeout_ms": self.timeout_ms,
            "memory_mb": self.memory_mb,
        }
        wall_budget_s = (self.timeout_ms + 2 * KILL_GRACE_MS) / 1000
        with self._limiter:
            try:
                completed = subprocess.run(
                    self.command,
                    input=json.dumps(request).encode("utf-8"),
                    capture_output=True,
                    timeout=wall_budget_s,
                )
            except FileNotFoundError:
                return ExecResult(
                    failure=ExecFailure("type", f"sandbox command not found: {self.command[0]}")
                )
            except subprocess.TimeoutExpired:
                return ExecResult(failure=ExecFailure("timeout", "sandbox supervisor timeout"))
        if completed.returncode != 0:
            detail = completed.stderr.decode("utf-8", "replace")[:200]
            return ExecResult(failure=ExecFailure("type", f"sandbox runner failed: {detail}"))
        try:
            response = json.loads(completed.stdout.decode("utf-8"))
        except ValueError:
            return ExecResult(
                failure=ExecFailure("type", "sandbox returned malformed response JSON")
            )
        status = response.get("status")
        if status == "ok":
            return ExecResult(value=normalize_answer(str(response.get("answer", ""))))
        if status == "timeout":
            return ExecResult(failure=ExecFailure("timeout", "script timed out"))
        stderr = str(response.get("stderr", ""))[:300]
        kind = "parse" if "SyntaxError" in stderr else "type"
        return ExecResult(failure=ExecFailure(kind, f"script failed: {stderr}"))
