"""Supervisor: fresh guarded child per request, resource limits, kill on
timeout, and the stdio protocol (docs/sandbox-protocol.md in the main
repository)."""

import json
import os
import shutil
import subprocess
import sys
import tempfile
import time
from pathlib import Path

HARNESS_SOURCE = (Path(__file__).parent / "harness.py").read_text(encoding="utf-8")

TIMEOUT_MIN_MS = 100
TIMEOUT_MAX_MS = 60000
MEMORY_MIN_MB = 64


def _error_response(message: str, duration_ms: int = 0) -> dict:
    return {"status": "error", "answer": None, "stderr": message, "duration_ms": duration_ms}


def _validate(request: dict) -> str | None:
    if not isinstance(request, dict):
        return "request must be a JSON object"
    table = request.get("table")
    if not isinstance(table, dict) or "columns" not in table or "rows" not in table:
        return "request.table must carry columns and rows"
    if not isinstance(request.get("program"), str) or not request["program"].strip():
        return "request.program must be a non-empty string"
    timeout = request.get("timeout_ms")
    if not isinstance(timeout, int) or not TIMEOUT_MIN_MS <= timeout <= TIMEOUT_MAX_MS:
        return f"request.timeout_ms must be an int in [{TIMEOUT_MIN_MS}, {TIMEOUT_MAX_MS}]"
    memory = request.get("memory_mb")
    if not isinstance(memory, int) or memory < MEMORY_MIN_MB:
        return f"request.memory_mb must be an int >= {MEMORY_MIN_MB}"
    return None


def _limit_setter(memory_mb: int, timeout_ms: int):
    def set_limits():
        try:
            import resource

            memory_bytes = memory_mb * 1024 * 1024
            resource.setrlimit(resource.RLIMIT_AS, (memory_bytes, memory_bytes))
            cpu_seconds = max(1, timeout_ms // 1000 + 1)
            resource.setrlimit(resource.RLIMIT_CPU, (cpu_seconds, cpu_seconds))
        except (ImportError, ValueError, OSError):
            pass  # limits are best-effort; the supervisor kill still applies

    return set_limits


def execute(request: dict) -> dict:
    """Run one request in a fresh child process; never raises."""
    problem = _validate(request)
    if problem is not None:
        return _error_response(problem)
    scratch = tempfile.mkdtemp(prefix="table-sandbox-")
    start = time.monotonic()
    try:
        child = subprocess.Popen(
            [sys.executable, "-I", "-c", HARNESS_SOURCE],
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
            cwd=scratch,
            preexec_fn=_limit_setter(request["memory_mb"], request["timeout_ms"])
            if os.name == "posix"
            else None,
        )
        payload = json.dumps(
            {"table": request["table"], "program": request["program"]}
        ).encode("utf-8")
        try:
            stdout, stderr = child.communicate(payload, timeout=request["timeout_ms"] / 1000)
        except subprocess.TimeoutExpired:
            child.kill()
            child.communicate()
            duration = int((time.monotonic() - start) * 1000)
            return {
                "status": "timeout",
                "answer": None,
                "stderr": "killed by supervisor at timeout",
                "duration_ms": duration,
            }
        duration = int((time.monotonic() - start) * 1000)
        text = stdout.decode("utf-8", "replace").strip()
        last_line = text.splitlines()[-1] if text else ""
        try:
            result = json.loads(last_line)
        except ValueError:
            detail = stderr.decode("utf-8", "replace")[-400:]
            return _error_response(f"child produced no result: {detail}", duration)
        if result.get("ok"):
            return {
                "status": "ok",
                "answer": str(result.get("answer", "")),
                "stderr": "",
                "duration_ms": duration,
            }
        return {
            "status": "error",
            "answer": None,
            "stderr": str(result.get("error", "unknown failure"))[-800:],
            "duration_ms": duration,
        }
    finally:
        shutil.rmtree(scratch, ignore_errors=True)


def main() -> int:
    """stdin: one request JSON; stdout: one response JSON; exit 0."""
    try:
        request = json.load(sys.stdin)
    except ValueError as exc:
        print(f"table-sandbox: malformed request JSON: {exc}", file=sys.stderr)
        return 1
    response = execute(request)
    sys.stdout.write(json.dumps(response, sort_keys=True, ensure_ascii=False) + "\n")
    sys.stdout.flush()
    return 0
