"""One-shot sandboxed execution of table-analysis scripts.

Protocol: one request JSON document on stdin, one response JSON document
on stdout, exit code 0 unless the runner itself fails. Each request runs
in a fresh guarded child process with OS resource limits plus a
supervisor kill.
"""

__version__ = "0.1.0"
