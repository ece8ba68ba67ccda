"""Child-side harness: guards, then the user script, then one result line.

This file is passed to a fresh ``python -I -c`` child by the runner; it
must stay self-contained and stdlib-only. The real stdout carries exactly
one JSON result line; everything the script prints is captured.

Guards (best effort, backed by OS limits in the parent):
- socket creation raises PermissionError
- writes outside the scratch working directory raise PermissionError
- the environment is emptied
"""

import ast
import builtins
import contextlib
import io
import json
import os
import socket
import sys
import traceback


def _install_guards(scratch: str) -> None:
    os.environ.clear()

    def blocked_socket(*_args, **_kwargs):
        raise PermissionError("network access is disabled in the sandbox")

    socket.socket = blocked_socket
    socket.create_connection = blocked_socket
    socket.socketpair = blocked_socket

    real_open = builtins.open
    scratch_real = os.path.realpath(scratch)

    def inside_scratch(path) -> bool:
        target = os.path.realpath(os.path.join(scratch_real, os.fspath(path)))
        return target == scratch_real or target.startswith(scratch_real + os.sep)

    def guarded_open(file, mode="r", *args, **kwargs):
        if isinstance(file, int):
            return real_open(file, mode, *args, **kwargs)
        if any(flag in mode for flag in "wax+") and not inside_scratch(file):
            raise PermissionError(f"write outside the sandbox scratch dir: {file!r}")
        return real_open(file, mode, *args, **kwargs)

    builtins.open = guarded_open
    io.open = guarded_open

    real_os_open = os.open
    write_flags = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC

    def guarded_os_open(path, flags, *args, **kwargs):
        if flags & write_flags and not isinstance(path, int) and not inside_scratch(path):
            raise PermissionError(f"write outside the sandbox scratch dir: {path!r}")
        return real_os_open(path, flags, *args, **kwargs)

    os.open = guarded_os_open


def _run_script(source: str, table: dict) -> str:
    """Execute the script; its final expression, else its last printed
    line, is the answer."""
    namespace = {
        "table": table,
        "columns": table["columns"],
        "rows": table["rows"],
    }
    tree = ast.parse(source)
    final_expr = None
    if tree.body and isinstance(tree.body[-1], ast.Expr):
        final_expr = ast.Expression(tree.body[-1].value)
        tree = ast.Module(body=tree.body[:-1], type_ignores=[])
    captured = io.StringIO()
    with contextlib.redirect_stdout(captured):
        exec(compile(tree, "<script>", "exec"), namespace)
        value = None
        if final_expr is not None:
            value = eval(compile(final_expr, "<script>", "eval"), namespace)
    if value is not None:
        return str(value)
    lines = [line for line in captured.getvalue().splitlines() if line.strip()]
    if lines:
        return lines[-1].strip()
    raise ValueError("script produced no final expression and printed nothing")


def main() -> None:
    request = json.load(sys.stdin)
    _install_guards(os.getcwd())
    try:
        answer = _run_script(request["program"], request["table"])
        result = {"ok": True, "answer": answer}
    except BaseException:
        result = {"ok": False, "error": traceback.format_exc(limit=3)}
    sys.stdout.write(json.dumps(result, ensure_ascii=False) + "\n")
    sys.stdout.flush()


if __name__ == "__main__":
    main()
