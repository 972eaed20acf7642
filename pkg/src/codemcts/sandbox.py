"""Subprocess sandbox for candidate programs.

Each run gets a fresh temp directory, its own process group, an address
space cap, and file-size caps on its redirected stdout/stderr so a runaway
printer hits RLIMIT_FSIZE instead of filling the disk. A global semaphore
bounds how many candidate processes run at once.

stdio mode pipes the payload to the program's stdin and captures stdout.
call mode copies a driver script next to the solution and invokes
`driver.py solution.py <class> <method> <args_json>`; the driver prints a
single JSON protocol line (see the solution-driver package). The driver
path comes from the call, the CODEMCTS_DRIVER environment variable, or an
installed `solution_driver` module, in that order.
"""

from __future__ import annotations

import importlib.util
import os
import resource
import shutil
import signal
import subprocess
import sys
import tempfile
import threading
import time
from dataclasses import dataclass

from .problems import CallSpec, ResourceLimits

EXITED_OK = "exited_ok"
NONZERO_EXIT = "nonzero_exit"
TIMEOUT = "timeout"
MEMORY_KILL = "memory_kill"
SPAWN_ERROR = "spawn_error"

_FSIZE_SLACK = 64 * 1024  # write cap + slack so truncation is detectable

_default_parallelism = os.cpu_count() or 1
_run_gate = threading.BoundedSemaphore(_default_parallelism)


class SandboxUnavailable(RuntimeError):
    """The sandbox cannot execute anything at all (interpreter or driver
    missing). Distinct from a candidate program misbehaving."""


def set_max_concurrent_runs(n: int | None) -> None:
    """Resize the global run gate; None restores the CPU-count default.
    Affects runs started after the call."""
    global _run_gate
    if n is None:
        n = os.cpu_count() or 4
    if n < 1:
        raise ValueError("concurrency must be >= 1")
    _run_gate = threading.BoundedSemaphore(n)


@dataclass
class RunOutcome:
    status: str
    stdout: str
    stderr: str
    wall_ms: float
    exit_code: int | None
    stdout_truncated: bool = False
    stderr_truncated: bool = False

    @property
    def ok(self) -> bool:
        return self.status == EXITED_OK


def find_driver(explicit: str | None = None) -> str | None:
    """Locate the call-mode driver script, or None if unavailable."""
    if explicit:
        return explicit if os.path.isfile(explicit) else None
    env = os.environ.get("CODEMCTS_DRIVER")
    if env:
        return env if os.path.isfile(env) else None
    spec = importlib.util.find_spec("solution_driver")
    if spec is not None and spec.origin and os.path.isfile(spec.origin):
        return spec.origin
    return None


def _make_preexec(memory_bytes: int, fsize_bytes: int):
    def preexec():
        resource.setrlimit(resource.RLIMIT_AS, (memory_bytes, memory_bytes))
        resource.setrlimit(resource.RLIMIT_FSIZE, (fsize_bytes, fsize_bytes))
        resource.setrlimit(resource.RLIMIT_CORE, (0, 0))

    return preexec


def _read_capped(path: str, cap: int) -> tuple[str, bool]:
    try:
        with open(path, "rb") as fh:
            data = fh.read(cap + 1)
    except OSError:
        return "", False
    truncated = len(data) > cap
    return data[:cap].decode("utf-8", errors="replace"), truncated


def run(
    program: str,
    stdin_payload: str = "",
    limits: ResourceLimits | None = None,
    io_mode: str = "stdio",
    call_spec: CallSpec | None = None,
    driver_path: str | None = None,
) -> RunOutcome:
    """Execute *program* once with the configured limits.

    Never raises for program misbehavior; that is encoded in the status.
    Missing interpreter or (for call mode) missing driver comes back as
    spawn_error.
    """
    limits = limits or ResourceLimits()
    memory_bytes = limits.memory_mb * 1024 * 1024
    cap = limits.output_cap_bytes

    driver_src = None
    if io_mode == "call":
        if call_spec is None:
            return RunOutcome(SPAWN_ERROR, "", "call mode requires a call_spec", 0.0, None)
        driver_src = find_driver(driver_path)
        if driver_src is None:
            return RunOutcome(
                SPAWN_ERROR,
                "",
                "call-mode driver not found: install the solution-driver package "
                "or set CODEMCTS_DRIVER to the driver script",
                0.0,
                None,
            )

    with _run_gate:
        workdir = tempfile.mkdtemp(prefix="codemcts-run-")
        try:
            solution = os.path.join(workdir, "solution.py")
            with open(solution, "w", encoding="utf-8") as fh:
                fh.write(program)

            if io_mode == "call":
                driver = os.path.join(workdir, "driver.py")
                shutil.copyfile(driver_src, driver)
                cmd = [sys.executable, driver, solution, call_spec.class_name,
                       call_spec.method_name, stdin_payload]
                stdin_data = b""
            else:
                cmd = [sys.executable, solution]
                stdin_data = stdin_payload.encode("utf-8")

            out_path = os.path.join(workdir, "stdout.bin")
            err_path = os.path.join(workdir, "stderr.bin")
            start = time.monotonic()
            try:
                with open(out_path, "wb") as out_fh, open(err_path, "wb") as err_fh:
                    proc = subprocess.Popen(
                        cmd,
                        stdin=subprocess.PIPE,
                        stdout=out_fh,
                        stderr=err_fh,
                        cwd=workdir,
                        preexec_fn=_make_preexec(memory_bytes, cap + _FSIZE_SLACK),
                        start_new_session=True,
                    )
            except OSError as exc:
                return RunOutcome(SPAWN_ERROR, "", str(exc), (time.monotonic() - start) * 1000, None)

            timed_out = False
            try:
                proc.communicate(stdin_data, timeout=limits.wall_seconds)
            except subprocess.TimeoutExpired:
                timed_out = True
                _kill_group(proc)
                proc.wait()
            except BrokenPipeError:
                # Child exited without draining stdin; harvest it normally.
                proc.wait()
            wall_ms = (time.monotonic() - start) * 1000

            stdout, out_trunc = _read_capped(out_path, cap)
            stderr, err_trunc = _read_capped(err_path, cap)
            return RunOutcome(
                status=_classify(proc.returncode, timed_out, stderr),
                stdout=stdout,
                stderr=stderr,
                wall_ms=wall_ms,
                exit_code=proc.returncode if not timed_out else None,
                stdout_truncated=out_trunc,
                stderr_truncated=err_trunc,
            )
        finally:
            shutil.rmtree(workdir, ignore_errors=True)


def _classify(returncode: int | None, timed_out: bool, stderr: str) -> str:
    if timed_out:
        return TIMEOUT
    if returncode == 0:
        return EXITED_OK
    # Hard OOM shows up as SIGKILL; an in-interpreter MemoryError as a traceback.
    if returncode is not None and -returncode == signal.SIGKILL:
        return MEMORY_KILL
    if "MemoryError" in stderr:
        return MEMORY_KILL
    return NONZERO_EXIT


def _kill_group(proc: subprocess.Popen) -> None:
    try:
        os.killpg(proc.pid, signal.SIGKILL)
    except (ProcessLookupError, PermissionError):
        pass
