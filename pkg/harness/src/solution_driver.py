"""Call-mode driver: load a solution file, call one method on one of its
classes with JSON-decoded positional arguments, and print a single JSON
result line.

Usage: python solution_driver.py <solution.py> <class> <method> <args_json>

The line is {"ok": true, "value": ...} on success or {"ok": false,
"error": ...} on any failure, and the exit code is 0 either way: a broken
solution is a result to report, not a driver crash. Everything the
solution writes to stdout, at import time or during the call, is diverted
to stderr so the protocol line stands alone and stays parseable.
"""

import importlib.util
import json
import os
import sys


def call_solution(solution_path, class_name, method_name, args_json):
    """Import the solution and run the method; returns its value."""
    spec = importlib.util.spec_from_file_location("solution", solution_path)
    if spec is None or spec.loader is None:
        raise ImportError(f"cannot load {solution_path}")
    module = importlib.util.module_from_spec(spec)
    sys.modules["solution"] = module
    spec.loader.exec_module(module)

    args = json.loads(args_json)
    if not isinstance(args, list):
        raise TypeError("arguments must be a JSON array of positionals")

    instance = getattr(module, class_name)()
    return getattr(instance, method_name)(*args)


def main(argv):
    # Point fd 1 at stderr before touching the solution, so that prints,
    # even from C extensions or import time, cannot land next to the
    # protocol line. The real stdout survives only as protocol_fd.
    protocol_fd = os.dup(1)
    os.dup2(2, 1)
    try:
        if len(argv) != 4:
            raise ValueError(
                "usage: solution_driver.py <solution> <class> <method> <args_json>"
            )
        value = call_solution(*argv)
        # allow_nan=False: NaN/Infinity are not JSON; report them as
        # errors rather than emit a line the judge cannot parse. Tuples
        # and other sequences normalize to arrays here.
        line = json.dumps({"ok": True, "value": value},
                          sort_keys=True, separators=(",", ":"),
                          allow_nan=False)
    except (Exception, SystemExit) as exc:
        error = f"{type(exc).__name__}: {exc}"
        line = json.dumps({"ok": False, "error": error},
                          sort_keys=True, separators=(",", ":"))
    try:
        sys.stdout.flush()
        sys.stderr.flush()
    except Exception:
        pass  # the solution may have closed or replaced the streams
    os.write(protocol_fd, line.encode("utf-8") + b"\n")
    os.close(protocol_fd)
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
