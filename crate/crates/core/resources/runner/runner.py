"""Runs one code cell inside the session working directory.

Usage: runner.py CELL_FILE STATUS_FILE WORKDIR

Writes outside WORKDIR are refused through an audit hook. A JSON status
document (exception text, refused paths, missing dependencies) is written to
STATUS_FILE when the cell ends without the process being killed.
"""
import importlib.util
import json
import os
import sys
import traceback

cell_path, status_path, workdir = sys.argv[1], sys.argv[2], os.path.realpath(sys.argv[3])
status = {"exception": None, "blocked": [], "missing_dependencies": [], "exit_code": 0}
ALLOWED = ("/dev/null", "/dev/stdout", "/dev/stderr", "/dev/tty", "/dev/urandom", "/dev/shm")
WRITE_FLAGS = os.O_WRONLY | os.O_RDWR | os.O_CREAT | os.O_APPEND | os.O_TRUNC


def _inside(path):
    if isinstance(path, int):
        return True
    try:
        p = os.fsdecode(os.fspath(path))
    except TypeError:
        return True
    real = os.path.realpath(p)
    if real == workdir or real.startswith(workdir + os.sep):
        return True
    return any(real == a or real.startswith(a + os.sep) for a in ALLOWED)


def _refuse(path):
    shown = os.fsdecode(os.fspath(path)) if not isinstance(path, int) else str(path)
    if shown not in status["blocked"]:
        status["blocked"].append(shown)
    raise PermissionError("path escape refused: %s is outside the working directory" % shown)


def _hook(event, args):
    if event == "open":
        path, mode, flags = args[0], args[1], args[2]
        writing = bool(mode) and any(c in mode for c in "wax+")
        if not mode and isinstance(flags, int):
            writing = bool(flags & WRITE_FLAGS)
        if writing and not _inside(path):
            _refuse(path)
    elif event in ("os.remove", "os.rmdir", "os.mkdir", "os.chmod", "os.chown", "os.truncate", "os.utime", "shutil.rmtree"):
        if args and not _inside(args[0]):
            _refuse(args[0])
    elif event in ("os.rename", "os.link", "shutil.copyfile", "shutil.copytree", "shutil.move"):
        for p in args[:2]:
            if not _inside(p):
                _refuse(p)
    elif event == "os.symlink":
        src, dst = args[0], args[1]
        if not _inside(dst):
            _refuse(dst)
        target = src if os.path.isabs(os.fsdecode(src)) else os.path.join(os.path.dirname(os.fsdecode(dst)), os.fsdecode(src))
        if not _inside(target):
            _refuse(src)


# Opened before the audit hook is installed so the final write is allowed.
_status_file = open(status_path, "w")


def _write_status():
    try:
        _status_file.write(json.dumps(status))
        _status_file.flush()
    except Exception:
        pass


def main():
    deps = json.loads(os.environ.get("CLIMB_CELL_DEPENDENCIES", "[]"))
    missing = [d for d in deps if importlib.util.find_spec(d.replace("-", "_")) is None]
    if missing:
        status["missing_dependencies"] = missing
        status["exception"] = "ModuleNotFoundError: dependencies not available: %s" % ", ".join(missing)
        status["exit_code"] = 1
        return 1
    with open(cell_path) as f:
        source = f.read()
    sys.addaudithook(_hook)
    globals_ = {"__name__": "__main__", "__builtins__": __builtins__}
    try:
        exec(compile(source, "<cell>", "exec"), globals_)
    except SystemExit as e:
        code = e.code
        if code is None or code == 0:
            return 0
        if isinstance(code, int):
            status["exit_code"] = code
            status["exception"] = "SystemExit: %d" % code
            return code
        status["exit_code"] = 1
        status["exception"] = "SystemExit: %s" % code
        return 1
    except BaseException:
        status["exception"] = traceback.format_exc()
        status["exit_code"] = 1
        return 1
    finally:
        sys.stdout.flush()
        sys.stderr.flush()
    return 0


if __name__ == "__main__":
    rc = main()
    _write_status()
    try:
        sys.stdout.flush()
        sys.stderr.flush()
    except Exception:
        pass
    os._exit(rc)
