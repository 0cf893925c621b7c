"""Deterministic stand-in applications for the shipped workflows.

Each stub is a function ``(args, io)`` where ``io`` reads and writes files by
path.  The same code runs as a real subprocess (``python -m manyflow.stubs
NAME ARGS...``), inside a long-lived worker (``--serve``), or in the simulator
against an in-memory file map, so every mode produces identical bytes.

Fields are whitespace-separated floats written one per line with ``%.9f``.
"""

from __future__ import annotations

import hashlib
import json
import os
import sys

FIELD_SIZE = 16


class DiskIO:
    def __init__(self, cwd=None):
        self.cwd = cwd

    def _p(self, path):
        return path if self.cwd is None else os.path.join(self.cwd, path)

    def read(self, path) -> bytes:
        with open(self._p(path), "rb") as f:
            return f.read()

    def write(self, path, data: bytes):
        with open(self._p(path), "wb") as f:
            f.write(data)

    def exists(self, path):
        return os.path.exists(self._p(path))


class MemoryIO:
    def __init__(self, files=None):
        self.files = dict(files or {})

    def read(self, path) -> bytes:
        try:
            return self.files[path]
        except KeyError:
            raise FileNotFoundError(path) from None

    def write(self, path, data: bytes):
        self.files[path] = bytes(data)

    def exists(self, path):
        return path in self.files


class StubUsage(Exception):
    pass


def _floats(data: bytes):
    return [float(x) for x in data.split()]


def _dump(values):
    return "".join(f"{v:.9f}\n" for v in values).encode()


def _need(args, n, usage):
    if len(args) < n:
        raise StubUsage(usage)


def prep(args, io):
    """prep IN OUT: resample the raw initial field to FIELD_SIZE values in [0, 1]."""
    _need(args, 2, "prep IN OUT")
    raw = _floats(io.read(args[0])) or [0.0]
    lo, hi = min(raw), max(raw)
    span = (hi - lo) or 1.0
    out = [(raw[(i * len(raw)) // FIELD_SIZE] - lo) / span for i in range(FIELD_SIZE)]
    io.write(args[1], _dump(out))


def ctm(args, io):
    """ctm STATE OUT: one explicit diffusion step on a periodic 1-D field."""
    _need(args, 2, "ctm STATE OUT")
    u = _floats(io.read(args[0]))
    n = len(u)
    out = [u[i] + 0.25 * (u[i - 1] - 2.0 * u[i] + u[(i + 1) % n]) for i in range(n)]
    io.write(args[1], _dump(out))


def mkpore(args, io):
    """mkpore CONT K N OUT: cut slice K of N from the continuum field."""
    _need(args, 4, "mkpore CONT K N OUT")
    u = _floats(io.read(args[0]))
    k, n = int(args[1]), int(args[2])
    if n <= 0 or not 0 <= k < n:
        raise StubUsage(f"slice {k} of {n} is out of range")
    lo, hi = (k * len(u)) // n, ((k + 1) * len(u)) // n
    io.write(args[3], f"{k} {n}\n".encode() + _dump(u[lo:hi]))


def pore(args, io):
    """pore SITE OUT: logistic reaction step on a pore-scale slice."""
    _need(args, 2, "pore SITE OUT")
    head, _, body = io.read(args[0]).partition(b"\n")
    v = _floats(body)
    out = [x + 0.1 * x * (1.0 - x) for x in v]
    io.write(args[1], head + b"\n" + _dump(out))


def merge(args, io):
    """merge CONT OUT RES...: reassemble pore slices and average with the continuum."""
    _need(args, 2, "merge CONT OUT RES...")
    u = _floats(io.read(args[0]))
    pieces = {}
    for path in args[2:]:
        head, _, body = io.read(path).partition(b"\n")
        k, n = (int(x) for x in head.split())
        pieces[k] = (n, _floats(body))
    if not pieces:
        io.write(args[1], _dump(u))
        return
    n = next(iter(pieces.values()))[0]
    if sorted(pieces) != list(range(n)):
        raise StubUsage(f"merge expected slices 0..{n - 1}, got {sorted(pieces)}")
    pore_field = [x for k in range(n) for x in pieces[k][1]]
    io.write(args[1], _dump([0.5 * (a + b) for a, b in zip(u, pore_field)]))


def noop(args, io):
    """noop OUT...: create each named output empty."""
    for path in args:
        io.write(path, b"")


def seed(args, io):
    """seed OUT [TEXT...]: write the remaining words as one line."""
    _need(args, 1, "seed OUT [TEXT...]")
    io.write(args[0], (" ".join(args[1:]) + "\n").encode())


def mix(args, io):
    """mix OUT IN...: digest of the inputs in order, as hex text."""
    _need(args, 1, "mix OUT IN...")
    h = hashlib.blake2b(digest_size=16)
    for path in args[1:]:
        h.update(io.read(path))
    io.write(args[0], (h.hexdigest() + "\n").encode())


def fail(args, io):
    """fail [OUT...]: exit non-zero without writing anything."""
    raise StubUsage("fail stub always fails")


def skip(args, io):
    """skip [OUT...]: exit zero without writing the declared outputs."""


STUBS = {f.__name__: f for f in (prep, ctm, mkpore, pore, merge, noop, seed, mix, fail, skip)}


# -- common tools emulated for the simulator --------------------------------

def _cp(args, io):
    _need(args, 2, "cp SRC DST")
    io.write(args[-1], io.read(args[0]))


def _cat(args, io):
    # only meaningful as `cat IN... OUT` style redirection-free templates
    _need(args, 2, "cat IN... OUT")
    io.write(args[-1], b"".join(io.read(p) for p in args[:-1]))


def _touch(args, io):
    for p in args:
        if not io.exists(p):
            io.write(p, b"")


def _true(args, io):
    pass


EMULATED = {"cp": _cp, "touch": _touch, "true": _true, "cat": _cat}


def run_virtual(argv, files, outputs):
    """Run ``argv`` against an in-memory file map; returns ``(rc, files)``.

    Commands that are neither stubs nor emulated tools write a synthetic
    output derived from the command words and input bytes.
    """
    io = MemoryIO(files)
    name, args = argv[0], list(argv[1:])
    fn = STUBS.get(name) or EMULATED.get(name)
    if fn is None:
        h = hashlib.blake2b(" ".join(argv).encode(), digest_size=16)
        for path in sorted(files):
            h.update(path.encode())
            h.update(files[path])
        for out in outputs:
            io.write(out, (h.hexdigest() + " " + out + "\n").encode())
        return 0, io.files
    try:
        fn(args, io)
    except (StubUsage, FileNotFoundError, ValueError, IndexError):
        return 1, io.files
    return 0, io.files


def run_stub(name, args, cwd=None):
    """Execute a stub against the real filesystem; returns an exit status."""
    fn = STUBS.get(name)
    if fn is None:
        print(f"unknown stub {name!r}", file=sys.stderr)
        return 127
    try:
        fn(list(args), DiskIO(cwd))
    except StubUsage as e:
        print(f"{name}: {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError, IndexError) as e:
        print(f"{name}: {e}", file=sys.stderr)
        return 1
    return 0


def serve(inp=sys.stdin, out=sys.stdout):
    """Answer one JSON request per line: {"cwd": DIR, "argv": [NAME, ARGS...]}."""
    for line in inp:
        if not line.strip():
            continue
        req = json.loads(line)
        argv = req["argv"]
        rc = run_stub(argv[0], argv[1:], req.get("cwd"))
        out.write(f'{{"rc":{rc}}}\n')
        out.flush()


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    if argv[:1] == ["--serve"]:
        serve()
        return 0
    if not argv or argv[0] in ("-h", "--help"):
        print("usage: python -m manyflow.stubs NAME ARGS... | --serve")
        for name, fn in sorted(STUBS.items()):
            print(f"  {fn.__doc__}")
        return 0 if argv else 2
    return run_stub(argv[0], argv[1:])


if __name__ == "__main__":
    sys.exit(main())
