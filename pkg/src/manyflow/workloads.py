"""Synthetic benchmark workloads, generated as script text."""

from __future__ import annotations

from .errors import ConfigError


def fanout(n: int) -> str:
    """``n`` independent no-op tasks."""
    if n < 1:
        raise ConfigError("fanout needs n >= 1")
    return (
        "type file;\n"
        'app (file o) noop() { "noop" o }\n'
        "file out[];\n"
        f"foreach i in [0:{n - 1}] {{\n"
        "  out[i] = noop();\n"
        "}\n"
    )


def pipeline(n: int) -> str:
    """A chain of ``n`` tasks, each consuming its predecessor's output."""
    if n < 1:
        raise ConfigError("pipeline needs n >= 1")
    return (
        "type file;\n"
        'app (file o) seed() { "seed" o "pipeline" }\n'
        'app (file o) step(file i) { "mix" o i }\n'
        "file s[];\n"
        "s[0] = seed();\n"
        + (f"foreach k in [1:{n - 1}] {{\n  s[k] = step(s[k - 1]);\n}}\n" if n > 1 else "")
    )


def diamond_mesh(width: int, depth: int) -> str:
    """``depth`` layers of ``width`` tasks; each task mixes two neighbours from the layer above."""
    if width < 1 or depth < 1:
        raise ConfigError("diamond-mesh needs width >= 1 and depth >= 1")
    text = (
        "type file;\n"
        'app (file o) seed(int j) { "seed" o j }\n'
        'app (file o) mix(file a, file b) { "mix" o a b }\n'
        f"int w = {width};\n"
        "file m[][];\n"
        f"foreach j in [0:{width - 1}] {{\n  m[0][j] = seed(j);\n}}\n"
    )
    if depth > 1:
        text += (
            f"foreach d in [1:{depth - 1}] {{\n"
            f"  foreach j in [0:{width - 1}] {{\n"
            "    m[d][j] = mix(m[d - 1][j], m[d - 1][(j + 1) % w]);\n"
            "  }\n"
            "}\n"
        )
    return text


def parse_workload(spec: str) -> tuple:
    """``fanout(N)``, ``pipeline(N)`` or ``diamond-mesh(W,D)`` → (name, script text)."""
    s = spec.replace(" ", "")
    name, sep, rest = s.partition("(")
    if not sep or not rest.endswith(")"):
        raise ConfigError(f"workload {spec!r} should look like fanout(N)")
    try:
        args = [int(float(a)) for a in rest[:-1].split(",") if a]
    except ValueError:
        raise ConfigError(f"bad workload arguments in {spec!r}") from None
    makers = {"fanout": (fanout, 1), "pipeline": (pipeline, 1), "diamond-mesh": (diamond_mesh, 2)}
    if name not in makers:
        raise ConfigError(f"unknown workload {name!r}; expected fanout, pipeline or diamond-mesh")
    fn, arity = makers[name]
    if len(args) != arity:
        raise ConfigError(f"{name} takes {arity} argument(s)")
    return name, fn(*args)
