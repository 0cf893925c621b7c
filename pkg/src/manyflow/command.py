"""Turn a task's command template into argv plus its task-directory file layout."""

from __future__ import annotations

from typing import NamedTuple

from .dataflow import FileArg, TaskSpec


class Layout(NamedTuple):
    argv: list
    inputs: list     # (future-id, relative path)
    outputs: list    # (future-id, relative path)


def staged_name(arg: FileArg, array: bool) -> str:
    return f"{arg.param}.{arg.position}" if array else arg.param


def layout(spec: TaskSpec) -> Layout:
    """File words become paths named after their parameter (``res.3`` for arrays).

    Inputs that never appear in the command are still staged, as ``_in.<i>``.
    """
    array_params = spec.arrays
    argv, inputs, outputs = [], [], []
    seen_in = set()
    for w in spec.command:
        if isinstance(w, FileArg):
            path = staged_name(w, w.param in array_params)
            argv.append(path)
            if w.direction == "out":
                outputs.append((w.future, path))
            elif (w.future, path) not in seen_in:
                seen_in.add((w.future, path))
                inputs.append((w.future, path))
        else:
            argv.append(w)
    if len(outputs) != len(spec.outputs):
        named = {f for f, _ in outputs}
        for fid, param in zip(spec.outputs, spec.out_params):
            if fid not in named:
                outputs.append((fid, param))
    named_in = {f for f, _ in inputs}
    for i, fid in enumerate(spec.inputs):
        if fid not in named_in:
            inputs.append((fid, f"_in.{i}"))
    return Layout(argv, inputs, outputs)


def artifact_name(run_id, spec: TaskSpec, cell) -> str:
    """Mapped path, or ``<run-id>/<task-id>/<param>`` for unmapped outputs."""
    if cell.mapping is not None:
        return cell.mapping
    param = next((p for f, p in zip(spec.outputs, spec.out_params) if f == cell.id), cell.id)
    return f"{run_id or 'run'}/{spec.id}/{param}"
