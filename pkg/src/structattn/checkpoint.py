"""Named-parameter checkpoints over the binary tensor stream format.

Layout, all ASCII headers:

    structattn-checkpoint v1\n
    tensors: <N>\n
    name: <parameter name>\n
    shape: <d0> <d1> ...\n
    <count * 8 bytes little-endian float64>
    ... repeated N times ...

Loading preserves file order, so a round trip through save/load keeps both
bytes and parameter ordering stable. Mismatched architectures are reported
by name so a wrong-config load fails loudly instead of training from
nonsense.
"""

from __future__ import annotations

import numpy as np

from . import tensor as tc
from .errors import CheckpointError, SerializationError
from .tensor import Tensor

MAGIC = "structattn-checkpoint v1"


def _valid_name(name: str) -> bool:
    if not name or len(name) > 512:
        return False
    try:
        name.encode("ascii")
    except UnicodeEncodeError:
        return False
    return "\n" not in name and "\r" not in name


def save_checkpoint(params: dict[str, Tensor], path) -> None:
    """Write every named tensor, in mapping order."""
    for name in params:
        if not _valid_name(name):
            raise CheckpointError(f"parameter name {name!r} cannot be serialized")
    with open(path, "wb") as f:
        f.write((MAGIC + "\n").encode("ascii"))
        f.write(f"tensors: {len(params)}\n".encode("ascii"))
        for name, t in params.items():
            if not isinstance(t, Tensor):
                raise CheckpointError(f"parameter {name!r} is not a Tensor")
            f.write(f"name: {name}\n".encode("ascii"))
            tc.write_tensor(f, t)


def _read_line(f, what: str) -> str:
    buf = bytearray()
    while True:
        b = f.read(1)
        if not b:
            raise CheckpointError(f"checkpoint ended while reading {what}")
        if b == b"\n":
            break
        buf.extend(b)
        if len(buf) > 4096:
            raise CheckpointError(f"unterminated {what} line")
    try:
        return buf.decode("ascii")
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"{what} line is not ASCII") from exc


def load_checkpoint(path) -> dict[str, Tensor]:
    """Read a checkpoint back into an ordered name -> Tensor mapping."""
    params: dict[str, Tensor] = {}
    with open(path, "rb") as f:
        magic = _read_line(f, "magic")
        if magic != MAGIC:
            if magic.startswith("structattn-checkpoint"):
                raise CheckpointError(
                    f"unsupported checkpoint version {magic[len('structattn-checkpoint '):40]!r}; "
                    f"this build reads {MAGIC!r}"
                )
            raise CheckpointError(f"not a checkpoint: first line {magic[:40]!r}")
        countline = _read_line(f, "tensor count")
        if not countline.startswith("tensors: "):
            raise CheckpointError(f"expected 'tensors: N', got {countline[:40]!r}")
        try:
            count = int(countline[len("tensors: "):])
        except ValueError as exc:
            raise CheckpointError(f"bad tensor count in {countline!r}") from exc
        if count < 0:
            raise CheckpointError(f"negative tensor count {count}")
        for _ in range(count):
            nameline = _read_line(f, "tensor name")
            if not nameline.startswith("name: "):
                raise CheckpointError(f"expected 'name: ...', got {nameline[:40]!r}")
            name = nameline[len("name: "):]
            if not _valid_name(name):
                raise CheckpointError(f"illegal parameter name {name!r}")
            if name in params:
                raise CheckpointError(f"duplicate parameter {name!r}")
            try:
                params[name] = tc.read_tensor(f)
            except SerializationError as exc:
                raise CheckpointError(
                    f"checkpoint truncated or corrupt at tensor {name!r}: {exc}"
                ) from exc
        if f.read(1):
            raise CheckpointError("trailing bytes after the final tensor")
    return params


def check_compatible(loaded: dict[str, Tensor], reference: dict[str, Tensor]) -> None:
    """Same names, same shapes, or a CheckpointError naming every offender."""
    missing = sorted(set(reference) - set(loaded))
    extra = sorted(set(loaded) - set(reference))
    mismatched = sorted(
        name
        for name in set(loaded) & set(reference)
        if loaded[name].dims != reference[name].dims
    )
    if not (missing or extra or mismatched):
        return
    parts = []
    if missing:
        parts.append("missing: " + ", ".join(missing))
    if extra:
        parts.append("unexpected: " + ", ".join(extra))
    if mismatched:
        parts.append(
            "shape mismatch: "
            + ", ".join(
                f"{n} {loaded[n].dims}!={reference[n].dims}" for n in mismatched
            )
        )
    raise CheckpointError("checkpoint does not fit this architecture; " + "; ".join(parts))


def params_equal(a: dict[str, Tensor], b: dict[str, Tensor]) -> bool:
    """Bitwise equality including name order."""
    if list(a) != list(b):
        return False
    return all(
        a[k].dims == b[k].dims and np.array_equal(a[k].data, b[k].data) for k in a
    )
