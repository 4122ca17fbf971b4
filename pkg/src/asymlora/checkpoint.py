"""Binary checkpoints: full model + optimizer + data-stream state.

Format (all little-endian): magic ``ASYM``, u32 format version, u64 tensor
count, then per tensor: u32 name length, UTF-8 name, u64 rows, u64 cols,
rows*cols float64 row-major. Scalars and RNG state ride along as small
tensors under ``meta/`` (the 64-bit RNG counter is split into two 32-bit
halves so it survives the float64 encoding exactly).

Loading validates the whole file against the model's structure before
assigning anything, so a truncated or mismatched file never leaves a
partially updated model.
"""

from __future__ import annotations

import struct
from array import array

from .adapters import AsymAdapter
from .errors import CheckpointError
from .host import HostModel
from .linalg import Matrix, Rng

MAGIC = b"ASYM"
VERSION = 1


def _expected_tensors(model: HostModel, optimizer) -> list[tuple[str, int, int]]:
    """Names and shapes the checkpoint must contain, in canonical order."""
    out = []
    for idx, layer in enumerate(model.layers):
        out.append((f"layer{idx}/w", layer.w.rows, layer.w.cols))
        out.append((f"layer{idx}/bias", layer.bias.rows, layer.bias.cols))
    for key, p in model.named_params():
        out.append((key, p.rows, p.cols))
    for idx, layer in enumerate(model.layers):
        adapter = layer.adapter
        if isinstance(adapter, AsymAdapter) and adapter.task_gate is not None:
            g = adapter.task_gate
            out.append((f"layer{idx}/task_gate_w", g.weights.rows, g.weights.cols))
            out.append((f"layer{idx}/task_gate_b", g.bias.rows, g.bias.cols))
    for key, p in model.named_params():
        out.append((f"opt/{key}/m", p.rows, p.cols))
        out.append((f"opt/{key}/v", p.rows, p.cols))
    out.append(("meta/step", 1, 1))
    out.append(("meta/opt_step", 1, 1))
    out.append(("meta/rng_train", 1, 2))
    return out


def save_checkpoint(model: HostModel, optimizer, data_rng: Rng, step: int, path: str) -> None:
    tensors: dict[str, tuple[int, int, array]] = {}
    for idx, layer in enumerate(model.layers):
        tensors[f"layer{idx}/w"] = (layer.w.rows, layer.w.cols, layer.w.data)
        tensors[f"layer{idx}/bias"] = (layer.bias.rows, layer.bias.cols, layer.bias.data)
    for key, p in model.named_params():
        tensors[key] = (p.rows, p.cols, p.data)
    for idx, layer in enumerate(model.layers):
        adapter = layer.adapter
        if isinstance(adapter, AsymAdapter) and adapter.task_gate is not None:
            g = adapter.task_gate
            tensors[f"layer{idx}/task_gate_w"] = (g.weights.rows, g.weights.cols, g.weights.data)
            tensors[f"layer{idx}/task_gate_b"] = (g.bias.rows, g.bias.cols, g.bias.data)
    for key, p in model.named_params():
        n = len(p.data)
        m, v = optimizer.moments.get(key, (array("d", bytes(8 * n)), array("d", bytes(8 * n))))
        tensors[f"opt/{key}/m"] = (p.rows, p.cols, m)
        tensors[f"opt/{key}/v"] = (p.rows, p.cols, v)
    tensors["meta/step"] = (1, 1, array("d", [float(step)]))
    tensors["meta/opt_step"] = (1, 1, array("d", [float(optimizer.step_count)]))
    state = data_rng.state
    tensors["meta/rng_train"] = (1, 2, array("d", [float(state >> 32), float(state & 0xFFFFFFFF)]))

    order = _expected_tensors(model, optimizer)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(order)))
        for name, rows, cols in order:
            r, c, data = tensors[name]
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<QQ", r, c))
            fh.write(struct.pack(f"<{len(data)}d", *data))


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise CheckpointError("truncated checkpoint file")
    return raw


def read_tensor_table(path: str) -> dict[str, Matrix]:
    """Parse a checkpoint into named matrices without touching any model."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"bad magic in {path!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        table: dict[str, Matrix] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, name_len).decode("utf-8")
            rows, cols = struct.unpack("<QQ", _read_exact(fh, 16))
            data = array("d")
            data.frombytes(_read_exact(fh, 8 * rows * cols))
            table[name] = Matrix(rows, cols, data)
        if fh.read(1):
            raise CheckpointError("trailing bytes after tensor table")
    return table


def load_checkpoint(model: HostModel, optimizer, path: str) -> tuple[int, Rng]:
    """Restore params, moments, and stream state; returns (step, data rng).

    The model must have been built from the same config: every tensor is
    checked for presence and shape before any assignment happens.
    """
    table = read_tensor_table(path)
    expected = _expected_tensors(model, optimizer)
    names = {name for name, _, _ in expected}
    for name, rows, cols in expected:
        if name not in table:
            raise CheckpointError(f"checkpoint missing tensor {name!r}")
        got = table[name]
        if got.shape != (rows, cols):
            raise CheckpointError(
                f"tensor {name!r}: shape {got.rows}x{got.cols} does not match "
                f"model's {rows}x{cols}"
            )
    extra = set(table) - names
    if extra:
        raise CheckpointError(f"checkpoint has unexpected tensors: {sorted(extra)}")

    for idx, layer in enumerate(model.layers):
        layer.w = table[f"layer{idx}/w"]
        layer.bias = table[f"layer{idx}/bias"]
    for key, p in model.named_params():
        model.set_param(key, table[key])
    for idx, layer in enumerate(model.layers):
        adapter = layer.adapter
        if isinstance(adapter, AsymAdapter) and adapter.task_gate is not None:
            adapter.task_gate.weights = table[f"layer{idx}/task_gate_w"]
            adapter.task_gate.bias = table[f"layer{idx}/task_gate_b"]
    optimizer.moments.clear()
    for key, p in model.named_params():
        optimizer.moments[key] = (table[f"opt/{key}/m"].data, table[f"opt/{key}/v"].data)
    step = int(table["meta/step"].data[0])
    optimizer.step_count = int(table["meta/opt_step"].data[0])
    hi, lo = table["meta/rng_train"].data
    rng = Rng.from_state((int(hi) << 32) | int(lo))
    return step, rng
