"""Named-tensor checkpoints as plain CSV.

One line per tensor: ``name,shape,v0,v1,...`` where ``shape`` joins the
dimensions with ``x`` (empty for a scalar) and values are written with
``repr`` so a round trip is exact. Values are in C order.
"""

import os

import numpy as np


def _format_shape(shape):
    return "x".join(str(int(s)) for s in shape)


def _parse_shape(text):
    return tuple(int(s) for s in text.split("x")) if text else ()


def save_tensors(path, tensors):
    lines = []
    for name in sorted(tensors):
        if "," in name or "\n" in name:
            raise ValueError(f"tensor name {name!r} may not contain commas or newlines")
        arr = np.asarray(tensors[name], dtype=np.float64)
        values = ",".join(repr(float(v)) for v in arr.reshape(-1))
        lines.append(f"{name},{_format_shape(arr.shape)}" + ("," + values if values else ""))
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_tensors(path):
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 2:
                raise ValueError(f"{path}:{lineno}: expected name,shape,values")
            name, shape = parts[0], _parse_shape(parts[1])
            values = np.array([float(v) for v in parts[2:]], dtype=np.float64)
            if values.size != int(np.prod(shape, dtype=np.int64)):
                raise ValueError(f"{path}:{lineno}: {name} has {values.size} values for shape {shape}")
            out[name] = values.reshape(shape)
    return out
