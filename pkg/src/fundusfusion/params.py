"""Named parameter registry, weight sharing, and checkpoint I/O.

Checkpoint format (stable external interface, see README):

    bytes 0..7    magic b"FFCKPT01"
    bytes 8..15   little-endian uint64, header length in bytes
    header        UTF-8 JSON: {"names": [...], "shapes": {name: [dims]},
                  "groups": {root: [member names]}}
    payload       for every *root* name, in header order, the row-major
                  float64 bytes of that tensor

Alias names resolve to their root's storage. The writer is fully
deterministic (sorted dict keys, fixed field order), so identical parameter
states produce identical files byte for byte.
"""

import io
import json

import numpy as np

from .tensor import Tensor

_MAGIC = b"FFCKPT01"


class CheckpointError(RuntimeError):
    pass


class ParamStore:
    def __init__(self):
        self._tensors = {}   # name -> Tensor (aliases point at same object)
        self._order = []     # root names, registration order
        self._root = {}      # name -> root name
        self._groups = {}    # root name -> [member names] (only when aliased)

    def add(self, name, data, requires_grad=True):
        """Register a new parameter; returns the Tensor."""
        if name in self._tensors:
            raise ValueError(f"parameter {name!r} already registered")
        t = data if isinstance(data, Tensor) else Tensor(data)
        t.requires_grad = requires_grad
        self._tensors[name] = t
        self._order.append(name)
        self._root[name] = name
        return t

    def alias(self, new_name, existing_name):
        """Register new_name as shared storage with an existing parameter."""
        if new_name in self._tensors:
            raise ValueError(f"parameter {new_name!r} already registered")
        if existing_name not in self._tensors:
            raise KeyError(existing_name)
        root = self._root[existing_name]
        self._tensors[new_name] = self._tensors[root]
        self._root[new_name] = root
        self._groups.setdefault(root, [root]).append(new_name)
        return self._tensors[root]

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def names(self):
        return list(self._root)

    def unique(self):
        """(root name, tensor) pairs, one per storage, registration order."""
        return [(n, self._tensors[n]) for n in self._order]

    def census(self):
        uniq = self.unique()
        return {
            "tensors": len(uniq),
            "scalars": int(sum(t.data.size for _, t in uniq)),
            "names": len(self._tensors),
        }

    def zero_grads(self):
        for _, t in self.unique():
            t.grad = None

    # -- checkpoint I/O ------------------------------------------------------

    def to_bytes(self):
        header = {
            "names": list(self._root),
            "shapes": {n: list(self._tensors[n].data.shape) for n in self._root},
            "groups": {r: m for r, m in sorted(self._groups.items())},
        }
        blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
        out = io.BytesIO()
        out.write(_MAGIC)
        out.write(np.uint64(len(blob)).tobytes())
        out.write(blob)
        for name in self._order:
            arr = np.ascontiguousarray(self._tensors[name].data, dtype=np.float64)
            out.write(arr.tobytes())
        return out.getvalue()

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    def load_bytes(self, raw):
        if raw[:8] != _MAGIC:
            raise CheckpointError("not a checkpoint file (bad magic)")
        hlen = int(np.frombuffer(raw[8:16], dtype=np.uint64)[0])
        header = json.loads(raw[16 : 16 + hlen].decode())
        if set(header["names"]) != set(self._tensors):
            missing = set(self._tensors) - set(header["names"])
            extra = set(header["names"]) - set(self._tensors)
            raise CheckpointError(
                f"parameter names disagree (missing={sorted(missing)}, "
                f"unexpected={sorted(extra)})")
        for name, shape in header["shapes"].items():
            have = list(self._tensors[name].data.shape)
            if have != shape:
                raise CheckpointError(
                    f"shape mismatch for {name!r}: checkpoint {shape}, model {have}")
        if header["groups"] != {r: m for r, m in sorted(self._groups.items())}:
            raise CheckpointError("sharing groups disagree with the model")
        offset = 16 + hlen
        file_roots = [n for n in header["names"]
                      if n not in {m for ms in header["groups"].values()
                                   for m in ms[1:]}]
        if file_roots != self._order:
            raise CheckpointError("parameter order disagrees with the model")
        for name in file_roots:
            t = self._tensors[name]
            nbytes = t.data.size * 8
            chunk = np.frombuffer(raw[offset : offset + nbytes], dtype=np.float64)
            if chunk.size != t.data.size:
                raise CheckpointError("checkpoint payload truncated")
            t.data[...] = chunk.reshape(t.data.shape)
            offset += nbytes
        if offset != len(raw):
            raise CheckpointError("checkpoint payload has trailing bytes")

    def load(self, path):
        with open(path, "rb") as f:
            self.load_bytes(f.read())


# -- init helpers --------------------------------------------------------------

def uniform_param(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def fan_in_param(rng, shape, fan_in):
    """Uniform(+-1/sqrt(fan_in)) init for weight matrices and conv kernels."""
    return uniform_param(rng, shape, 1.0 / np.sqrt(fan_in))
