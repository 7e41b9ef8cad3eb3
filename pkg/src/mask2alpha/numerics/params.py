from __future__ import annotations

import numpy as np

from .tensor import Parameter


class ParamSet(dict):
    """Ordered name -> Parameter mapping; names are unique by construction."""

    def add(self, name, value):
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = Parameter(value, name)
        self[name] = p
        return p

    def zero_grad(self):
        for p in self.values():
            p.zero_grad()

    def arrays(self):
        return {k: p.data.copy() for k, p in self.items()}

    def load_arrays(self, arrays):
        for k, p in self.items():
            value = np.asarray(arrays[k], dtype=p.data.dtype)
            if value.shape != p.data.shape:
                raise ValueError(f"{k}: stored shape {value.shape} != {p.data.shape}")
            p.data[...] = value

    def merged(self, *others):
        out = ParamSet(self)
        for o in others:
            for k, p in o.items():
                if k in out:
                    raise KeyError(f"duplicate parameter name {k!r}")
                out[k] = p
        return out

    def fingerprint(self):
        """Bytes that change whenever any parameter value changes."""
        return b"".join(p.data.tobytes() for p in self.values())


def fan_in_normal(rng, shape, fan_in, gain=1.0):
    return rng.normal(0.0, gain / np.sqrt(fan_in), size=shape)
