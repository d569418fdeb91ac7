"""Save and load fitted factor models as ``.npz`` containers.

Arrays are stored raw, so a round trip is bit-exact. Scalars and the fit
report go into a JSON string; Python's JSON float encoding is exact too.
"""

from __future__ import annotations

import json

import numpy as np

from .baseline import MFModel
from .mog import MoGMFModel

FORMAT_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def save_model(model, path) -> None:
    """Write an ``MoGMFModel`` or ``MFModel`` to ``path`` (npz)."""
    if isinstance(model, MoGMFModel):
        kind = "mog-mf"
        arrays = {"pi": model.pi, "sigma2": model.sigma2}
        extra = {"offset": model.offset}
    elif isinstance(model, MFModel):
        kind, arrays, extra = "mf", {}, {}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    m, d = model.U.shape
    header = {
        "format": FORMAT_VERSION,
        "kind": kind,
        "m": m,
        "n": model.V.shape[0],
        "d": d,
        "K": int(arrays["pi"].size) if "pi" in arrays else 0,
        "info": _jsonable(model.info),
        **extra,
    }
    with open(path, "wb") as fh:
        np.savez(fh, U=np.ascontiguousarray(model.U), V=np.ascontiguousarray(model.V),
                 header=np.array(json.dumps(header)), **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header.get('format')!r}")
        U, V = z["U"], z["V"]
        if U.shape != (header["m"], header["d"]) or V.shape != (header["n"], header["d"]):
            raise ValueError("factor shapes disagree with the header")
        if header["kind"] == "mog-mf":
            return MoGMFModel(U, V, z["pi"], z["sigma2"], offset=header["offset"], info=header["info"])
        return MFModel(U, V, header["info"])
