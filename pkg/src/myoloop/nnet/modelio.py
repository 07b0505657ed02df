""".emgm model files: JSON header line + float32 weight payload.

The payload holds every array returned by the network's state_arrays()
walk (weights, biases, batch-norm affine and running statistics) in spec
order, so save/load round-trips bit-exactly. Kalman smoother parameters,
when present, ride in the header as exact JSON floats.
"""

from __future__ import annotations

import numpy as np

from ..fileformat import FormatError, check_magic_version, read_f32, read_header, write_file
from .models import Decoder, instantiate

EMGM_MAGIC = "EMGM1"
EMGM_VERSION = 1


def save_model(decoder: Decoder, path):
    arrays = decoder.net.state_arrays()
    header = {
        "magic": EMGM_MAGIC,
        "version": EMGM_VERSION,
        "arch": decoder.arch,
        "spec": decoder.spec,
        "norm_mean": decoder.norm_mean.astype(np.float32).tolist(),
        "norm_std": decoder.norm_std.astype(np.float32).tolist(),
        "seed": decoder.seed,
        "history": decoder.history,
        "n_weights": int(sum(a.size for a in arrays)),
        "kalman": _kalman_to_doc(decoder.kalman),
    }
    write_file(path, header, [a.reshape(-1) for a in arrays])


def load_model(path) -> Decoder:
    with open(path, "rb") as f:
        header = read_header(f)
        check_magic_version(header, EMGM_MAGIC, EMGM_VERSION)
        spec = header["spec"]
        net = instantiate(spec, header.get("seed", 0))
        arrays = net.state_arrays()
        declared = header.get("n_weights")
        actual = int(sum(a.size for a in arrays))
        if declared != actual:
            raise FormatError(f"header declares {declared} weights, spec needs {actual}")
        flat = read_f32(f, actual)
        if f.read(1):
            raise FormatError("trailing bytes after weight payload")
    offset = 0
    for a in arrays:
        a[...] = flat[offset : offset + a.size].reshape(a.shape)
        offset += a.size
    return Decoder(
        spec=spec,
        net=net,
        norm_mean=np.array(header["norm_mean"], dtype=np.float32),
        norm_std=np.array(header["norm_std"], dtype=np.float32),
        seed=header.get("seed", 0),
        arch=header.get("arch", "custom"),
        history=header.get("history", {}),
        kalman=_kalman_from_doc(header.get("kalman")),
    )


def _kalman_to_doc(params):
    if params is None:
        return None
    return {
        "A": params.A.tolist(),
        "W": params.W.tolist(),
        "H": params.H.tolist(),
        "Q": params.Q.tolist(),
    }


def _kalman_from_doc(doc):
    if doc is None:
        return None
    from ..kalman import KalmanParams

    return KalmanParams(
        A=np.array(doc["A"]),
        W=np.array(doc["W"]),
        H=np.array(doc["H"]),
        Q=np.array(doc["Q"]),
    )
