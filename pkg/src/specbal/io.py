"""Matrix and result files, CSV tables and run manifests."""

from __future__ import annotations

import csv
import datetime as _dt
import hashlib
import json
import math

import numpy as np

from . import __version__
from .errors import InputError
from .spectral_core import MatrixSet, check_pd


def _finite_matrix(obj, index):
    try:
        M = np.array(obj, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"matrix {index}: entries are not numbers") from None
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InputError(f"matrix {index}: not square (shape {M.shape})")
    if not np.all(np.isfinite(M)):
        raise InputError(f"matrix {index}: non-finite entries")
    return M


def parse_matrices(data):
    """Validate the ``{"dim": d, "matrices": [...]}`` layout and return a :class:`MatrixSet`.

    Each failure names the matrix index and the check that failed (shape,
    finiteness, symmetry, positive definiteness).
    """
    if not isinstance(data, dict) or "matrices" not in data:
        raise InputError('expected an object with keys "dim" and "matrices"')
    mats = data["matrices"]
    if not isinstance(mats, list) or not mats:
        raise InputError('"matrices" must be a non-empty list')
    d = data.get("dim")
    if not isinstance(d, int) or isinstance(d, bool) or d < 1:
        raise InputError(f'"dim" must be a positive integer, got {d!r}')
    members = []
    for i, obj in enumerate(mats):
        M = _finite_matrix(obj, i)
        if M.shape != (d, d):
            raise InputError(f"matrix {i}: shape {M.shape} does not match dim {d}")
        members.append(check_pd(M, name=f"matrix {i}"))
    return MatrixSet.from_arrays(members)


def load_matrices(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON ({exc})") from None
    return parse_matrices(data)


def matrices_to_json(mset):
    mset = list(mset)
    return {"dim": int(mset[0].shape[0]), "matrices": [np.asarray(M).tolist() for M in mset]}


def load_A(path):
    """Read ``A`` from a balance result (key ``"A"``) or a bare nested list."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: malformed JSON ({exc})") from None
    if isinstance(data, dict):
        if "A" not in data:
            raise InputError(f'{path}: no "A" entry')
        data = data["A"]
    try:
        A = np.array(data, dtype=float)
    except (TypeError, ValueError):
        raise InputError(f"{path}: A is not a numeric matrix") from None
    if A.ndim != 2 or A.shape[0] != A.shape[1] or not np.all(np.isfinite(A)):
        raise InputError(f"{path}: A must be a finite square matrix, got shape {A.shape}")
    return A


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def manifest(command, config, seed=None, inputs=(), started=None):
    """Provenance block embedded in every JSON output."""
    return {
        "command": command,
        "config": config,
        "seed": seed,
        "version": __version__,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "started": started or _now(),
        "finished": _now(),
    }


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def write_json(path, payload):
    payload = _clean(dict(payload))
    payload.setdefault("version", __version__)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


WALK_COLUMNS = ("strategy", "T", "p_hat", "std_err", "n_walks", "T_max", "seed")


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns))
        w.writeheader()
        for row in rows:
            w.writerow({c: (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in columns})


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
