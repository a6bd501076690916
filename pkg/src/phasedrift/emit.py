"""Result files: CSV time series and JSON reports with 17 significant digits, plus run manifests."""
from __future__ import annotations

import datetime as _dt
import json
import math
import platform
from pathlib import Path

import numpy as np

__all__ = ["fmt_float", "dumps", "write_json", "write_csv", "write_manifest"]


def fmt_float(x) -> str:
    x = float(x)
    if math.isnan(x) or math.isinf(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return format(x, ".17g")


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (complex, np.complexfloating)):
        return {"re": float(obj.real), "im": float(obj.imag)}
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    return obj


def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if isinstance(obj, float):
        # JSON has no NaN or infinity
        return fmt_float(obj) if math.isfinite(obj) else "null"
    return json.dumps(obj)


def dumps(obj, indent=2) -> str:
    """JSON text with every float at 17 significant digits and keys in insertion order."""
    return _encode(_plain(obj), indent, 0) + "\n"


def write_json(path, obj):
    Path(path).write_text(dumps(obj))


def write_csv(path, rows, columns=None):
    """Write a list of flat dicts as CSV; floats use 17 significant digits."""
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    lines = [",".join(columns)]
    for r in rows:
        cells = []
        for c in columns:
            v = r.get(c, "")
            if isinstance(v, (bool, np.bool_)):
                cells.append("1" if v else "0")
            elif isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, (float, np.floating)):
                cells.append(fmt_float(v))
            elif v is None:
                cells.append("")
            else:
                cells.append(str(v))
        lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n")


def _versions():
    import numba
    import scipy

    from . import __version__

    return {"phasedrift": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def write_manifest(out_dir, *, command, config, artifacts):
    """manifest.json: command, config hash and text, seed, library versions, artifact list and a timestamp.

    The manifest is the only emitted file that varies between identical runs.
    """
    manifest = {
        "command": command,
        "config_sha256": config.digest(),
        "seed": config.seed,
        "config": config.to_ini(),
        "versions": _versions(),
        "artifacts": sorted(artifacts),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }
    write_json(Path(out_dir) / "manifest.json", manifest)
    return manifest
