"""
ETDG Output
CSV tables with a front-matter comment block carrying the run configuration
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

FRONT_MATTER = "# ---"


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (str, int, float, bool)) or value is None:
        return value
    return str(value)


def write_csv(path, columns: Sequence[str], rows, metadata: Dict[str, Any] = None) -> Path:
    """Write rows under a '# ---' block of 'key: <json>' lines; booleans become 0/1"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.asarray(rows, dtype=float)
    if data.size == 0:
        data = data.reshape(0, len(columns))
    if data.ndim != 2 or data.shape[1] != len(columns):
        raise ValueError(f"Expected {len(columns)} columns, got data of shape {data.shape}")
    with open(path, "w", encoding="utf-8") as f:
        f.write(FRONT_MATTER + "\n")
        for key, value in (metadata or {}).items():
            f.write(f"# {key}: {json.dumps(_jsonable(value))}\n")
        f.write(FRONT_MATTER + "\n")
        f.write(",".join(columns) + "\n")
        np.savetxt(f, data, fmt="%.17g", delimiter=",")
    return path


def read_csv(path) -> Tuple[Dict[str, Any], List[str], np.ndarray]:
    """(metadata, columns, data) of a file written by write_csv"""
    metadata: Dict[str, Any] = {}
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    i = 0
    if lines and lines[0] == FRONT_MATTER:
        i = 1
        while lines[i] != FRONT_MATTER:
            key, _, value = lines[i][2:].partition(": ")
            metadata[key] = json.loads(value)
            i += 1
        i += 1
    columns = lines[i].split(",")
    body = [line for line in lines[i + 1:] if line.strip()]
    data = np.array([[float(v) for v in line.split(",")] for line in body]).reshape(-1, len(columns))
    return metadata, columns, data
