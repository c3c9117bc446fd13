import os
import json
from typing import Dict, Optional, Tuple

import numpy as np

from app.core.config import LAB_OUTPUT_DIR, logger


class FieldFormatError(ValueError):
    pass


def resolve_dir(output_dir: str) -> str:
    """Relative output directories live under LAB_OUTPUT_DIR."""
    if os.path.isabs(output_dir):
        return output_dir
    return os.path.join(LAB_OUTPUT_DIR, output_dir)


def write_json(path: str, payload: dict):
    data = json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2, allow_nan=False)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(data)


def read_json(path: str) -> Optional[dict]:
    try:
        if not os.path.isfile(path):
            return None
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except Exception as ex:
        logger.warning(f"read_json failed for {path}: {ex}")
        return None


def dump_field(base: str, values: np.ndarray, header: Dict) -> Tuple[str, str]:
    """Write <base>.bin (little-endian float64, C order) and <base>.json (header with dims)."""
    arr = np.ascontiguousarray(values, dtype="<f8")
    meta = dict(header)
    meta["dims"] = list(arr.shape)
    bin_path, json_path = base + ".bin", base + ".json"
    os.makedirs(os.path.dirname(os.path.abspath(bin_path)), exist_ok=True)
    with open(bin_path, "wb") as f:
        f.write(arr.tobytes(order="C"))
    write_json(json_path, meta)
    logger.info(f"Saved field: {bin_path} {tuple(arr.shape)}")
    return bin_path, json_path


def load_field(base: str) -> Tuple[np.ndarray, Dict]:
    header = read_json(base + ".json")
    if header is None:
        raise FieldFormatError(f"missing or unreadable header {base}.json")
    dims = header.get("dims")
    if not isinstance(dims, list) or not all(isinstance(d, int) and d > 0 for d in dims):
        raise FieldFormatError(f"header {base}.json has no valid 'dims'")
    path = base + ".bin"
    if not os.path.isfile(path):
        raise FieldFormatError(f"missing data file {path}")
    expected = int(np.prod(dims)) * 8
    size = os.path.getsize(path)
    if size != expected:
        raise FieldFormatError(f"{path} holds {size} bytes, header dims {dims} need {expected}")
    with open(path, "rb") as f:
        data = np.frombuffer(f.read(), dtype="<f8").reshape(dims)
    return data.astype(float), header
