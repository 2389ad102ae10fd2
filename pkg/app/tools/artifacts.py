"""
运行产物写出 - CSV / JSON，先写临时文件再原子替换
"""
import base64
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

FLOAT_FORMAT = ".17g"


def encode_array(values) -> dict[str, Any]:
    """数组编码为 base64（小端 float64）"""
    array = np.ascontiguousarray(np.asarray(values, dtype="<f8"))
    return {
        "dtype": "<f8",
        "shape": list(array.shape),
        "data": base64.b64encode(array.tobytes()).decode("ascii"),
    }


def decode_array(payload: dict[str, Any]) -> np.ndarray:
    """encode_array 的逆操作"""
    raw = base64.b64decode(payload["data"])
    return np.frombuffer(raw, dtype=payload.get("dtype", "<f8")).reshape(payload["shape"]).copy()


def format_value(value) -> str:
    """CSV 单元格：浮点数保留 17 位有效数字，None / NaN 写为空"""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return ""
        return format(value, FLOAT_FORMAT)
    return str(value)


def to_jsonable(obj: Any) -> Any:
    """把 numpy 类型、元组等整理成 JSON 可序列化的结构；非有限浮点数写为 null"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    logger.info("已写出 %s", path)


def write_csv(path: str | Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """
    写出 CSV：逗号分隔、首行表头、LF 换行

    Args:
        path: 目标文件
        header: 列名
        rows: 行数据，每行长度须与 header 一致
    """
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        if len(row) != len(header):
            raise ValueError(f"{path.name}: 行长度 {len(row)} 与表头 {len(header)} 不一致")
        lines.append(",".join(format_value(v) for v in row))
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


def write_json(path: str | Path, payload: Any) -> Path:
    """写出 UTF-8 JSON，键按字典序排列"""
    path = Path(path)
    text = json.dumps(to_jsonable(payload), ensure_ascii=False, sort_keys=True, indent=2,
                      allow_nan=False)
    _atomic_write(path, text + "\n")
    return path
