"""Line-delimited JSON logs and manifests"""
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Iterator, List, Optional, Type, TypeVar

from pydantic import BaseModel

M = TypeVar('M', bound=BaseModel)


class JsonlWriter:
    """Append-only JSONL file, flushed after every record"""

    def __init__(self, path: Path, truncate: bool = False):
        self.path = path
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'w' if truncate else 'a')

    def write(self, record: Any) -> None:
        if isinstance(record, BaseModel):
            line = record.model_dump_json()
        else:
            line = json.dumps(record, sort_keys=True)
        self._file.write(line + "\n")
        self._file.flush()

    def close(self) -> None:
        self._file.close()

    def __enter__(self) -> 'JsonlWriter':
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_jsonl(path: Path, records: Iterable[Any]) -> int:
    count = 0
    with JsonlWriter(path, truncate=True) as writer:
        for record in records:
            writer.write(record)
            count += 1
    return count


def iter_jsonl(path: Path) -> Iterator[Dict[str, Any]]:
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise ValueError(f"{path}:{lineno}: invalid JSON record ({e.msg})")


def read_jsonl(path: Path, model: Optional[Type[M]] = None) -> List[Any]:
    """Read all records, optionally validated into a pydantic model"""
    if model is None:
        return list(iter_jsonl(path))
    return [model(**r) for r in iter_jsonl(path)]
