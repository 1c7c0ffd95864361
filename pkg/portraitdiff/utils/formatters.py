"""Formatting utilities"""
from datetime import datetime
from typing import Optional, Union


def format_size(size_bytes: float) -> str:
    """Format bytes to human-readable size"""
    for unit in ['B', 'KB', 'MB', 'GB', 'TB']:
        if size_bytes < 1024.0:
            return f"{size_bytes:.1f} {unit}"
        size_bytes /= 1024.0
    return f"{size_bytes:.1f} PB"


def format_date(dt: Union[datetime, str], fmt: str = "%Y-%m-%d %H:%M:%S") -> str:
    """Format datetime"""
    if isinstance(dt, str):
        dt = datetime.fromisoformat(dt)
    return dt.strftime(fmt)


def format_count(n: int) -> str:
    """Parameter counts: 1234 -> '1.2K', 3_400_000 -> '3.4M'"""
    for unit, scale in (('B', 1e9), ('M', 1e6), ('K', 1e3)):
        if n >= scale:
            return f"{n / scale:.1f}{unit}"
    return str(n)


def format_loss(loss: Optional[float]) -> str:
    if loss is None:
        return "-"
    return f"{loss:.4f}" if loss >= 1e-3 else f"{loss:.2e}"
