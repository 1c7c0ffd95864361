"""Compression utilities using zstandard"""
import zstandard as zstd
from pathlib import Path
from typing import Tuple


class Compressor:
    """Checkpoint blob compression"""

    def __init__(self, level: int = 3):
        """
        Initialize compressor

        Args:
            level: Compression level (1-22, default 3)
        """
        self.level = max(1, min(22, level))
        self._compressor = zstd.ZstdCompressor(level=self.level)
        self._decompressor = zstd.ZstdDecompressor()

    def compress(self, data: bytes) -> Tuple[bytes, int, int]:
        """
        Compress data

        Returns:
            (compressed_data, original_size, compressed_size)
        """
        compressed = self._compressor.compress(data)
        return compressed, len(data), len(compressed)

    def decompress(self, data: bytes) -> bytes:
        """Decompress a zstd frame; corrupt input raises zstd.ZstdError"""
        return self._decompressor.decompress(data)

    def write(self, data: bytes, path: Path) -> Tuple[int, int]:
        """Compress data into path, returning (original_size, compressed_size)"""
        compressed, orig, comp = self.compress(data)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(compressed)
        return orig, comp

    def read(self, path: Path) -> bytes:
        return self.decompress(path.read_bytes())
