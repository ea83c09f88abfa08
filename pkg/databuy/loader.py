# SPDX-License-Identifier: Apache-2.0
# DATABUY RESULTS ARCHIVE - INDEXED READER/WRITER
# Many experiment runs in one .dbr file using safetensors + msgpack. No pickle.

"""
Results archive format (.dbr):

    [Run 1][Run 2]...[Run N][Index][Footer]

Each run:
    [meta_length: 4 bytes, uint32, little-endian]
    [tensor_length: 4 bytes, uint32, little-endian]
    [metadata: msgpack bytes]       config, summary, archive version
    [tensors: safetensors bytes]    trace columns

Index:
    [msgpack dict mapping run id -> (offset, meta_len, tensor_len)]

Footer:
    [index_offset: 8 bytes, uint64, little-endian]
    [magic: 4 bytes, b'DBRS']
"""

import logging
import struct
from pathlib import Path
from typing import Any, Dict, Iterator, Mapping, Optional, Tuple, Union

import numpy as np

from .errors import ArchiveError

try:
    import msgpack
except ImportError:
    raise ImportError("msgpack is required. Install with: pip install msgpack")

try:
    from safetensors.numpy import load as st_load
    from safetensors.numpy import save as st_save
except ImportError:
    raise ImportError("safetensors is required. Install with: pip install safetensors")

logger = logging.getLogger(__name__)

ARCHIVE_MAGIC = b'DBRS'
ARCHIVE_VERSION = 1
FOOTER_SIZE = 12


def _plain(obj: Any) -> Any:
    """Convert numpy scalars/arrays and tuples so msgpack can encode them."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


class ResultsWriter:
    """
    Writes experiment runs to a single indexed .dbr archive.

    Example:
        >>> with ResultsWriter("repro.dbr") as writer:
        ...     writer.append_run("steady_k1", trace.columns(), {"summary": {...}})
    """

    def __init__(self, output_path: Union[str, Path]):
        self.output_path = Path(output_path)
        self.index: Dict[str, Tuple[int, int, int]] = {}
        self._file_handle = open(self.output_path, 'wb')
        self._closed = False
        logger.info(f"ResultsWriter opened: {self.output_path}")

    def append_run(
        self,
        run_id: str,
        columns: Mapping[str, np.ndarray],
        metadata: Optional[Dict[str, Any]] = None,
    ) -> None:
        """
        Append one run.

        Args:
            run_id: Unique identifier of the run.
            columns: Trace columns as numpy arrays (stored as tensors).
            metadata: Config, summary and anything else msgpack can encode.
        """
        if self._closed:
            raise ArchiveError("Cannot write to a closed ResultsWriter")
        if run_id in self.index:
            raise ArchiveError(f"Duplicate run id: {run_id}")

        offset = self._file_handle.tell()

        meta = _plain(dict(metadata or {}))
        meta['_id'] = run_id
        meta['_archive_version'] = ARCHIVE_VERSION
        meta_bytes = msgpack.packb(meta, use_bin_type=True)

        tensors = {}
        for key, value in columns.items():
            array = np.asarray(value)
            if array.dtype == bool:
                array = array.astype(np.int8)
            if array.dtype.kind not in 'biuf':
                logger.warning(f"Skipping non-numeric column '{key}' in run {run_id}")
                continue
            tensors[key] = np.ascontiguousarray(array)
        tensor_bytes = st_save(tensors)

        self._file_handle.write(struct.pack('<I', len(meta_bytes)))
        self._file_handle.write(struct.pack('<I', len(tensor_bytes)))
        self._file_handle.write(meta_bytes)
        self._file_handle.write(tensor_bytes)
        self.index[run_id] = (offset, len(meta_bytes), len(tensor_bytes))

    def close(self) -> None:
        """Write the index and footer."""
        if self._closed:
            return
        index_offset = self._file_handle.tell()
        self._file_handle.write(msgpack.packb(self.index, use_bin_type=True))
        self._file_handle.write(struct.pack('<Q', index_offset))
        self._file_handle.write(ARCHIVE_MAGIC)
        self._file_handle.close()
        self._file_handle = None
        self._closed = True
        logger.info(f"ResultsWriter closed: {len(self.index)} runs indexed")

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
        return False

    def __del__(self):
        if not getattr(self, '_closed', True) and self._file_handle:
            logger.warning("ResultsWriter was not properly closed. Closing now.")
            self.close()


class ResultsReader:
    """
    Random-access reader for .dbr archives.

    Example:
        >>> with ResultsReader("repro.dbr") as reader:
        ...     run = reader["steady_k1"]
        ...     run["tensors"]["v_post"], run["meta"]["summary"]
    """

    def __init__(self, archive_path: Union[str, Path]):
        self.archive_path = Path(archive_path)
        if not self.archive_path.exists():
            raise FileNotFoundError(f"Results archive not found: {archive_path}")
        self._file_handle = open(self.archive_path, 'rb')
        try:
            self._validate_magic()
            self.index = self._read_index()
        except Exception:
            self.close()
            raise
        self.run_ids = list(self.index.keys())
        logger.info(f"ResultsReader opened: {len(self.run_ids)} runs")

    def _validate_magic(self) -> None:
        if self.archive_path.stat().st_size < FOOTER_SIZE:
            raise ArchiveError(f"Invalid .dbr file: too short ({self.archive_path})")
        self._file_handle.seek(-4, 2)
        magic = self._file_handle.read(4)
        if magic != ARCHIVE_MAGIC:
            raise ArchiveError(f"Invalid .dbr file: magic bytes mismatch (got {magic!r})")

    def _read_index(self) -> Dict[str, Tuple[int, int, int]]:
        self._file_handle.seek(-FOOTER_SIZE, 2)
        index_offset = struct.unpack('<Q', self._file_handle.read(8))[0]
        index_size = self.archive_path.stat().st_size - FOOTER_SIZE - index_offset
        if index_size < 0:
            raise ArchiveError("Invalid .dbr file: index offset beyond end of file")
        self._file_handle.seek(index_offset)
        try:
            index = msgpack.unpackb(self._file_handle.read(index_size), raw=False)
        except Exception as e:
            raise ArchiveError(f"Corrupt .dbr index: {e}") from e
        return {k: tuple(v) for k, v in index.items()}

    def read_run(self, run_id: str) -> Dict[str, Any]:
        """
        Read one run by id.

        Returns:
            {'tensors': {column: ndarray}, 'meta': dict}
        """
        if run_id not in self.index:
            raise KeyError(f"Run '{run_id}' not found in archive")
        offset, meta_len, tensor_len = self.index[run_id]
        self._file_handle.seek(offset + 8)
        meta = msgpack.unpackb(self._file_handle.read(meta_len), raw=False)
        if meta.get('_archive_version') != ARCHIVE_VERSION:
            raise ArchiveError(
                f"Run '{run_id}' was written by archive version {meta.get('_archive_version')}"
            )
        tensors = st_load(self._file_handle.read(tensor_len))
        return {'tensors': tensors, 'meta': meta}

    def __len__(self) -> int:
        return len(self.run_ids)

    def __iter__(self) -> Iterator[Dict[str, Any]]:
        for run_id in self.run_ids:
            yield self.read_run(run_id)

    def __getitem__(self, key: Union[str, int]) -> Dict[str, Any]:
        if isinstance(key, int):
            if key < 0 or key >= len(self.run_ids):
                raise IndexError(f"Index {key} out of range")
            key = self.run_ids[key]
        return self.read_run(key)

    def close(self) -> None:
        if self._file_handle:
            self._file_handle.close()
            self._file_handle = None

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.close()
        return False

    def __del__(self):
        self.close()
