"""
Checkpoint Codec
Reads and writes the ALORA1 tensor container
"""

import json
import logging
import struct
from typing import Any, Dict, Optional, Tuple

import numpy as np

logger = logging.getLogger(__name__)

MAGIC = b'ALORA1'
DTYPE = '<f8'
METADATA_KEY = '__metadata__'


class CheckpointCodec:
    """
    Container layout:

        MAGIC | uint64 little-endian header length | JSON header | blobs

    The header maps each tensor name to {shape, dtype, offset}, offsets
    counted from the first blob byte. Blobs are little-endian float64 in
    row-major order. An optional "__metadata__" entry holds free-form JSON.
    """

    def encode(self, tensors: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None) -> bytes:
        header: Dict[str, Any] = {}
        blobs = []
        offset = 0
        for name in sorted(tensors):
            array = np.ascontiguousarray(tensors[name], dtype=DTYPE)
            header[name] = {'shape': list(array.shape), 'dtype': DTYPE, 'offset': offset}
            blob = array.tobytes()
            blobs.append(blob)
            offset += len(blob)
        if metadata is not None:
            header[METADATA_KEY] = metadata
        header_bytes = json.dumps(header, sort_keys=True).encode('utf-8')
        return MAGIC + struct.pack('<Q', len(header_bytes)) + header_bytes + b''.join(blobs)

    def decode(self, payload: bytes) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        """
        Parse a container.

        Returns:
            (tensors by name, metadata)

        Raises:
            ValueError: on a bad magic string or truncated payload
        """
        if not payload.startswith(MAGIC):
            raise ValueError("Not an ALORA1 checkpoint")
        start = len(MAGIC)
        if len(payload) < start + 8:
            raise ValueError("Truncated checkpoint header")
        (header_len,) = struct.unpack('<Q', payload[start:start + 8])
        header_end = start + 8 + header_len
        header = json.loads(payload[start + 8:header_end].decode('utf-8'))
        metadata = header.pop(METADATA_KEY, {})

        tensors = {}
        for name, info in header.items():
            if info['dtype'] != DTYPE:
                raise ValueError(f"Unsupported dtype {info['dtype']} for {name}")
            count = int(np.prod(info['shape'])) if info['shape'] else 1
            begin = header_end + info['offset']
            end = begin + count * 8
            if end > len(payload):
                raise ValueError(f"Truncated blob for {name}")
            tensors[name] = np.frombuffer(payload[begin:end], dtype=DTYPE).reshape(info['shape']).astype(np.float64)
        return tensors, metadata

    def save(self, path: str, tensors: Dict[str, np.ndarray], metadata: Optional[Dict[str, Any]] = None):
        with open(path, 'wb') as f:
            f.write(self.encode(tensors, metadata))
        logger.info(f"Wrote checkpoint {path} ({len(tensors)} tensors)")

    def load(self, path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
        with open(path, 'rb') as f:
            return self.decode(f.read())
