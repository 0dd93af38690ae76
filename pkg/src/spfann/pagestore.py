"""Page-aligned read-only storage with per-query I/O accounting.

All index files are divided into fixed 4096-byte pages and every read is
counted in logical page units, even when the OS page cache would serve it
for free. This keeps measured I/O reproducible on any machine: the unit of
account is "pages requested", not "pages that physically hit the disk".
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields

from .errors import CorruptFileError, PageBoundsError

PAGE_SIZE = 4096
MAGIC_LEN = 8
FORMAT_VERSION = 1

# Every index file starts with an 8-byte magic plus a single version byte.
HEADER_LEN = MAGIC_LEN + 1


@dataclass
class IoCounters:
    """Per-query I/O and compute counters.

    All counters are monotonically non-decreasing within a query.
    ``attr_pages_read`` counts pages read solely to check a vector's
    attributes (the strict-filtering cost); it is included in
    ``pages_read`` as well.
    """

    pages_read: int = 0
    records_fetched: int = 0
    pq_distances: int = 0
    approx_checks: int = 0
    attr_pages_read: int = 0

    def snapshot_and_reset(self) -> "IoCounters":
        """Return the current values and zero all counters."""
        snap = IoCounters(**{f.name: getattr(self, f.name) for f in fields(self)})
        for f in fields(self):
            setattr(self, f.name, 0)
        return snap

    def copy(self) -> "IoCounters":
        return IoCounters(**{f.name: getattr(self, f.name) for f in fields(self)})


class PageFile:
    """Read-only handle on a page-aligned index file.

    Uses ``os.pread`` so any number of threads can share one handle; the
    counters passed per call are the only mutable state.
    """

    def __init__(self, path: str, expected_magic: bytes | None = None):
        self.path = str(path)
        self.page_size = PAGE_SIZE
        self._fd = os.open(self.path, os.O_RDONLY)
        size = os.fstat(self._fd).st_size
        if size % PAGE_SIZE != 0:
            os.close(self._fd)
            raise CorruptFileError(
                f"{self.path}: length {size} is not a multiple of {PAGE_SIZE}"
            )
        self.total_pages = size // PAGE_SIZE
        if expected_magic is not None:
            head = os.pread(self._fd, HEADER_LEN, 0)
            if len(head) < HEADER_LEN or head[:MAGIC_LEN] != expected_magic:
                os.close(self._fd)
                raise CorruptFileError(
                    f"{self.path}: bad magic {head[:MAGIC_LEN]!r}, "
                    f"expected {expected_magic!r}"
                )
            if head[MAGIC_LEN] != FORMAT_VERSION:
                os.close(self._fd)
                raise CorruptFileError(
                    f"{self.path}: unsupported format version {head[MAGIC_LEN]}"
                )

    def read_pages(self, start_page: int, n_pages: int, ctr: IoCounters) -> bytes:
        """Read ``n_pages`` whole pages and charge them to ``ctr``."""
        if start_page < 0 or n_pages < 0 or start_page + n_pages > self.total_pages:
            raise PageBoundsError(
                f"{self.path}: read of pages [{start_page}, {start_page + n_pages})"
                f" out of range (file has {self.total_pages} pages)"
            )
        want = n_pages * PAGE_SIZE
        data = os.pread(self._fd, want, start_page * PAGE_SIZE)
        if len(data) != want:
            raise CorruptFileError(
                f"{self.path}: short read ({len(data)} of {want} bytes)"
            )
        ctr.pages_read += n_pages
        return data

    def read_span(self, offset: int, length: int, ctr: IoCounters) -> bytes:
        """Read an arbitrary byte span, charged as ceil(length / page) pages.

        Used for structures laid out contiguously but not page-aligned
        (posting lists); the charge reflects the span's own size rather
        than its physical alignment.
        """
        if offset < 0 or length < 0 or offset + length > self.total_pages * PAGE_SIZE:
            raise PageBoundsError(
                f"{self.path}: span [{offset}, {offset + length}) out of range"
            )
        data = os.pread(self._fd, length, offset)
        if len(data) != length:
            raise CorruptFileError(
                f"{self.path}: short read ({len(data)} of {length} bytes)"
            )
        ctr.pages_read += -(-length // PAGE_SIZE)
        return data

    def close(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None

    def __enter__(self) -> "PageFile":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_blob(f, data: bytes) -> int:
    """Append ``data`` zero-padded to the next page boundary.

    Build-time only; returns the number of pages written.
    """
    f.write(data)
    pad = -len(data) % PAGE_SIZE
    if pad:
        f.write(b"\x00" * pad)
    return (len(data) + pad) // PAGE_SIZE


def file_header(magic: bytes) -> bytes:
    """The 9-byte header (magic + version) every index file starts with."""
    if len(magic) != MAGIC_LEN:
        raise ValueError(f"magic must be {MAGIC_LEN} bytes, got {len(magic)}")
    return magic + bytes([FORMAT_VERSION])
