import threading
from typing import Generic, Optional, Tuple, TypeVar

T = TypeVar("T")


class LatestSlot(Generic[T]):
    """Single-writer/single-reader slot holding only the most recent value; readers never wait for a writer."""

    def __init__(self):
        self._lock = threading.Lock()
        self._value: Optional[T] = None
        self._version = 0

    def put(self, value: T) -> int:
        with self._lock:
            self._value = value
            self._version += 1
            return self._version

    def get(self) -> Tuple[Optional[T], int]:
        with self._lock:
            return self._value, self._version

    @property
    def version(self) -> int:
        with self._lock:
            return self._version
