"""Document persistence behind a small contract.

Collections hold JSON documents keyed by string id, each carrying an integer
version. `cas` is the only conditional mutation and is the required path for
ride stage changes and request claiming. Three implementations:

* MemoryStore  - dict-backed, no durability; unit-test workhorse.
* FileStore    - MemoryStore plus an append-only JSONL log replayed on open,
                 flushed before every acknowledgement (default for serving).
* SqliteStore  - same contract on a SQLite file, one document per row.
"""

from __future__ import annotations

import json
import os
import sqlite3
import threading
from typing import Optional

class DocumentStore:
    """Contract: keyed document sets with get/put/scan and atomic CAS."""

    def get(self, collection: str, key: str) -> Optional[tuple[dict, int]]:
        """Return (document, version) or None."""
        raise NotImplementedError

    def put(self, collection: str, key: str, doc: dict) -> int:
        """Unconditional write; returns the new version."""
        raise NotImplementedError

    def cas(self, collection: str, key: str, expected_version: int, doc: dict) -> bool:
        """Write iff the stored version matches; expected 0 means create-new."""
        raise NotImplementedError

    def delete(self, collection: str, key: str) -> bool:
        raise NotImplementedError

    def scan(self, collection: str) -> list[tuple[str, dict]]:
        """All (key, document) pairs, sorted by key."""
        raise NotImplementedError

    def close(self) -> None:
        pass


def _copy(doc: dict) -> dict:
    # documents must be JSON-serializable; round-tripping also defends
    # against callers mutating shared state
    return json.loads(json.dumps(doc))


class MemoryStore(DocumentStore):
    def __init__(self):
        self._data: dict[str, dict[str, tuple[dict, int]]] = {}
        self._lock = threading.RLock()

    def get(self, collection, key):
        with self._lock:
            entry = self._data.get(collection, {}).get(key)
            if entry is None:
                return None
            doc, version = entry
            return _copy(doc), version

    def put(self, collection, key, doc):
        with self._lock:
            col = self._data.setdefault(collection, {})
            version = col[key][1] + 1 if key in col else 1
            col[key] = (_copy(doc), version)
            self._record(collection, key, doc, version, deleted=False)
            return version

    def cas(self, collection, key, expected_version, doc):
        with self._lock:
            col = self._data.setdefault(collection, {})
            current = col[key][1] if key in col else 0
            if current != expected_version:
                return False
            version = current + 1
            col[key] = (_copy(doc), version)
            self._record(collection, key, doc, version, deleted=False)
            return True

    def delete(self, collection, key):
        with self._lock:
            col = self._data.get(collection, {})
            if key not in col:
                return False
            del col[key]
            self._record(collection, key, None, 0, deleted=True)
            return True

    def scan(self, collection):
        with self._lock:
            col = self._data.get(collection, {})
            return [(k, _copy(doc)) for k, (doc, _) in sorted(col.items())]

    def _record(self, collection, key, doc, version, deleted):
        """Durability hook; no-op in memory."""


class FileStore(MemoryStore):
    """Memory store with an append-only log; reopening replays the log."""

    def __init__(self, path: str, fsync: bool = False):
        super().__init__()
        self.path = path
        self._fsync = fsync
        self._fh = None
        if os.path.exists(path):
            self._replay()
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._fh = open(path, "a", encoding="utf-8")

    def _replay(self) -> None:
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                col = self._data.setdefault(rec["col"], {})
                if rec["deleted"]:
                    col.pop(rec["key"], None)
                else:
                    col[rec["key"]] = (rec["doc"], rec["version"])

    def _record(self, collection, key, doc, version, deleted):
        if self._fh is None:
            return
        rec = {"col": collection, "key": key, "doc": doc, "version": version, "deleted": deleted}
        self._fh.write(json.dumps(rec, separators=(",", ":")) + "\n")
        self._fh.flush()
        if self._fsync:
            os.fsync(self._fh.fileno())

    def close(self):
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


class SqliteStore(DocumentStore):
    def __init__(self, path: str):
        self.path = path
        self._conn = sqlite3.connect(path, check_same_thread=False)
        self._lock = threading.RLock()
        with self._lock:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS documents ("
                " collection TEXT NOT NULL, key TEXT NOT NULL,"
                " version INTEGER NOT NULL, doc TEXT NOT NULL,"
                " PRIMARY KEY (collection, key))"
            )
            self._conn.commit()

    def get(self, collection, key):
        with self._lock:
            row = self._conn.execute(
                "SELECT doc, version FROM documents WHERE collection=? AND key=?",
                (collection, key),
            ).fetchone()
        if row is None:
            return None
        return json.loads(row[0]), row[1]

    def put(self, collection, key, doc):
        payload = json.dumps(doc, separators=(",", ":"))
        with self._lock:
            row = self._conn.execute(
                "SELECT version FROM documents WHERE collection=? AND key=?",
                (collection, key),
            ).fetchone()
            version = (row[0] if row else 0) + 1
            self._conn.execute(
                "INSERT OR REPLACE INTO documents (collection, key, version, doc)"
                " VALUES (?, ?, ?, ?)",
                (collection, key, version, payload),
            )
            self._conn.commit()
            return version

    def cas(self, collection, key, expected_version, doc):
        payload = json.dumps(doc, separators=(",", ":"))
        with self._lock:
            if expected_version == 0:
                try:
                    self._conn.execute(
                        "INSERT INTO documents (collection, key, version, doc)"
                        " VALUES (?, ?, 1, ?)",
                        (collection, key, payload),
                    )
                except sqlite3.IntegrityError:
                    return False
                self._conn.commit()
                return True
            cur = self._conn.execute(
                "UPDATE documents SET version=?, doc=?"
                " WHERE collection=? AND key=? AND version=?",
                (expected_version + 1, payload, collection, key, expected_version),
            )
            self._conn.commit()
            return cur.rowcount == 1

    def delete(self, collection, key):
        with self._lock:
            cur = self._conn.execute(
                "DELETE FROM documents WHERE collection=? AND key=?", (collection, key)
            )
            self._conn.commit()
            return cur.rowcount == 1

    def scan(self, collection):
        with self._lock:
            rows = self._conn.execute(
                "SELECT key, doc FROM documents WHERE collection=? ORDER BY key",
                (collection,),
            ).fetchall()
        return [(k, json.loads(d)) for k, d in rows]

    def close(self):
        with self._lock:
            self._conn.close()


def open_store(path: Optional[str]) -> DocumentStore:
    """Store factory: None -> memory, *.sqlite/*.db -> SQLite, else file log."""
    if path is None:
        return MemoryStore()
    if path.endswith((".sqlite", ".db")):
        return SqliteStore(path)
    return FileStore(path)
