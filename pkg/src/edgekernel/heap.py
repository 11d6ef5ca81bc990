"""Immutable acyclic value heap with a bounded-pause generational collector.

Values are immutable after construction and may only reference values that
already exist, so the value graph is a DAG by construction.  That gives the
collector two structural gifts:

* no old-to-young references can ever exist (a value's children are always
  older than itself), so minor collections never scan the old generation;
* reference counting is a *complete* reclamation strategy for the old
  generation (no cycle detector needed).

The collector is a bump-allocated nursery with copying evacuation into a
refcount-managed old generation.  Minor-collection work is bounded by the
nursery size plus a fixed release budget, which is what bounds the pause.
Old-generation frees are deferred through a budgeted queue so that dropping
a huge structure never blows the pause bound.

All sizes are logical bytes of the modeled allocator, not CPython memory.
"""

from __future__ import annotations

import hashlib
import math
import time
from collections import Counter, deque
from dataclasses import dataclass

TAG_UNIT = 0
TAG_BOOL = 1
TAG_INT64 = 2
TAG_STRING = 3
TAG_BYTES = 4
TAG_LIST = 5
TAG_RECORD = 6
TAG_ENUM = 7

TAG_NAMES = {
    TAG_UNIT: "unit",
    TAG_BOOL: "bool",
    TAG_INT64: "int",
    TAG_STRING: "str",
    TAG_BYTES: "bytes",
    TAG_LIST: "list",
    TAG_RECORD: "rec",
    TAG_ENUM: "enum",
}

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

MIN_NURSERY_BYTES = 256 * 1024

# Fixed accounting charge for collector-held auxiliary structures (pause ring,
# release queue headroom, root table).  Independent of heap limit and live set;
# reserve_bytes must stay a constant function of the nursery size alone.
METADATA_RESERVE_BYTES = 128 * 1024

VALUE_HEADER_BYTES = 16
CHILD_REF_BYTES = 8

SNAPSHOT_MAGIC = b"EKSNAP1"

ValueHandle = int


class HeapError(Exception):
    pass


class OutOfMemory(HeapError):
    """Live bytes plus the request exceed the configured heap limit."""


class OversizedAllocation(OutOfMemory):
    """A single value is larger than the heap limit itself."""


class InvalidHandle(HeapError):
    pass


class SnapshotFormatError(HeapError):
    pass


@dataclass(frozen=True)
class GcConfig:
    nursery_bytes: int = MIN_NURSERY_BYTES
    heap_limit_bytes: int = 64 * 1024 * 1024
    # Old-generation slots released per pause; None means unbounded.
    old_gen_decrement_budget: int | None = 4096

    def __post_init__(self) -> None:
        if self.nursery_bytes < MIN_NURSERY_BYTES:
            raise ValueError(
                f"nursery_bytes must be >= {MIN_NURSERY_BYTES} (got {self.nursery_bytes})"
            )
        if self.heap_limit_bytes < 2 * self.nursery_bytes:
            raise ValueError("heap_limit_bytes must be >= 2 * nursery_bytes")
        if self.old_gen_decrement_budget is not None and self.old_gen_decrement_budget < 1:
            raise ValueError("old_gen_decrement_budget must be >= 1 or None")


@dataclass(frozen=True)
class GcStats:
    minor_collections: int
    max_pause_us: float
    p99_pause_us: float
    live_bytes: int
    reserve_bytes: int
    promoted_bytes: int


@dataclass(frozen=True)
class CollectionDelta:
    pause_us: float
    promoted_bytes: int
    reclaimed_bytes: int
    survivor_count: int


class _Slot:
    __slots__ = ("tag", "payload", "size", "old", "rc", "digest")

    def __init__(self, tag: int, payload: object, size: int) -> None:
        self.tag = tag
        self.payload = payload
        self.size = size
        self.old = False
        self.rc = 0
        self.digest: bytes | None = None


def _slot_children(slot: _Slot) -> tuple[int, ...]:
    tag = slot.tag
    if tag == TAG_LIST:
        return slot.payload  # type: ignore[return-value]
    if tag == TAG_RECORD:
        return tuple(h for _, h in slot.payload)  # type: ignore[union-attr]
    if tag == TAG_ENUM:
        return (slot.payload[2],)  # type: ignore[index]
    return ()


class Heap:
    """A single mutator-visible heap: one nursery plus one old generation.

    Embedder contract (enforced by the runtime, relied on here):

    * any handle held across a potential collection must be registered via
      ``add_root`` or appended to ``temp_roots``;
    * a handle whose refcount may reach zero must be re-rooted *before* the
      drop that could zero it;
    * ``allocate``'s child handles are protected automatically during the
      collection the allocation itself may trigger.
    """

    def __init__(self, config: GcConfig | None = None) -> None:
        self.config = config or GcConfig()
        self._slots: dict[int, _Slot] = {}
        self._next_id = 0
        self._nursery_ids: list[int] = []
        self._nursery_used = 0
        self._old_bytes = 0
        self._roots: Counter[int] = Counter()
        # Embedder-managed scratch roots: traced, never refcounted.
        self.temp_roots: list[int] = []
        # Old-generation slots with rc 0 kept alive only by scratch roots;
        # each collection re-examines them (see minor_collect).
        self._floating: set[int] = set()
        self._pending_release: deque[int] = deque()
        self._pauses_us: list[float] = []
        self._minor_collections = 0
        self._promoted_bytes = 0
        # Interned singletons: born old and permanently rooted, so they never
        # occupy nursery space or perturb collection arithmetic.
        self._unit = self._alloc_permanent(TAG_UNIT, None, VALUE_HEADER_BYTES)
        self._true = self._alloc_permanent(TAG_BOOL, True, VALUE_HEADER_BYTES + 1)
        self._false = self._alloc_permanent(TAG_BOOL, False, VALUE_HEADER_BYTES + 1)

    def _alloc_permanent(self, tag: int, payload: object, size: int) -> ValueHandle:
        h = self._next_id
        self._next_id = h + 1
        slot = _Slot(tag, payload, size)
        slot.old = True
        self._slots[h] = slot
        self._old_bytes += size
        self.add_root(h)
        return h

    # ------------------------------------------------------------------
    # Construction

    def unit(self) -> ValueHandle:
        return self._unit

    def boolean(self, value: bool) -> ValueHandle:
        return self._true if value else self._false

    def int64(self, value: int) -> ValueHandle:
        if not (INT64_MIN <= value <= INT64_MAX):
            raise ValueError(f"integer out of 64-bit range: {value}")
        return self._alloc(TAG_INT64, value, VALUE_HEADER_BYTES + 8, ())

    def string(self, value: str) -> ValueHandle:
        return self._alloc(TAG_STRING, value, VALUE_HEADER_BYTES + len(value.encode("utf-8")), ())

    def bytes_(self, value: bytes) -> ValueHandle:
        return self._alloc(TAG_BYTES, bytes(value), VALUE_HEADER_BYTES + len(value), ())

    def list_(self, items: tuple[ValueHandle, ...] | list[ValueHandle]) -> ValueHandle:
        children = tuple(items)
        size = VALUE_HEADER_BYTES + CHILD_REF_BYTES * len(children)
        return self._alloc(TAG_LIST, children, size, children)

    def record(self, fields: dict[str, ValueHandle] | list[tuple[str, ValueHandle]]) -> ValueHandle:
        pairs = list(fields.items()) if isinstance(fields, dict) else list(fields)
        pairs.sort(key=lambda kv: kv[0].encode("utf-8"))
        names = [k for k, _ in pairs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate record field name")
        payload = tuple(pairs)
        size = VALUE_HEADER_BYTES + sum(
            CHILD_REF_BYTES + len(k.encode("utf-8")) for k, _ in pairs
        )
        children = tuple(h for _, h in pairs)
        return self._alloc(TAG_RECORD, payload, size, children)

    def enum(self, enum_name: str, variant: str, payload: ValueHandle | None = None) -> ValueHandle:
        child = self._unit if payload is None else payload
        size = (
            VALUE_HEADER_BYTES
            + len(enum_name.encode("utf-8"))
            + len(variant.encode("utf-8"))
            + CHILD_REF_BYTES
        )
        return self._alloc(TAG_ENUM, (enum_name, variant, child), size, (child,))

    def allocate(self, tag: int, payload: object) -> ValueHandle:
        """Generic constructor keyed by tag; payload per the value kind."""
        if tag == TAG_UNIT:
            return self.unit()
        if tag == TAG_BOOL:
            return self.boolean(bool(payload))
        if tag == TAG_INT64:
            return self.int64(payload)  # type: ignore[arg-type]
        if tag == TAG_STRING:
            return self.string(payload)  # type: ignore[arg-type]
        if tag == TAG_BYTES:
            return self.bytes_(payload)  # type: ignore[arg-type]
        if tag == TAG_LIST:
            return self.list_(payload)  # type: ignore[arg-type]
        if tag == TAG_RECORD:
            return self.record(payload)  # type: ignore[arg-type]
        if tag == TAG_ENUM:
            name, variant, child = payload  # type: ignore[misc]
            return self.enum(name, variant, child)
        raise ValueError(f"unknown value tag {tag}")

    def _alloc(
        self,
        tag: int,
        payload: object,
        size: int,
        children: tuple[int, ...],
    ) -> ValueHandle:
        slots = self._slots
        for c in children:
            if c not in slots:
                raise InvalidHandle(f"child handle {c} is not a live value")
        cfg = self.config
        if size > cfg.heap_limit_bytes:
            raise OversizedAllocation(
                f"single value of {size} bytes exceeds heap limit {cfg.heap_limit_bytes}"
            )
        if size > cfg.nursery_bytes:
            return self._alloc_large(tag, payload, size, children)

        collected = False
        if self._nursery_used + size > cfg.nursery_bytes:
            self.minor_collect(children)
            collected = True
        if self._old_bytes + self._nursery_used + size > cfg.heap_limit_bytes:
            if not collected:
                self.minor_collect(children)
            self._drain_pending()
            if self._old_bytes + self._nursery_used + size > cfg.heap_limit_bytes:
                raise OutOfMemory(
                    f"live {self._old_bytes + self._nursery_used} + request {size} "
                    f"exceeds heap limit {cfg.heap_limit_bytes}"
                )
        h = self._next_id
        self._next_id = h + 1
        slots[h] = _Slot(tag, payload, size)
        self._nursery_ids.append(h)
        self._nursery_used += size
        return h

    def _alloc_large(
        self, tag: int, payload: object, size: int, children: tuple[int, ...]
    ) -> ValueHandle:
        # Large values go straight to the old generation.  Their children must
        # not stay behind in the nursery (old slots never point young), so the
        # transitive nursery closure is promoted eagerly.
        if self._old_bytes + self._nursery_used + size > self.config.heap_limit_bytes:
            self.minor_collect(children)
            self._drain_pending()
            if self._old_bytes + self._nursery_used + size > self.config.heap_limit_bytes:
                raise OutOfMemory(
                    f"live {self._old_bytes + self._nursery_used} + request {size} "
                    f"exceeds heap limit {self.config.heap_limit_bytes}"
                )
        self._promote_reachable(children)
        h = self._next_id
        self._next_id = h + 1
        slot = _Slot(tag, payload, size)
        slot.old = True
        slot.rc = 0
        self._slots[h] = slot
        self._old_bytes += size
        for c in children:
            self._slots[c].rc += 1
        return h

    # ------------------------------------------------------------------
    # Roots

    def add_root(self, h: ValueHandle) -> None:
        slot = self._slots.get(h)
        if slot is None:
            raise InvalidHandle(f"cannot root dead handle {h}")
        self._roots[h] += 1
        if slot.old:
            slot.rc += 1

    def drop_root(self, h: ValueHandle) -> None:
        count = self._roots.get(h, 0)
        if count <= 0:
            raise InvalidHandle(f"handle {h} is not a registered root")
        if count == 1:
            del self._roots[h]
        else:
            self._roots[h] = count - 1
        slot = self._slots[h]
        if slot.old:
            slot.rc -= 1
            if slot.rc == 0:
                self._pending_release.append(h)

    # ------------------------------------------------------------------
    # Collection

    def minor_collect(self, extra_roots: tuple[int, ...] | list[int] = ()) -> CollectionDelta:
        """Stop-the-world minor collection: evacuate live nursery values into
        the old generation, then run up to one release budget of deferred
        old-generation frees."""
        t0 = time.perf_counter_ns()
        slots = self._slots
        live: set[int] = set()
        stack: list[int] = []
        for h in self._roots:
            if not slots[h].old:
                stack.append(h)
        for h in self.temp_roots:
            if h in slots and not slots[h].old:
                stack.append(h)
        for h in extra_roots:
            if h in slots and not slots[h].old:
                stack.append(h)
        while stack:
            h = stack.pop()
            if h in live:
                continue
            live.add(h)
            slot = slots[h]
            tag = slot.tag
            if tag == TAG_LIST:
                for c in slot.payload:  # type: ignore[union-attr]
                    if not slots[c].old and c not in live:
                        stack.append(c)
            elif tag == TAG_RECORD:
                for _, c in slot.payload:  # type: ignore[union-attr]
                    if not slots[c].old and c not in live:
                        stack.append(c)
            elif tag == TAG_ENUM:
                c = slot.payload[2]  # type: ignore[index]
                if not slots[c].old and c not in live:
                    stack.append(c)

        reclaimed = 0
        for h in self._nursery_ids:
            if h not in live:
                slot = slots.get(h)
                if slot is not None:
                    reclaimed += slot.size
                    del slots[h]

        promoted = 0
        for h in live:
            slot = slots[h]
            slot.old = True
            promoted += slot.size
        self._old_bytes += promoted
        # Refcount initialization: every reference out of a promoted slot now
        # originates in the old generation, plus any root registrations that
        # were waiting on promotion.
        for h in live:
            for c in _slot_children(slots[h]):
                slots[c].rc += 1
        roots = self._roots
        for h in live:
            n = roots.get(h, 0)
            if n:
                slots[h].rc += n

        # Scratch-rooted promotions have no refcount holder; park them in the
        # floating set until a real reference or root materializes, or until
        # a later collection finds them unprotected and releases them.
        protected = set(self.temp_roots)
        protected.update(extra_roots)
        still_floating: set[int] = set()
        for h in self._floating:
            slot = slots.get(h)
            if slot is None or slot.rc != 0:
                continue
            if h in protected:
                still_floating.add(h)
            else:
                self._pending_release.append(h)
        for h in live:
            if slots[h].rc == 0:
                still_floating.add(h)
        self._floating = still_floating

        self._nursery_ids.clear()
        self._nursery_used = 0
        self._minor_collections += 1
        self._promoted_bytes += promoted

        reclaimed += self._pump_release(self.config.old_gen_decrement_budget)

        pause_us = (time.perf_counter_ns() - t0) / 1000.0
        self._pauses_us.append(pause_us)
        return CollectionDelta(pause_us, promoted, reclaimed, len(live))

    def _promote_reachable(self, handles: tuple[int, ...]) -> None:
        # Eager promotion used by the large-object path; refcount rules match
        # minor_collect's.
        slots = self._slots
        live: set[int] = set()
        stack = [h for h in handles if not slots[h].old]
        while stack:
            h = stack.pop()
            if h in live:
                continue
            live.add(h)
            for c in _slot_children(slots[h]):
                if not slots[c].old and c not in live:
                    stack.append(c)
        if not live:
            return
        promoted = 0
        for h in live:
            slot = slots[h]
            slot.old = True
            promoted += slot.size
            self._nursery_used -= slot.size
        self._old_bytes += promoted
        self._promoted_bytes += promoted
        for h in live:
            for c in _slot_children(slots[h]):
                slots[c].rc += 1
        for h in live:
            n = self._roots.get(h, 0)
            if n:
                slots[h].rc += n
        live_list = set(live)
        self._nursery_ids = [h for h in self._nursery_ids if h not in live_list]

    def _pump_release(self, budget: int | None) -> int:
        slots = self._slots
        pending = self._pending_release
        steps = len(pending) if budget is None else budget
        reclaimed = 0
        while steps > 0 and pending:
            h = pending.popleft()
            slot = slots.get(h)
            if slot is None or slot.rc != 0 or not slot.old:
                continue
            for c in _slot_children(slot):
                child = slots[c]
                child.rc -= 1
                if child.rc == 0 and not self._roots.get(c, 0):
                    pending.append(c)
            reclaimed += slot.size
            self._old_bytes -= slot.size
            del slots[h]
            steps -= 1
        return reclaimed

    def _drain_pending(self) -> None:
        # Exhaustion-avoidance slow path: starvation freedom outranks the
        # routine pause budget, so drain everything before declaring OOM.
        while self._pending_release:
            self._pump_release(None)

    # ------------------------------------------------------------------
    # Inspection

    def stats(self) -> GcStats:
        pauses = self._pauses_us
        if pauses:
            ordered = sorted(pauses)
            # Nearest-rank percentile.
            p99 = ordered[max(0, math.ceil(0.99 * len(ordered)) - 1)]
            max_pause = ordered[-1]
        else:
            p99 = 0.0
            max_pause = 0.0
        return GcStats(
            minor_collections=self._minor_collections,
            max_pause_us=max_pause,
            p99_pause_us=p99,
            live_bytes=self._old_bytes + self._nursery_used,
            reserve_bytes=self.config.nursery_bytes + METADATA_RESERVE_BYTES,
            promoted_bytes=self._promoted_bytes,
        )

    def pause_history_us(self) -> list[float]:
        return list(self._pauses_us)

    def contains(self, h: ValueHandle) -> bool:
        return h in self._slots

    def live_value_count(self) -> int:
        return len(self._slots)

    def _slot(self, h: ValueHandle) -> _Slot:
        slot = self._slots.get(h)
        if slot is None:
            raise InvalidHandle(f"dead handle {h}")
        return slot

    def tag(self, h: ValueHandle) -> int:
        return self._slot(h).tag

    def scalar(self, h: ValueHandle) -> object:
        slot = self._slot(h)
        if slot.tag in (TAG_LIST, TAG_RECORD, TAG_ENUM):
            raise HeapError("scalar() on a composite value")
        return slot.payload

    def list_items(self, h: ValueHandle) -> tuple[ValueHandle, ...]:
        slot = self._slot(h)
        if slot.tag != TAG_LIST:
            raise HeapError("list_items() on a non-list value")
        return slot.payload  # type: ignore[return-value]

    def record_fields(self, h: ValueHandle) -> tuple[tuple[str, ValueHandle], ...]:
        slot = self._slot(h)
        if slot.tag != TAG_RECORD:
            raise HeapError("record_fields() on a non-record value")
        return slot.payload  # type: ignore[return-value]

    def enum_parts(self, h: ValueHandle) -> tuple[str, str, ValueHandle]:
        slot = self._slot(h)
        if slot.tag != TAG_ENUM:
            raise HeapError("enum_parts() on a non-enum value")
        return slot.payload  # type: ignore[return-value]

    def children(self, h: ValueHandle) -> tuple[ValueHandle, ...]:
        return _slot_children(self._slot(h))

    # ------------------------------------------------------------------
    # Structural identity

    def structural_hash(self, h: ValueHandle) -> bytes:
        """Content digest; equal iff the value trees are structurally equal.
        Independent of handles, allocation order, and collections."""
        slots = self._slots
        root = self._slot(h)
        if root.digest is not None:
            return root.digest
        stack: list[tuple[int, bool]] = [(h, False)]
        while stack:
            cur, ready = stack.pop()
            slot = slots[cur]
            if slot.digest is not None:
                continue
            if not ready:
                stack.append((cur, True))
                for c in _slot_children(slot):
                    if slots[c].digest is None:
                        stack.append((c, False))
                continue
            hasher = hashlib.sha256(bytes([slot.tag]))
            tag = slot.tag
            if tag == TAG_BOOL:
                hasher.update(b"\x01" if slot.payload else b"\x00")
            elif tag == TAG_INT64:
                hasher.update(slot.payload.to_bytes(8, "little", signed=True))  # type: ignore[union-attr]
            elif tag == TAG_STRING:
                hasher.update(slot.payload.encode("utf-8"))  # type: ignore[union-attr]
            elif tag == TAG_BYTES:
                hasher.update(slot.payload)  # type: ignore[arg-type]
            elif tag == TAG_LIST:
                for c in slot.payload:  # type: ignore[union-attr]
                    hasher.update(slots[c].digest)  # type: ignore[arg-type]
            elif tag == TAG_RECORD:
                for name, c in slot.payload:  # type: ignore[union-attr]
                    nb = name.encode("utf-8")
                    hasher.update(len(nb).to_bytes(4, "little"))
                    hasher.update(nb)
                    hasher.update(slots[c].digest)  # type: ignore[arg-type]
            elif tag == TAG_ENUM:
                name, variant, c = slot.payload  # type: ignore[misc]
                for part in (name, variant):
                    pb = part.encode("utf-8")
                    hasher.update(len(pb).to_bytes(4, "little"))
                    hasher.update(pb)
                hasher.update(slots[c].digest)  # type: ignore[arg-type]
            slot.digest = hasher.digest()
        return slots[h].digest  # type: ignore[return-value]

    def structural_equal(self, a: ValueHandle, b: ValueHandle) -> bool:
        if a == b:
            return True
        return self.structural_hash(a) == self.structural_hash(b)


def _write_varint(out: bytearray, n: int) -> None:
    if n < 0:
        raise ValueError("varint must be non-negative")
    while True:
        b = n & 0x7F
        n >>= 7
        if n:
            out.append(b | 0x80)
        else:
            out.append(b)
            return


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotFormatError("truncated snapshot")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def varint(self) -> int:
        shift = 0
        result = 0
        while True:
            if self.pos >= len(self.data):
                raise SnapshotFormatError("truncated varint")
            b = self.data[self.pos]
            self.pos += 1
            result |= (b & 0x7F) << shift
            if not b & 0x80:
                return result
            shift += 7
            if shift > 63:
                raise SnapshotFormatError("varint overflow")


def snapshot(heap: Heap, roots: dict[str, ValueHandle]) -> bytes:
    """Host-independent encoding of everything reachable from `roots`.

    Values appear in canonical topological order (children strictly before
    parents) and structurally equal subtrees are emitted once, so the bytes
    are a canonical form: snapshotting a restored snapshot reproduces the
    identical encoding.
    """
    index_of: dict[bytes, int] = {}
    chunks: list[bytes] = []

    def visit(h: ValueHandle) -> int:
        digest = heap.structural_hash(h)
        hit = index_of.get(digest)
        if hit is not None:
            return hit
        slot = heap._slot(h)
        out = bytearray([slot.tag])
        tag = slot.tag
        if tag == TAG_BOOL:
            out.append(1 if slot.payload else 0)
        elif tag == TAG_INT64:
            out += slot.payload.to_bytes(8, "little", signed=True)  # type: ignore[union-attr]
        elif tag == TAG_STRING:
            sb = slot.payload.encode("utf-8")  # type: ignore[union-attr]
            _write_varint(out, len(sb))
            out += sb
        elif tag == TAG_BYTES:
            _write_varint(out, len(slot.payload))  # type: ignore[arg-type]
            out += slot.payload  # type: ignore[operator]
        elif tag == TAG_LIST:
            items = slot.payload
            _write_varint(out, len(items))  # type: ignore[arg-type]
            for c in items:  # type: ignore[union-attr]
                _write_varint(out, visit(c))
        elif tag == TAG_RECORD:
            fields = slot.payload
            _write_varint(out, len(fields))  # type: ignore[arg-type]
            for name, c in fields:  # type: ignore[union-attr]
                idx = visit(c)
                nb = name.encode("utf-8")
                _write_varint(out, len(nb))
                out += nb
                _write_varint(out, idx)
        elif tag == TAG_ENUM:
            name, variant, c = slot.payload  # type: ignore[misc]
            idx = visit(c)
            nb = name.encode("utf-8")
            vb = variant.encode("utf-8")
            _write_varint(out, len(nb))
            out += nb
            _write_varint(out, len(vb))
            out += vb
            _write_varint(out, idx)
        idx = len(chunks)
        index_of[digest] = idx
        chunks.append(bytes(out))
        return idx

    named = sorted(roots.items(), key=lambda kv: kv[0].encode("utf-8"))
    root_entries = [(name, visit(h)) for name, h in named]

    out = bytearray(SNAPSHOT_MAGIC)
    out += len(chunks).to_bytes(4, "little")
    for chunk in chunks:
        out += chunk
    out += len(root_entries).to_bytes(4, "little")
    for name, idx in root_entries:
        nb = name.encode("utf-8")
        _write_varint(out, len(nb))
        out += nb
        _write_varint(out, idx)
    return bytes(out)


def restore_prefix(heap: Heap, data: bytes) -> tuple[dict[str, ValueHandle], int]:
    """Inflate a snapshot that starts `data`, returning the named root
    handles and the number of bytes the snapshot section occupied.  The
    handles are only scratch-rooted during the call; the caller must root
    them before the next allocation."""
    r = _Reader(data)
    if r.take(len(SNAPSHOT_MAGIC)) != SNAPSHOT_MAGIC:
        raise SnapshotFormatError("bad snapshot magic")
    count = int.from_bytes(r.take(4), "little")
    handles: list[ValueHandle] = []
    mark = len(heap.temp_roots)
    try:
        for i in range(count):
            tag = r.take(1)[0]
            if tag == TAG_UNIT:
                h = heap.unit()
            elif tag == TAG_BOOL:
                h = heap.boolean(r.take(1)[0] != 0)
            elif tag == TAG_INT64:
                h = heap.int64(int.from_bytes(r.take(8), "little", signed=True))
            elif tag == TAG_STRING:
                h = heap.string(r.take(r.varint()).decode("utf-8"))
            elif tag == TAG_BYTES:
                h = heap.bytes_(r.take(r.varint()))
            elif tag == TAG_LIST:
                n = r.varint()
                items = []
                for _ in range(n):
                    idx = r.varint()
                    if idx >= i:
                        raise SnapshotFormatError("forward reference in snapshot")
                    items.append(handles[idx])
                h = heap.list_(items)
            elif tag == TAG_RECORD:
                n = r.varint()
                fields = []
                for _ in range(n):
                    name = r.take(r.varint()).decode("utf-8")
                    idx = r.varint()
                    if idx >= i:
                        raise SnapshotFormatError("forward reference in snapshot")
                    fields.append((name, handles[idx]))
                h = heap.record(fields)
            elif tag == TAG_ENUM:
                name = r.take(r.varint()).decode("utf-8")
                variant = r.take(r.varint()).decode("utf-8")
                idx = r.varint()
                if idx >= i:
                    raise SnapshotFormatError("forward reference in snapshot")
                h = heap.enum(name, variant, handles[idx])
            else:
                raise SnapshotFormatError(f"unknown tag byte {tag}")
            handles.append(h)
            heap.temp_roots.append(h)
        root_count = int.from_bytes(r.take(4), "little")
        roots: dict[str, ValueHandle] = {}
        for _ in range(root_count):
            name = r.take(r.varint()).decode("utf-8")
            idx = r.varint()
            if idx >= len(handles):
                raise SnapshotFormatError("root index out of range")
            roots[name] = handles[idx]
        return roots, r.pos
    finally:
        del heap.temp_roots[mark:]


def restore(heap: Heap, data: bytes) -> dict[str, ValueHandle]:
    """Inflate a snapshot into `heap`, returning the named root handles."""
    roots, consumed = restore_prefix(heap, data)
    if consumed != len(data):
        raise SnapshotFormatError("trailing bytes after snapshot")
    return roots
