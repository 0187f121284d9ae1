"""Coordination kernel for synchronized development.

One authoritative snapshot, one overlay per developer. An edit is admitted
only if nothing it touches depends on an element another developer holds;
admitted edits take element locks and apply to the editor's overlay. A commit
is allowed only when the overlay passes the build gate, so every propagated
state is buildable by construction. Commits rebase the other overlays, which
cannot fail under the lock discipline and is treated as an internal error if
it ever does. Off-the-record mode trades coordination for privacy: edits
bypass admission and are reconciled, or refused, when the developer comes
back on the record.

Everything observable is a KernelEvent with a gapless sequence number; the
committed events alone are enough to replay the snapshot byte for byte.
"""

from __future__ import annotations

import copy
import hashlib
import json
import time
from dataclasses import dataclass, field

from . import depcore
from . import editops
from . import minilang as ml
from . import semantics

EVENT_KINDS = frozenset(
    [
        "lock_granted",
        "lock_denied",
        "edit_applied",
        "build_status",
        "committed",
        "reverted",
        "mode_changed",
        "reconcile_result",
    ]
)

ON_RECORD = "on_record"
OFF_RECORD = "off_record"


class KernelError(Exception):
    """Request rejected before it produced any event."""

    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


@dataclass(frozen=True)
class KernelConfig:
    auto_commit: bool = True
    lock_lease_ms: int = 0  # 0 disables lease expiry

    @staticmethod
    def parse(text: str) -> "KernelConfig":
        """`key = value` lines; '#' starts a comment; unknown keys rejected."""
        values: dict[str, object] = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = (part.strip() for part in line.partition("="))
            if not sep or not key or not value:
                raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
            if key == "auto_commit":
                if value not in ("true", "false"):
                    raise ValueError(f"line {lineno}: auto_commit must be true or false")
                values[key] = value == "true"
            elif key == "lock_lease_ms":
                try:
                    ms = int(value)
                except ValueError:
                    raise ValueError(f"line {lineno}: lock_lease_ms must be an integer") from None
                if ms < 0:
                    raise ValueError(f"line {lineno}: lock_lease_ms must be >= 0")
                values[key] = ms
            else:
                raise ValueError(f"line {lineno}: unknown config key {key!r}")
        return KernelConfig(**values)

    def to_dict(self) -> dict:
        return {"auto_commit": self.auto_commit, "lock_lease_ms": self.lock_lease_ms}


@dataclass(frozen=True)
class KernelEvent:
    seq: int
    kind: str
    dev: str | None
    details: dict

    def to_record(self) -> dict:
        return {"seq": self.seq, "kind": self.kind, "dev": self.dev, "details": self.details}

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)

    @staticmethod
    def from_record(record: dict) -> "KernelEvent":
        return KernelEvent(record["seq"], record["kind"], record["dev"], record["details"])


@dataclass
class Snapshot:
    version: int
    tree: ml.Unit
    text: str
    table: depcore.ElementTable
    edges: set[tuple[int, int]]

    def sha256(self) -> str:
        return hashlib.sha256(self.text.encode()).hexdigest()


@dataclass
class _Overlay:
    dev: str
    base_version: int
    tree: ml.Unit
    table: depcore.ElementTable
    pending: list[editops.EditOp] = field(default_factory=list)
    edges: set[tuple[int, int]] = field(default_factory=set)
    mode: str = ON_RECORD
    buffer: list[editops.EditOp] = field(default_factory=list)
    off_since: int = 0


@dataclass
class EditOutcome:
    granted: bool
    op: editops.EditOp | None
    events: list[KernelEvent]
    report: semantics.BuildReport | None = None
    committed_version: int | None = None


@dataclass
class CommitOutcome:
    ok: bool
    version: int | None
    events: list[KernelEvent]
    report: semantics.BuildReport | None = None


@dataclass
class ModeOutcome:
    ok: bool
    mode: str
    events: list[KernelEvent]


def _error_records(errors: list[semantics.BuildError]) -> list[dict]:
    return [
        {"code": e.code, "message": e.message, "line": e.span.line, "col": e.span.col}
        for e in errors
    ]


def replay_onto(
    tree: ml.Unit, ops: list[editops.EditOp]
) -> tuple[ml.Unit, depcore.ElementTable]:
    """Apply ops in order to `tree` (mutating it), rebuilding the element
    table after each step. Deterministic."""
    table = depcore.build_element_table(tree)
    for op in ops:
        editops.apply_op(tree, table, op)
        table = depcore.build_element_table(tree)
    return tree, table


class Kernel:
    """The single logical coordination state machine.

    Callers are expected to serialize access (the network layer is
    single-threaded, the simulator is sequential)."""

    def __init__(
        self,
        source_text: str = "",
        config: KernelConfig | None = None,
        clock=None,
    ):
        self.config = config or KernelConfig()
        self.clock = clock or (lambda: int(time.monotonic() * 1000))
        self.initial_text = source_text
        tree, diags = ml.parse_unit(ml.SourceText(source_text, "<initial>"))
        if tree is None:
            raise ValueError(f"initial source does not parse: {diags[0].message}")
        self.alloc = depcore.IdAllocator()
        depcore.annotate(tree, self.alloc)
        gate = semantics.build_gate(tree, version_checked="v1")
        if not gate.report.buildable:
            first = gate.report.errors[0]
            raise ValueError(f"initial source is not buildable: {first.message}")
        self.snapshot = Snapshot(
            1, tree, ml.print_unit(tree), depcore.build_element_table(tree), depcore.ref_edges(tree)
        )
        self.history: list[Snapshot] = [self.snapshot]
        self.events: list[KernelEvent] = []
        self.devs: dict[str, _Overlay] = {}
        self.lock_holder: dict[int, str] = {}
        self.lease_deadline: dict[int, int] = {}
        self._union_cache: depcore.ElementTable | None = None

    # -- bookkeeping ---------------------------------------------------------

    def _emit(self, event_kind: str, dev: str | None, **details) -> KernelEvent:
        event = KernelEvent(len(self.events) + 1, event_kind, dev, details)
        self.events.append(event)
        return event

    def _overlay(self, dev: str) -> _Overlay:
        try:
            return self.devs[dev]
        except KeyError:
            raise KernelError("unknown-developer", f"unknown developer {dev!r}") from None

    def _invalidate(self) -> None:
        self._union_cache = None

    def _union_table(self) -> depcore.ElementTable:
        # snapshot first so authoritative qnames win on collision
        if self._union_cache is None:
            tables = [self.snapshot.table] + [
                ov.table for _, ov in sorted(self.devs.items()) if ov.mode == ON_RECORD
            ]
            self._union_cache = depcore.union_tables(tables)
        return self._union_cache

    def _ref_index(self) -> depcore.RefIndex:
        # Cached edge sets only: the snapshot's, plus each on-record
        # developer's last-applied overlay resolve. Off-record developers are
        # invisible here by design.
        extra = {"snapshot": self.snapshot.edges}
        for dev, ov in sorted(self.devs.items()):
            if ov.mode == ON_RECORD:
                extra[f"dev:{dev}"] = ov.edges
        return depcore.build_ref_index({}, extra)

    def locks_of(self, dev: str) -> set[int]:
        return {eid for eid, holder in self.lock_holder.items() if holder == dev}

    def _acquire(self, dev: str, eids) -> None:
        now = self.clock()
        for eid in eids:
            self.lock_holder[eid] = dev
            if self.config.lock_lease_ms > 0:
                self.lease_deadline[eid] = now + self.config.lock_lease_ms

    def _release_all(self, dev: str) -> None:
        for eid in [e for e, holder in self.lock_holder.items() if holder == dev]:
            del self.lock_holder[eid]
            self.lease_deadline.pop(eid, None)

    # -- registration and views ----------------------------------------------

    def register(self, dev: str) -> None:
        if dev in self.devs:
            raise KernelError("duplicate-developer", f"developer {dev!r} already registered")
        tree = copy.deepcopy(self.snapshot.tree)
        self.devs[dev] = _Overlay(
            dev,
            self.snapshot.version,
            tree,
            depcore.build_element_table(tree),
            edges=set(self.snapshot.edges),
        )
        self._invalidate()

    def view_text(self, dev: str) -> str:
        return ml.print_unit(self._overlay(dev).tree)

    def view_table(self, dev: str) -> depcore.ElementTable:
        return self._overlay(dev).table

    # -- dependency admission ------------------------------------------------

    def _pair_rule(self, a: int, b: int, index, table) -> int | None:
        # ids not in any view (fresh creations, locks on since-deleted
        # elements) can only collide by identity
        if a == b:
            return 1
        if a not in table or b not in table:
            return None
        return depcore.dependency_rule(a, b, index, table)

    def _admission_conflicts(self, dev: str, touched, first_only: bool = True) -> list[dict]:
        """Dependencies between the touched set and other developers' locks,
        in deterministic order. Admission needs only the first; reconciliation
        reports them all."""
        index = self._ref_index()
        table = self._union_table()
        others = sorted(d for d in self.devs if d != dev)
        found: list[dict] = []
        for t in sorted(touched):
            for other in others:
                for held in sorted(self.locks_of(other)):
                    rule = self._pair_rule(t, held, index, table)
                    if rule is not None:
                        found.append({"holder": other, "rule": rule, "pair": [t, held]})
                        if first_only:
                            return found
        return found

    def _admission_conflict(self, dev: str, touched) -> dict | None:
        found = self._admission_conflicts(dev, touched, first_only=True)
        return found[0] if found else None

    def _descendants_fn(self, ov: _Overlay):
        union = self._union_table()

        def descendants(eid: int) -> set[int]:
            if eid in union:
                return union.descendants(eid)
            return ov.table.descendants(eid)

        return descendants

    def _prepare(self, ov: _Overlay, request: editops.EditRequest) -> editops.EditOp:
        try:
            return editops.prepare(
                ov.tree, ov.table, request, self.alloc, self._descendants_fn(ov)
            )
        except editops.OpError as exc:
            raise KernelError(exc.code, exc.message) from None

    # -- the edit pipeline ---------------------------------------------------

    def check_admission(self, dev: str, request: editops.EditRequest) -> list[dict]:
        """Dry-run admission: resolve the request against the developer's
        view and return every blocking pair, without taking locks, applying
        anything, or emitting events. Creation requests still consume fresh
        element ids."""
        ov = self._overlay(dev)
        if ov.mode != ON_RECORD:
            raise KernelError(
                "off-record-violation", f"{dev} is off the record; coordinated edits refused"
            )
        op = self._prepare(ov, request)
        return self._admission_conflicts(dev, op.touched, first_only=False)

    def request_edit(self, dev: str, request: editops.EditRequest) -> EditOutcome:
        """Admission, locking, application, gate. Emits lock_denied or
        lock_granted + edit_applied + build_status (+ commit events when
        auto_commit is on and the overlay is buildable)."""
        ov = self._overlay(dev)
        if ov.mode != ON_RECORD:
            raise KernelError(
                "off-record-violation", f"{dev} is off the record; coordinated edits refused"
            )
        self.check_leases()
        op = self._prepare(ov, request)
        conflict = self._admission_conflict(dev, op.touched)
        if conflict is not None:
            event = self._emit(
                "lock_denied",
                dev,
                kind=op.kind,
                target=op.target,
                touched=list(op.touched),
                holder=conflict["holder"],
                rule=conflict["rule"],
                pair=conflict["pair"],
            )
            return EditOutcome(False, op, [event])

        events = []
        self._acquire(dev, op.touched)
        events.append(
            self._emit(
                "lock_granted",
                dev,
                kind=op.kind,
                target=op.target,
                touched=list(op.touched),
                created=list(op.created),
            )
        )
        editops.apply_op(ov.tree, ov.table, op)
        ov.table = depcore.build_element_table(ov.tree)
        ov.pending.append(op)
        ov.edges = depcore.ref_edges(ov.tree)
        self._invalidate()
        events.append(
            self._emit("edit_applied", dev, kind=op.kind, target=op.target, op=op.to_record())
        )
        report = self._gate(ov, context="edit", events=events)
        outcome = EditOutcome(True, op, events, report)
        if self.config.auto_commit and report.buildable:
            commit = self.try_commit(dev)
            events.extend(commit.events)
            outcome.committed_version = commit.version
        return outcome

    def _gate(self, ov: _Overlay, context: str, events: list[KernelEvent]) -> semantics.BuildReport:
        label = f"{ov.dev}@v{ov.base_version}+{len(ov.pending) or len(ov.buffer)}"
        result = semantics.build_gate(ov.tree, version_checked=label)
        events.append(
            self._emit(
                "build_status",
                ov.dev,
                status=result.report.status,
                context=context,
                errors=_error_records(result.report.errors),
            )
        )
        return result.report

    def buffer_edit(self, dev: str, request: editops.EditRequest) -> tuple[editops.EditOp, semantics.BuildReport]:
        """Off-the-record edit: no admission, no locks, no events. The op is
        recorded for later reconciliation and the gate verdict is returned
        privately to the caller."""
        ov = self._overlay(dev)
        if ov.mode != OFF_RECORD:
            raise KernelError("not-off-record", f"{dev} is on the record; use request_edit")
        op = self._prepare(ov, request)
        editops.apply_op(ov.tree, ov.table, op)
        ov.table = depcore.build_element_table(ov.tree)
        ov.buffer.append(op)
        # deliberately no edge-cache update and no events: the kernel keeps
        # no public trace of off-record work
        gate = semantics.build_gate(ov.tree, version_checked=f"{dev}@off+{len(ov.buffer)}")
        return op, gate.report

    # -- commit and propagation ----------------------------------------------

    def try_commit(self, dev: str) -> CommitOutcome:
        ov = self._overlay(dev)
        if ov.mode != ON_RECORD:
            raise KernelError("off-record-violation", f"{dev} is off the record; cannot commit")
        if not ov.pending:
            raise KernelError("empty-overlay", f"{dev} has nothing to commit")
        events: list[KernelEvent] = []
        report = self._gate(ov, context="commit", events=events)
        if not report.buildable:
            return CommitOutcome(False, None, events, report)

        # Rebuild the new snapshot by replaying the pending ops onto a copy of
        # the old one; the result must equal the overlay tree.
        new_tree = copy.deepcopy(self.snapshot.tree)
        new_tree, new_table = replay_onto(new_tree, ov.pending)
        if new_tree != ov.tree:
            raise AssertionError("replayed snapshot diverged from overlay")
        version = self.snapshot.version + 1
        self.snapshot = Snapshot(
            version, new_tree, ml.print_unit(new_tree), new_table, depcore.ref_edges(new_tree)
        )
        self.history.append(self.snapshot)
        committed_ops = [op.to_record() for op in ov.pending]
        events.append(
            self._emit(
                "committed",
                dev,
                version=version,
                ops=committed_ops,
                text_sha256=self.snapshot.sha256(),
            )
        )
        self._release_all(dev)
        ov.pending = []
        self._reset_overlay(ov)
        for other_name, other in sorted(self.devs.items()):
            if other_name == dev or other.mode != ON_RECORD:
                continue
            self._rebase(other, events)
        self._invalidate()
        return CommitOutcome(True, version, events, report)

    def _reset_overlay(self, ov: _Overlay) -> None:
        ov.tree = copy.deepcopy(self.snapshot.tree)
        ov.table = depcore.build_element_table(ov.tree)
        ov.base_version = self.snapshot.version
        ov.edges = set(self.snapshot.edges)

    def _rebase(self, ov: _Overlay, events: list[KernelEvent]) -> None:
        """Re-apply a developer's pending ops onto the new snapshot. Lock
        discipline makes failure impossible; if it happens anyway the overlay
        is reverted rather than left corrupt."""
        if not ov.pending:
            self._reset_overlay(ov)
            return
        tree = copy.deepcopy(self.snapshot.tree)
        try:
            tree, table = replay_onto(tree, ov.pending)
        except editops.ApplyError as exc:
            dropped = len(ov.pending)
            ov.pending = []
            self._release_all(ov.dev)
            self._reset_overlay(ov)
            events.append(
                self._emit(
                    "reverted",
                    ov.dev,
                    reason="rebase-failure",
                    detail=f"{exc.code}: {exc}",
                    dropped_ops=dropped,
                )
            )
            return
        ov.tree = tree
        ov.table = table
        ov.base_version = self.snapshot.version
        ov.edges = depcore.ref_edges(ov.tree)

    def revert(self, dev: str, reason: str = "user") -> list[KernelEvent]:
        """Discard pending (or off-record buffered) work, release locks, and
        resynchronize the developer's view with the current snapshot.
        Idempotent: with nothing to discard it emits nothing."""
        ov = self._overlay(dev)
        dropped = len(ov.pending) + len(ov.buffer)
        was_off = ov.mode == OFF_RECORD
        if dropped == 0 and not was_off and not self.locks_of(dev):
            return []
        ov.pending = []
        ov.buffer = []
        self._release_all(dev)
        self._reset_overlay(ov)
        self._invalidate()
        events = [self._emit("reverted", dev, reason=reason, dropped_ops=dropped)]
        if was_off:
            ov.mode = ON_RECORD
            events.append(self._emit("mode_changed", dev, mode=ON_RECORD, via="revert"))
        return events

    # -- off-the-record mode -------------------------------------------------

    def set_mode(self, dev: str, mode: str) -> ModeOutcome:
        if mode not in (ON_RECORD, OFF_RECORD):
            raise KernelError("malformed-op", f"unknown mode {mode!r}")
        ov = self._overlay(dev)
        if mode == ov.mode:
            return ModeOutcome(True, mode, [])
        if mode == OFF_RECORD:
            if ov.pending:
                raise KernelError(
                    "nonempty-overlay", f"{dev} has uncommitted work; commit or revert first"
                )
            self._release_all(dev)
            ov.mode = OFF_RECORD
            ov.off_since = self.snapshot.version
            ov.buffer = []
            self._reset_overlay(ov)
            self._invalidate()
            event = self._emit(
                "mode_changed", dev, mode=OFF_RECORD, at_version=self.snapshot.version
            )
            return ModeOutcome(True, OFF_RECORD, [event])
        return self._reconcile(ov)

    def _departure_snapshot(self, ov: _Overlay) -> Snapshot:
        return self.history[ov.off_since - 1]

    def _reconcile(self, ov: _Overlay) -> ModeOutcome:
        """Coming back on the record: the buffered ops must still be
        admissible and nothing they touched may have changed meanwhile."""
        dev = ov.dev
        created = {eid for op in ov.buffer for eid in op.created}
        touched = {eid for op in ov.buffer for eid in op.touched} - created
        old = self._departure_snapshot(ov)
        changed: list[dict] = []
        for eid in sorted(touched):
            if eid not in old.table:
                # should be unreachable (all non-created touched ids come
                # from the departure view); treat as drift rather than trust it
                changed.append({"element": eid, "change": "untracked"})
            elif eid not in self.snapshot.table:
                changed.append({"element": eid, "change": "deleted"})
            else:
                before = depcore.element_content(old.table.info(eid).node)
                after = depcore.element_content(self.snapshot.table.info(eid).node)
                if before != after:
                    changed.append({"element": eid, "change": "modified"})
        blocked = self._admission_conflicts(dev, touched | created, first_only=False)
        replay_failure: str | None = None
        tree = table = None
        if not changed and not blocked and ov.buffer:
            tree = copy.deepcopy(self.snapshot.tree)
            try:
                tree, table = replay_onto(tree, ov.buffer)
            except editops.ApplyError as exc:
                replay_failure = f"{exc.code}: {exc}"

        if changed or blocked or replay_failure:
            event = self._emit(
                "reconcile_result",
                dev,
                result="conflict",
                ops=len(ov.buffer),
                changed=changed,
                blocked=blocked,
                replay_failure=replay_failure,
            )
            return ModeOutcome(False, OFF_RECORD, [event])

        events = [self._emit("reconcile_result", dev, result="clean", ops=len(ov.buffer))]
        if ov.buffer:
            self._acquire(dev, touched | created)
            ov.tree = tree
            ov.table = table
            ov.pending = ov.buffer
        else:
            self._reset_overlay(ov)
            ov.pending = []
        ov.buffer = []
        ov.mode = ON_RECORD
        ov.base_version = self.snapshot.version
        ov.edges = depcore.ref_edges(ov.tree)
        self._invalidate()
        events.append(self._emit("mode_changed", dev, mode=ON_RECORD, at_version=self.snapshot.version))
        if ov.pending:
            report = self._gate(ov, context="reconcile", events=events)
            if self.config.auto_commit and report.buildable:
                commit = self.try_commit(dev)
                events.extend(commit.events)
        return ModeOutcome(True, ON_RECORD, events)

    # -- leases ---------------------------------------------------------------

    def check_leases(self, now_ms: int | None = None) -> list[KernelEvent]:
        """Force-revert any developer holding an expired lock. No-op when
        leases are disabled."""
        if self.config.lock_lease_ms <= 0 or not self.lease_deadline:
            return []
        now = self.clock() if now_ms is None else now_ms
        expired_devs = sorted(
            {
                self.lock_holder[eid]
                for eid, deadline in self.lease_deadline.items()
                if deadline <= now and eid in self.lock_holder
            }
        )
        events: list[KernelEvent] = []
        for dev in expired_devs:
            events.extend(self.revert(dev, reason="lease-expired"))
        return events

    # -- replay ---------------------------------------------------------------

    @staticmethod
    def replay_committed(initial_text: str, events: list[KernelEvent]) -> str:
        """Reconstruct the final snapshot text from the committed events
        alone. Byte-identical to the live kernel's snapshot text."""
        tree, diags = ml.parse_unit(ml.SourceText(initial_text, "<replay>"))
        if tree is None:
            raise ValueError(f"initial source does not parse: {diags[0].message}")
        depcore.annotate(tree, depcore.IdAllocator())
        for event in sorted(events, key=lambda e: e.seq):
            if event.kind != "committed":
                continue
            ops = [editops.EditOp.from_record(r) for r in event.details["ops"]]
            tree, _table = replay_onto(tree, ops)
        return ml.print_unit(tree)
