"""Element identity and the pairwise dependency predicate.

Every lockable AST node (class, field, method, param, statement) carries a
stable numeric element id. Two elements are dependent when they are the same
element, when they share an enclosing method (ancestor-or-self), or when one
contains a reference that resolves to the other's declaration. The reference
index unions edges from the authoritative snapshot and every developer
overlay, so a reference someone is still typing already counts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator

from . import minilang as ml
from . import semantics

CLASS = "class"
FIELD = "field"
METHOD = "method"
PARAM = "param"
STATEMENT = "statement"

_STMT_TYPES = (
    ml.VarDeclStmt,
    ml.AssignStmt,
    ml.ReturnStmt,
    ml.ExprStmt,
    ml.IfStmt,
    ml.WhileStmt,
)


class UnknownElementError(KeyError):
    """Raised when an element id or qualified name does not exist in a view."""


def kind_of(node) -> str | None:
    if isinstance(node, ml.ClassDecl):
        return CLASS
    if isinstance(node, ml.FieldDecl):
        return FIELD
    if isinstance(node, ml.MethodDecl):
        return METHOD
    if isinstance(node, ml.Param):
        return PARAM
    if isinstance(node, _STMT_TYPES):
        return STATEMENT
    return None


class IdAllocator:
    """Strictly increasing element-id source; ids are never reused."""

    def __init__(self, start: int = 1):
        self._next = start

    def fresh(self) -> int:
        eid = self._next
        self._next += 1
        return eid

    @property
    def next_id(self) -> int:
        return self._next


def annotate(unit: ml.Unit, alloc: IdAllocator) -> None:
    """Assign fresh element ids to every element node that lacks one, in
    deterministic pre-order."""
    for node, _parent in _walk(unit):
        if node.eid is None:
            node.eid = alloc.fresh()


def _walk(unit: ml.Unit) -> Iterator[tuple[object, object | None]]:
    """Yield (element node, parent element node) in pre-order."""

    def stmts(body: list[ml.Stmt], parent) -> Iterator[tuple[object, object | None]]:
        for stmt in body:
            yield stmt, parent
            if isinstance(stmt, ml.IfStmt):
                yield from stmts(stmt.then_body, stmt)
                if stmt.else_body is not None:
                    yield from stmts(stmt.else_body, stmt)
            elif isinstance(stmt, ml.WhileStmt):
                yield from stmts(stmt.body, stmt)

    for cls in unit.classes:
        yield cls, None
        for member in cls.members:
            yield member, cls
            if isinstance(member, ml.MethodDecl):
                for param in member.params:
                    yield param, member
                yield from stmts(member.body, member)


def child_slots(node) -> list[tuple[str, list]]:
    """Ordered element-bearing child lists of a container node."""
    if isinstance(node, ml.Unit):
        return [("classes", node.classes)]
    if isinstance(node, ml.ClassDecl):
        return [("members", node.members)]
    if isinstance(node, ml.MethodDecl):
        return [("params", node.params), ("body", node.body)]
    if isinstance(node, ml.IfStmt):
        slots = [("then", node.then_body)]
        if node.else_body is not None:
            slots.append(("else", node.else_body))
        return slots
    if isinstance(node, ml.WhileStmt):
        return [("body", node.body)]
    return []


def element_content(node) -> tuple:
    """The element's own content, child elements excluded. Used for three-way
    comparison in the baseline merge and for off-record reconciliation."""
    kind = kind_of(node)
    if kind == CLASS:
        return ("class", node.name)
    if kind == FIELD:
        init = ml.print_expr(node.init) if node.init is not None else None
        return ("field", node.type_name, node.name, init)
    if kind == METHOD:
        return ("method", node.ret_type, node.name)
    if kind == PARAM:
        return ("param", node.type_name, node.name)
    if isinstance(node, ml.VarDeclStmt):
        init = ml.print_expr(node.init) if node.init is not None else None
        return ("stmt", "var", node.type_name, node.name, init)
    if isinstance(node, ml.AssignStmt):
        return ("stmt", "assign", node.target.name, ml.print_expr(node.value))
    if isinstance(node, ml.ReturnStmt):
        value = ml.print_expr(node.value) if node.value is not None else None
        return ("stmt", "return", value)
    if isinstance(node, ml.ExprStmt):
        return ("stmt", "expr", ml.print_expr(node.expr))
    if isinstance(node, ml.IfStmt):
        return ("stmt", "if", ml.print_expr(node.cond), node.else_body is not None)
    if isinstance(node, ml.WhileStmt):
        return ("stmt", "while", ml.print_expr(node.cond))
    raise TypeError(f"not an element node: {node!r}")


@dataclass
class ElementInfo:
    eid: int
    kind: str
    parent: int | None
    qname: str
    node: object


@dataclass
class ElementTable:
    """Per-tree element directory: id -> info, plus qualified-name lookup and
    a precomputed nearest-method-ancestor-or-self map."""

    elements: dict[int, ElementInfo] = field(default_factory=dict)
    by_qname: dict[str, int] = field(default_factory=dict)
    method_of: dict[int, int | None] = field(default_factory=dict)
    order: list[int] = field(default_factory=list)

    def info(self, eid: int) -> ElementInfo:
        try:
            return self.elements[eid]
        except KeyError:
            raise UnknownElementError(eid) from None

    def __contains__(self, eid: int) -> bool:
        return eid in self.elements

    def qname(self, eid: int) -> str:
        return self.info(eid).qname

    def resolve_qname(self, qname: str) -> int:
        try:
            return self.by_qname[qname]
        except KeyError:
            raise UnknownElementError(qname) from None

    def descendants(self, eid: int) -> set[int]:
        """eid plus every element below it."""
        self.info(eid)
        out = {eid}
        # parent pointers only; repeated sweeps are fine at desk scale
        changed = True
        while changed:
            changed = False
            for info in self.elements.values():
                if info.eid not in out and info.parent in out:
                    out.add(info.eid)
                    changed = True
        return out


def build_element_table(unit: ml.Unit) -> ElementTable:
    """Index an annotated tree. Raises ValueError on a node without an id."""
    table = ElementTable()

    def add(node, kind: str, parent: int | None, qname: str, method: int | None) -> int:
        if node.eid is None:
            raise ValueError(f"element without id: {qname}")
        info = ElementInfo(node.eid, kind, parent, qname, node)
        table.elements[node.eid] = info
        table.by_qname.setdefault(qname, node.eid)
        table.method_of[node.eid] = method
        table.order.append(node.eid)
        return node.eid

    def add_stmts(body: list[ml.Stmt], parent_eid: int, prefix: str, method: int) -> None:
        for i, stmt in enumerate(body):
            qname = f"{prefix}[{i}]"
            eid = add(stmt, STATEMENT, parent_eid, qname, method)
            if isinstance(stmt, ml.IfStmt):
                add_stmts(stmt.then_body, eid, f"{qname}/then", method)
                if stmt.else_body is not None:
                    add_stmts(stmt.else_body, eid, f"{qname}/else", method)
            elif isinstance(stmt, ml.WhileStmt):
                add_stmts(stmt.body, eid, f"{qname}/body", method)

    for cls in unit.classes:
        cls_eid = add(cls, CLASS, None, cls.name, None)
        for member in cls.members:
            if isinstance(member, ml.FieldDecl):
                add(member, FIELD, cls_eid, f"{cls.name}.{member.name}", None)
            else:
                m_eid = add(member, METHOD, cls_eid, f"{cls.name}.{member.name}", None)
                table.method_of[m_eid] = m_eid  # ancestor-or-self
                for param in member.params:
                    add(param, PARAM, m_eid, f"{cls.name}.{member.name}.{param.name}", m_eid)
                add_stmts(member.body, m_eid, f"{cls.name}.{member.name}/body", m_eid)
    return table


def union_tables(tables: Iterable[ElementTable]) -> ElementTable:
    """Combine tables from several views; the first view providing an element
    wins. Parent chains for shared elements agree across views (there are no
    move operations), so the union is well defined."""
    out = ElementTable()
    for table in tables:
        for eid in table.order:
            if eid not in out.elements:
                out.elements[eid] = table.elements[eid]
                out.method_of[eid] = table.method_of[eid]
                out.order.append(eid)
        for qname, eid in table.by_qname.items():
            out.by_qname.setdefault(qname, eid)
    return out


def enclosing_method(eid: int, table: ElementTable) -> int | None:
    """Nearest ancestor-or-self of kind method; None for classes, fields and
    anything outside a method."""
    table.info(eid)
    return table.method_of.get(eid)


# ---------------------------------------------------------------------------
# Reference index


@dataclass
class RefIndex:
    """Directed reference edges (from-element, to-declaration), each tagged
    with the views that contributed it. Symmetry is applied by the predicate,
    not stored."""

    sources: dict[tuple[int, int], set[str]] = field(default_factory=dict)

    def add(self, from_eid: int, to_eid: int, source: str) -> None:
        self.sources.setdefault((from_eid, to_eid), set()).add(source)

    def has(self, from_eid: int, to_eid: int) -> bool:
        return (from_eid, to_eid) in self.sources

    def edges(self) -> set[tuple[int, int]]:
        return set(self.sources)


def ref_edges(unit: ml.Unit) -> set[tuple[int, int]]:
    """Best-effort (owner element, target declaration) pairs for one tree.
    Unresolvable references simply contribute nothing."""
    result = semantics.resolve(unit)
    return {
        (site.owner, site.target)
        for site in result.table.sites
        if site.owner is not None and site.target is not None
    }


def build_ref_index(
    views: dict[str, ml.Unit],
    extra_edges: dict[str, Iterable[tuple[int, int]]] | None = None,
) -> RefIndex:
    """Union the reference edges of every view (authoritative snapshot plus
    developer overlays). `extra_edges` lets the caller re-contribute edges
    from a view's last successful bind when its current state no longer
    resolves them."""
    index = RefIndex()
    for source, unit in views.items():
        for from_eid, to_eid in ref_edges(unit):
            index.add(from_eid, to_eid, source)
    for source, pairs in (extra_edges or {}).items():
        for from_eid, to_eid in pairs:
            index.add(from_eid, to_eid, source)
    return index


# ---------------------------------------------------------------------------
# Dependency predicate


def dependency_rule(a: int, b: int, index: RefIndex, table: ElementTable) -> int | None:
    """Which rule makes a and b dependent: 1 same element, 2 shared enclosing
    method, 3 reference either way. None when independent."""
    table.info(a)
    table.info(b)
    if a == b:
        return 1
    method_a = table.method_of.get(a)
    if method_a is not None and method_a == table.method_of.get(b):
        return 2
    if index.has(a, b) or index.has(b, a):
        return 3
    return None


def dependent(a: int, b: int, index: RefIndex, table: ElementTable) -> bool:
    return dependency_rule(a, b, index, table) is not None


def dependents_of(eid: int, index: RefIndex, table: ElementTable) -> set[int]:
    """All elements dependent on eid (pairwise set, not a closure; always
    contains eid itself)."""
    table.info(eid)
    return {other for other in table.elements if dependent(eid, other, index, table)}
