"""Class hierarchy parsing and tree-based semantic similarity.

A taxonomy is a rooted tree whose leaves are the classes of interest. Two
classes are compared through their lowest common subsumer (LCS): the deeper
the LCS, the more similar the classes::

    dissimilarity(u, v) = height(LCS(u, v)) / height(root)
    similarity(u, v)    = 1 - dissimilarity(u, v)

Two line-oriented source formats are accepted (``#`` starts a comment):

Indented form, two spaces per level, optional ``:level`` suffix::

    ROOT
      E_classical:era
        T_stupa:type

Edge form, one edge per line, optional level on the child::

    ROOT -> E_classical [era]
    E_classical -> T_stupa [type]

A bare ``name [level]`` line in edge form declares a node (useful for the
root or a single-node tree).
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DegenerateTree,
    DuplicateName,
    EmptyInput,
    InvalidLevelOrder,
    LevelNotOnPath,
    MultipleParents,
    MultipleRoots,
    OrphanNode,
    TaxonomyError,
    UnknownNode,
)

#: Canonical level tags, coarse to fine.
LEVELS = ("era", "type", "dynasty", "monument")
_LEVEL_RANK = {name: i for i, name in enumerate(LEVELS)}

_BRACKET_LEVEL = re.compile(r"^(.*?)\s*\[\s*([^\]\s]+)\s*\]$")


@dataclass(frozen=True)
class TaxNode:
    id: str
    name: str
    level: str | None
    parent: str | None
    children: tuple[str, ...]
    height: int
    depth: int

    @property
    def is_leaf(self) -> bool:
        return not self.children


class Taxonomy:
    """Immutable validated class tree.

    Node identifiers are the (unique) node names. ``leaf_ids`` fixes the class
    index order used by every downstream table.
    """

    def __init__(self, nodes: Mapping[str, TaxNode], root_id: str, leaf_ids: Sequence[str]):
        self._nodes = dict(nodes)
        self.root_id = root_id
        self.leaf_ids = tuple(leaf_ids)
        self._leaf_index = {name: i for i, name in enumerate(self.leaf_ids)}
        self.max_height = self._nodes[root_id].height

    # ------------------------------------------------------------------
    # construction
    @classmethod
    def from_parents(
        cls,
        parents: Mapping[str, str | None],
        levels: Mapping[str, str | None] | None = None,
        order: Sequence[str] | None = None,
    ) -> "Taxonomy":
        """Build and validate a taxonomy from a child -> parent mapping.

        ``order`` gives the file order of nodes (defaults to the mapping's
        iteration order); leaves are listed in that order.
        """
        levels = dict(levels or {})
        order = list(order) if order is not None else list(parents)
        if not order:
            raise EmptyInput("taxonomy has no nodes")
        for name, parent in parents.items():
            if parent is not None and parent not in parents:
                raise OrphanNode(f"parent {parent!r} of {name!r} is not declared", [parent, name])

        roots = [n for n in order if parents[n] is None]
        if len(roots) > 1:
            raise MultipleRoots(f"multiple roots: {', '.join(roots)}", roots)

        children: dict[str, list[str]] = {n: [] for n in order}
        for n in order:
            p = parents[n]
            if p is not None:
                children[p].append(n)

        reachable: list[str] = []
        if roots:
            stack = [roots[0]]
            while stack:
                n = stack.pop()
                reachable.append(n)
                stack.extend(reversed(children[n]))
        if len(reachable) != len(order):
            seen = set(reachable)
            cyc = _cycle_members([n for n in order if n not in seen], parents)
            raise CycleDetected(f"cycle through {', '.join(cyc)}", cyc)

        root = roots[0]
        depth = {root: 0}
        for n in reachable:  # pre-order: parents precede children
            for c in children[n]:
                depth[c] = depth[n] + 1
        height: dict[str, int] = {}
        for n in reversed(reachable):
            height[n] = 1 + max((height[c] for c in children[n]), default=-1)

        _check_level_order(root, children, levels)

        nodes = {
            n: TaxNode(
                id=n,
                name=n,
                level=levels.get(n),
                parent=parents[n],
                children=tuple(children[n]),
                height=height[n],
                depth=depth[n],
            )
            for n in order
        }
        leaves = [n for n in order if not children[n]]
        return cls(nodes, root, leaves)

    # ------------------------------------------------------------------
    # basic accessors
    @property
    def nodes(self) -> tuple[TaxNode, ...]:
        return tuple(self._nodes.values())

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_ids)

    def __contains__(self, node_id: str) -> bool:
        return node_id in self._nodes

    def __len__(self) -> int:
        return len(self._nodes)

    def __repr__(self) -> str:
        return (
            f"Taxonomy(nodes={len(self)}, leaves={self.n_leaves}, "
            f"max_height={self.max_height})"
        )

    def node(self, node_id: str) -> TaxNode:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id!r}") from None

    def height(self, node_id: str) -> int:
        return self.node(node_id).height

    def leaf_index(self, leaf_id: str) -> int:
        try:
            return self._leaf_index[leaf_id]
        except KeyError:
            raise UnknownNode(f"{leaf_id!r} is not a leaf class") from None

    def ancestors(self, node_id: str) -> list[str]:
        """Path from ``node_id`` (inclusive) up to the root."""
        path = [self.node(node_id).id]
        while (p := self._nodes[path[-1]].parent) is not None:
            path.append(p)
        return path

    def levels(self) -> list[str]:
        """Level tags present in the tree, coarse to fine."""
        tags: dict[str, int] = {}
        for node in self._nodes.values():
            if node.level is not None:
                tags.setdefault(node.level, node.depth)
        return sorted(tags, key=lambda t: (_LEVEL_RANK.get(t, len(LEVELS)), tags[t], t))

    def level_nodes(self, level: str) -> list[str]:
        """Nodes carrying ``level`` in file order."""
        return [n.id for n in self._nodes.values() if n.level == level]

    # ------------------------------------------------------------------
    # similarity
    def lowest_common_subsumer(self, u: str, v: str) -> str:
        """Deepest node that is an ancestor of both ``u`` and ``v``."""
        up = set(self.ancestors(u))
        for w in self.ancestors(v):
            if w in up:
                return w
        raise AssertionError("tree has a single root; unreachable")

    def class_dissimilarity(self, u: str, v: str) -> float:
        if self.max_height == 0:
            raise DegenerateTree("single-node taxonomy: similarity is undefined")
        return self.height(self.lowest_common_subsumer(u, v)) / self.max_height

    def class_similarity(self, u: str, v: str) -> float:
        return 1.0 - self.class_dissimilarity(u, v)

    def similarity_matrix(self, leaves: Sequence[str] | None = None) -> np.ndarray:
        """Pairwise class similarity over ``leaves`` (default: all leaves)."""
        leaves = self.leaf_ids if leaves is None else tuple(leaves)
        if self.max_height == 0:
            raise DegenerateTree("single-node taxonomy: similarity is undefined")
        n = len(leaves)
        sim = np.eye(n)
        for i in range(n):
            for j in range(i):
                sim[i, j] = sim[j, i] = self.class_similarity(leaves[i], leaves[j])
        return sim

    def project_to_level(self, leaf: str, level: str) -> str:
        """Ancestor of ``leaf`` (possibly itself) tagged with ``level``."""
        for w in self.ancestors(leaf):
            if self._nodes[w].level == level:
                return w
        raise LevelNotOnPath(f"no {level!r} node on the path of {leaf!r}")

    def graft(self, parent: str, chain: Sequence[tuple[str, str | None]]) -> "Taxonomy":
        """New taxonomy with a path of ``(name, level)`` nodes hung under ``parent``.

        The last node of ``chain`` becomes a new leaf class, appended after the
        existing leaves.
        """
        self.node(parent)
        parents = {n.id: n.parent for n in self.nodes}
        levels = {n.id: n.level for n in self.nodes}
        order = [n.id for n in self.nodes]
        above = parent
        for name, level in chain:
            if name in parents:
                raise DuplicateName(f"node {name!r} already exists", [name])
            parents[name], levels[name] = above, level
            order.append(name)
            above = name
        return Taxonomy.from_parents(parents, levels, order)

    # ------------------------------------------------------------------
    # serialization
    def to_text(self) -> str:
        """Indented source form; round-trips through :func:`parse_taxonomy`."""
        lines = []
        stack = [self.root_id]
        while stack:
            node = self._nodes[stack.pop()]
            tag = f":{node.level}" if node.level else ""
            lines.append("  " * node.depth + node.name + tag)
            stack.extend(reversed(node.children))
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode("utf-8")).hexdigest()


def _cycle_members(candidates: Iterable[str], parents: Mapping[str, str | None]) -> list[str]:
    """Names on a parent-pointer cycle, sorted, found from ``candidates``."""
    for start in candidates:
        seen: dict[str, int] = {}
        path: list[str] = []
        n: str | None = start
        while n is not None and n not in seen:
            seen[n] = len(path)
            path.append(n)
            n = parents[n]
        if n is not None:
            return sorted(path[seen[n]:])
    return sorted(candidates)


def _check_level_order(root, children, levels) -> None:
    # (node, tags seen above it, rank of the deepest canonical tag above it)
    stack = [(root, frozenset(), -1)]
    while stack:
        n, seen, rank = stack.pop()
        tag = levels.get(n)
        if tag is not None:
            if tag in seen:
                raise InvalidLevelOrder(f"level {tag!r} repeats on the path to {n!r}", [n])
            if tag in _LEVEL_RANK:
                if _LEVEL_RANK[tag] <= rank:
                    raise InvalidLevelOrder(
                        f"level {tag!r} of {n!r} does not descend along its path", [n]
                    )
                rank = _LEVEL_RANK[tag]
            seen = seen | {tag}
        stack.extend((c, seen, rank) for c in children[n])


# ----------------------------------------------------------------------
# parsing
def _strip(line: str) -> str:
    return line.split("#", 1)[0].rstrip()


def _split_level(token: str) -> tuple[str, str | None]:
    token = token.strip()
    m = _BRACKET_LEVEL.match(token)
    if m:
        return m.group(1).strip(), m.group(2)
    if ":" in token:
        name, tag = token.rsplit(":", 1)
        return name.strip(), (tag.strip() or None)
    return token, None


def parse_taxonomy(source_text: str) -> Taxonomy:
    """Parse taxonomy source text in indented or edge form."""
    lines = [(i + 1, _strip(raw)) for i, raw in enumerate(source_text.splitlines())]
    lines = [(no, text) for no, text in lines if text.strip()]
    if not lines:
        raise EmptyInput("taxonomy source is empty")
    if any("->" in text for _, text in lines):
        return _parse_edges(lines)
    return _parse_indented(lines)


def _parse_indented(lines) -> Taxonomy:
    parents: dict[str, str | None] = {}
    levels: dict[str, str | None] = {}
    order: list[str] = []
    stack: list[str] = []  # stack[d] = current node at depth d
    for no, text in lines:
        body = text.lstrip(" ")
        indent = len(text) - len(body)
        if "\t" in text[:indent + 1] or indent % 2:
            raise TaxonomyError("indentation must be a multiple of two spaces", line=no)
        depth = indent // 2
        name, tag = _split_level(body)
        if not name:
            raise TaxonomyError("empty node name", line=no)
        if name in parents:
            raise DuplicateName(f"duplicate node name {name!r}", [name], line=no)
        if depth == 0 and stack:
            raise MultipleRoots(f"second root {name!r} (first was {stack[0]!r})", [stack[0], name], line=no)
        if depth > len(stack):
            raise OrphanNode(f"{name!r} is indented past any parent", [name], line=no)
        del stack[depth:]
        parents[name] = stack[-1] if stack else None
        levels[name] = tag
        order.append(name)
        stack.append(name)
    return Taxonomy.from_parents(parents, levels, order)


def _parse_edges(lines) -> Taxonomy:
    parents: dict[str, str | None] = {}
    levels: dict[str, str | None] = {}
    order: list[str] = []

    def declare(name, tag, no):
        if name not in parents:
            parents[name] = None
            order.append(name)
        if tag is not None:
            if levels.get(name) not in (None, tag):
                raise TaxonomyError(f"conflicting levels for {name!r}", [name], line=no)
            levels[name] = tag

    has_parent: set[str] = set()
    edges: set[tuple[str, str]] = set()
    for no, text in lines:
        if "->" not in text:
            name, tag = _split_level(text)
            declare(name, tag, no)
            continue
        left, right = text.split("->", 1)
        parent, ptag = _split_level(left)
        child, ctag = _split_level(right)
        if not parent or not child:
            raise TaxonomyError("edge needs a parent and a child", line=no)
        if (parent, child) in edges:
            raise DuplicateName(f"duplicate edge {parent} -> {child}", [parent, child], line=no)
        if child in has_parent:
            raise MultipleParents(
                f"{child!r} has parents {parents[child]!r} and {parent!r}; a tree is required",
                [child, parents[child], parent],
                line=no,
            )
        edges.add((parent, child))
        declare(parent, ptag, no)
        declare(child, ctag, no)
        parents[child] = parent
        has_parent.add(child)
    return Taxonomy.from_parents(parents, levels, order)


# ----------------------------------------------------------------------
# generators
def random_taxonomy(
    level_counts: Sequence[int] = (5, 11, 37, 143),
    rng: np.random.Generator | int | None = None,
    level_names: Sequence[str] = LEVELS,
) -> Taxonomy:
    """Random level-tagged tree with ``level_counts[i]`` nodes at depth ``i + 1``.

    Every node of one level gets at least one child at the next, so all leaves
    sit at the same depth. The default mirrors a 5-era / 11-type / 37-dynasty /
    143-monument hierarchy.
    """
    rng = np.random.default_rng(rng)
    counts = list(level_counts)
    if any(b < a for a, b in zip(counts, counts[1:])) or not counts or counts[0] < 1:
        raise ValueError("level counts must be positive and non-decreasing")
    parents: dict[str, str | None] = {"ROOT": None}
    levels: dict[str, str | None] = {"ROOT": None}
    above = ["ROOT"]
    for depth, count in enumerate(counts):
        tag = level_names[depth] if depth < len(level_names) else f"level{depth + 1}"
        # each parent gets one child, the rest are spread at random
        extra = rng.integers(len(above), size=count - len(above)).tolist()
        owner_idx = sorted(list(range(len(above))) + extra)
        names = []
        for k, owner in enumerate(above[i] for i in owner_idx):
            name = f"{tag[0].upper()}{depth + 1}_{k:03d}"
            parents[name] = owner
            levels[name] = tag
            names.append(name)
        above = names
    order = _preorder(parents)
    return Taxonomy.from_parents(parents, levels, order)


def _preorder(parents: Mapping[str, str | None]) -> list[str]:
    children: dict[str, list[str]] = {n: [] for n in parents}
    root = None
    for n, p in parents.items():
        if p is None:
            root = n
        else:
            children[p].append(n)
    out, stack = [], [root]
    while stack:
        n = stack.pop()
        out.append(n)
        stack.extend(reversed(children[n]))
    return out
