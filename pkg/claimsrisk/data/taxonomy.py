"""
Hierarchical code dictionaries (ICD, ATC, OPS): loading, validation and queries
"""
import logging
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Optional, Tuple, Union

from pydantic import ValidationError

from claimsrisk.data.models import (
    MAX_LEVEL,
    OPS_CHAPTERS,
    ROOT_LEVEL,
    CodeNode,
    CodeSystem,
)
from claimsrisk.errors import TaxonomyError, UnknownCodeError

logger = logging.getLogger(__name__)

HEADER = ["system", "code", "level", "parent", "name"]

Key = Tuple[CodeSystem, str]


def ops_chapter(code: str) -> str:
    """Chapter digit of an OPS key such as 8-98F.1"""
    return code.split("-", 1)[0]


class Taxonomy:
    """
    Immutable, parent-closed set of code nodes.

    Hierarchy comes only from explicit parent links; code strings are never
    parsed for structure.
    """

    def __init__(self, nodes: Iterable[CodeNode] = ()):
        self._nodes: Dict[Key, CodeNode] = {}
        self._children: Dict[Key, List[str]] = defaultdict(list)
        for node in nodes:
            if node.key in self._nodes:
                raise TaxonomyError(f"duplicate {node.system.value} code '{node.code}'")
            self._nodes[node.key] = node
        for node in self._nodes.values():
            if node.parent is None:
                continue
            parent = self._nodes.get((node.system, node.parent))
            if parent is None:
                raise TaxonomyError(f"dangling parent '{node.parent}' of {node.code}")
            if parent.level != node.level - 1:
                raise TaxonomyError(
                    f"level gap: {node.code} (level {node.level}) under "
                    f"{parent.code} (level {parent.level})"
                )
            self._children[parent.key].append(node.code)
        self._chains: Dict[Key, Tuple[CodeNode, ...]] = {}

    def __len__(self) -> int:
        return len(self._nodes)

    def __contains__(self, key: Key) -> bool:
        return (CodeSystem(key[0]), key[1]) in self._nodes

    def __iter__(self) -> Iterator[CodeNode]:
        return iter(self._nodes.values())

    def get(self, system: Union[CodeSystem, str], code: str) -> Optional[CodeNode]:
        return self._nodes.get((CodeSystem(system), code))

    def node(self, system: Union[CodeSystem, str], code: str) -> CodeNode:
        """Look up a node, raising UnknownCodeError if absent"""
        found = self.get(system, code)
        if found is None:
            raise UnknownCodeError(CodeSystem(system).value, code)
        return found

    def ancestors(self, system: Union[CodeSystem, str], code: str) -> List[CodeNode]:
        """Chain from the root down to and including the node, by ascending level"""
        key = (CodeSystem(system), code)
        chain = self._chains.get(key)
        if chain is None:
            node = self.node(*key)
            if node.parent is None:
                chain = (node,)
            else:
                chain = tuple(self.ancestors(node.system, node.parent)) + (node,)
            self._chains[key] = chain
        return list(chain)

    def children(self, system: Union[CodeSystem, str], code: str) -> List[CodeNode]:
        node = self.node(system, code)
        return [self._nodes[(node.system, c)] for c in self._children.get(node.key, [])]

    def descendants(self, system: Union[CodeSystem, str], code: str) -> List[CodeNode]:
        """All nodes below the given one, depth first"""
        found: List[CodeNode] = []
        stack = list(reversed(self.children(system, code)))
        while stack:
            node = stack.pop()
            found.append(node)
            stack.extend(reversed(self.children(node.system, node.code)))
        return found

    def roots(self, system: Optional[CodeSystem] = None) -> List[CodeNode]:
        return [
            n for n in self._nodes.values()
            if n.parent is None and (system is None or n.system == system)
        ]

    def level_counts(self) -> Dict[Tuple[CodeSystem, int], int]:
        """
        Node counts per (system, level), zero-filled over every valid level.

        The full German dictionaries give the counts in
        ``models.REFERENCE_LEVEL_COUNTS`` (e.g. ATC level 5: 6,787;
        ICD level 3: 1,697; OPS level 2: 43).
        """
        counts = {
            (system, level): 0
            for system in CodeSystem
            for level in range(ROOT_LEVEL[system], MAX_LEVEL + 1)
        }
        for node in self._nodes.values():
            counts[(node.system, node.level)] += 1
        return counts


def load_taxonomy(source: Union[str, Path], drop_excluded_ops: bool = False) -> Taxonomy:
    """
    Load and validate a taxonomy TSV file.

    Args:
        source: Path of a UTF-8 TSV with header system, code, level, parent, name
        drop_excluded_ops: Skip OPS rows outside chapters 5, 6 and 8 instead of failing

    Returns:
        Validated Taxonomy
    """
    path = Path(source)
    nodes: Dict[Key, CodeNode] = {}
    lines: Dict[Key, int] = {}
    dropped = 0

    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            row = raw.rstrip("\r\n")
            if lineno == 1:
                if row.split("\t") != HEADER:
                    raise TaxonomyError(f"expected header {'/'.join(HEADER)}", line=1)
                continue
            if not row.strip():
                continue
            fields = row.split("\t")
            if len(fields) != len(HEADER):
                raise TaxonomyError(
                    f"expected {len(HEADER)} columns, got {len(fields)}", line=lineno
                )
            system, code, level, parent, name = fields
            try:
                node = CodeNode(
                    system=system,
                    code=code,
                    level=int(level),
                    parent=parent or None,
                    name=name or None,
                )
            except (ValueError, ValidationError) as e:
                raise TaxonomyError(_first_error(e), line=lineno) from e

            if node.system == CodeSystem.OPS and ops_chapter(node.code) not in OPS_CHAPTERS:
                if drop_excluded_ops:
                    dropped += 1
                    continue
                raise TaxonomyError(
                    f"OPS code '{node.code}' outside chapters {', '.join(OPS_CHAPTERS)}",
                    line=lineno,
                )
            if node.key in nodes:
                raise TaxonomyError(
                    f"duplicate {node.system.value} code '{node.code}'", line=lineno
                )
            nodes[node.key] = node
            lines[node.key] = lineno

    # Parent closure and level continuity
    for key, node in nodes.items():
        if node.parent is None:
            continue
        parent = nodes.get((node.system, node.parent))
        if parent is None:
            raise TaxonomyError(
                f"dangling parent '{node.parent}' of {node.code}", line=lines[key]
            )
        if parent.level != node.level - 1:
            raise TaxonomyError(
                f"level gap: {node.code} (level {node.level}) under "
                f"{parent.code} (level {parent.level})",
                line=lines[key],
            )

    if dropped:
        logger.warning("Dropped %d OPS rows outside chapters %s", dropped, OPS_CHAPTERS)
    logger.info("Loaded taxonomy from %s: %d nodes", path, len(nodes))
    return Taxonomy(nodes.values())


def write_taxonomy(taxonomy: Taxonomy, target: Union[str, Path]) -> None:
    """Write a taxonomy in the TSV format read by load_taxonomy"""
    with open(target, "w", encoding="utf-8") as f:
        f.write("\t".join(HEADER) + "\n")
        for node in taxonomy:
            f.write("\t".join([
                node.system.value,
                node.code,
                str(node.level),
                node.parent or "",
                node.name or "",
            ]) + "\n")


def _first_error(error: Exception) -> str:
    if isinstance(error, ValidationError):
        first = error.errors()[0]
        return f"{'.'.join(str(p) for p in first['loc']) or 'row'}: {first['msg']}"
    return str(error)
