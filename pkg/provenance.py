"""Provenance - SHA-256 Merkle tree over mission sections and data files."""

import hashlib
from typing import Dict, List, Optional, Tuple


class MerkleNode:
    """Node in Merkle Tree with hash and optional children."""
    def __init__(self, hash_value: str, left=None, right=None):
        self.hash = hash_value
        self.left = left
        self.right = right


class MerkleTree:
    """Binary hash tree over named leaves; the root digest identifies a mission."""

    def __init__(self, leaves: List[Tuple[str, str]]):
        self.leaves = sorted(leaves)
        self.root = self._build_tree()

    @staticmethod
    def compute_hash(data: str) -> str:
        return hashlib.sha256(data.encode('utf-8')).hexdigest()

    @classmethod
    def leaf_hash(cls, name: str, content: str) -> str:
        return cls.compute_hash(f"{name}:{content}")

    def _build_tree(self) -> Optional[MerkleNode]:
        """Build tree bottom-up; an odd node is paired with itself."""
        if not self.leaves:
            return None
        nodes = [MerkleNode(self.leaf_hash(name, content)) for name, content in self.leaves]
        while len(nodes) > 1:
            next_level = []
            for i in range(0, len(nodes), 2):
                left = nodes[i]
                right = nodes[i + 1] if i + 1 < len(nodes) else left
                next_level.append(MerkleNode(self.compute_hash(left.hash + right.hash), left, right))
            nodes = next_level
        return nodes[0]

    def get_root_hash(self) -> str:
        return self.root.hash if self.root else ""

    def leaf_hashes(self) -> Dict[str, str]:
        return {name: self.leaf_hash(name, content) for name, content in self.leaves}


def section_leaves(sections: Dict[str, Dict[str, str]], data_files: Dict[str, str]) -> List[Tuple[str, str]]:
    """One leaf per section (sorted `key = value` lines) and per referenced data file."""
    leaves = []
    for name, entries in sections.items():
        body = "\n".join(f"{k} = {v}" for k, v in sorted(entries.items()))
        leaves.append((f"section:{name}", body))
    for label, content in data_files.items():
        leaves.append((f"file:{label}", content))
    return leaves


def mission_tree(sections: Dict[str, Dict[str, str]], data_files: Dict[str, str]) -> MerkleTree:
    return MerkleTree(section_leaves(sections, data_files))


def changed_sections(a, b) -> List[str]:
    """Leaf names whose hashes differ or that exist in only one side.

    Either side may be a MerkleTree or a stored {leaf name: hash} mapping.
    """
    left = a.leaf_hashes() if isinstance(a, MerkleTree) else dict(a)
    right = b.leaf_hashes() if isinstance(b, MerkleTree) else dict(b)
    return sorted(name for name in set(left) | set(right) if left.get(name) != right.get(name))
