"""Search space and cell genotypes, plus the diffable genotype file format."""
import hashlib
import json
from dataclasses import dataclass
from typing import NamedTuple

DEFAULT_OPS = ("identity", "sep_conv_3x3", "sep_conv_5x5", "avg_pool_3x3", "max_pool_3x3")
CELL_TYPES = ("normal", "reduction")
GENOTYPE_FORMAT = "posenas-genotype"


@dataclass(frozen=True)
class SearchSpace:
    nodes_per_cell: int = 5
    ops: tuple = DEFAULT_OPS
    stem_channels: int = 16

    def __post_init__(self):
        if self.nodes_per_cell < 2:
            raise ValueError("nodes_per_cell must be >= 2")
        if not self.ops:
            raise ValueError("op list is empty")
        unknown = set(self.ops) - set(DEFAULT_OPS)
        if unknown:
            raise ValueError(f"unsupported ops {sorted(unknown)}")

    def describe(self):
        return {"nodes_per_cell": self.nodes_per_cell, "ops": list(self.ops),
                "stem_channels": self.stem_channels}


class Node(NamedTuple):
    input_a: int
    op_a: int
    input_b: int
    op_b: int


@dataclass(frozen=True, order=True)
class CellGenotype:
    normal: tuple
    reduction: tuple

    def cell(self, cell_type):
        return self.normal if cell_type == "normal" else self.reduction

    def validate(self, space):
        for ct in CELL_TYPES:
            nodes = self.cell(ct)
            if len(nodes) != space.nodes_per_cell:
                raise ValueError(f"{ct} cell has {len(nodes)} nodes, space expects {space.nodes_per_cell}")
            for k, node in enumerate(nodes):
                for inp in (node.input_a, node.input_b):
                    if not 0 <= inp < k + 2:
                        raise ValueError(f"{ct} node {k}: input {inp} not in [0, {k + 2})")
                for op in (node.op_a, node.op_b):
                    if not 0 <= op < len(space.ops):
                        raise ValueError(f"{ct} node {k}: op id {op} out of range")
        return self

    def is_valid(self, space):
        try:
            self.validate(space)
        except ValueError:
            return False
        return True

    def to_dict(self, space):
        def cell(nodes):
            return [[n.input_a, space.ops[n.op_a], n.input_b, space.ops[n.op_b]] for n in nodes]
        return {"normal": cell(self.normal), "reduction": cell(self.reduction)}

    @classmethod
    def from_dict(cls, d, space):
        def cell(rows):
            return tuple(Node(int(a), space.ops.index(oa), int(b), space.ops.index(ob)) for a, oa, b, ob in rows)
        return cls(cell(d["normal"]), cell(d["reduction"])).validate(space)


def output_nodes(nodes):
    """Indices (0-based among intermediate nodes) not consumed by a later node."""
    used = {i - 2 for n in nodes for i in (n.input_a, n.input_b) if i >= 2}
    return [k for k in range(len(nodes)) if k not in used]


def config_hash(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def genotype_document(genotype, space, seed, config):
    doc = {
        "format": GENOTYPE_FORMAT,
        "version": 1,
        "search_space": space.describe(),
    }
    doc.update(genotype.to_dict(space))
    doc["provenance"] = {"seed": seed, "config_hash": config_hash(config)}
    return doc


def write_genotype(path, genotype, space, seed=0, config=None):
    doc = genotype_document(genotype, space, seed, config or {})
    with open(path, "w", newline="\n") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")


def read_genotype(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != GENOTYPE_FORMAT:
        raise ValueError(f"{path}: not a genotype file")
    sd = doc["search_space"]
    space = SearchSpace(sd["nodes_per_cell"], tuple(sd["ops"]), sd["stem_channels"])
    return CellGenotype.from_dict(doc, space), space, doc["provenance"]
