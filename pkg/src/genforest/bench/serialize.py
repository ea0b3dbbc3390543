"""Versioned JSON documents for forests and generative forests.

Floats are written with 17 significant digits and sum weights as exact
count ratios, so a loaded model reproduces every prediction bit for bit.
Circuit nodes keep their topological order.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..circuit import circuit_from_dict, circuit_to_dict
from ..convert import GeDT, GeF
from ..data import Schema
from ..forest import (
    Cell,
    DecisionTree,
    ForestParams,
    Internal,
    Leaf,
    RandomForest,
    SplitRule,
    Surrogate,
)

FORMAT = "genforest-model"
VERSION = 1


class SerializationError(ValueError):
    pass


class Corrupted(SerializationError):
    pass


class UnsupportedVersion(SerializationError):
    pass


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


# ---------------------------------------------------------------- trees


def _node_to_dict(node) -> dict:
    if node.is_leaf:
        return {"leaf": True, "counts": node.counts.tolist(), "rows": node.rows.tolist(),
                "cell": node.cell.to_dict()}
    return {
        "leaf": False,
        "split": node.split.to_dict(),
        "n": node.n_samples,
        "cell": node.cell.to_dict(),
        "surrogates": [{"rule": s.rule.to_dict(), "agreement": _fmt(s.agreement), "reverse": s.reverse}
                       for s in node.surrogates],
        "left": _node_to_dict(node.left),
        "right": _node_to_dict(node.right),
    }


def _node_from_dict(d: dict):
    if d["leaf"]:
        return Leaf(np.asarray(d["counts"], dtype=np.int64), np.asarray(d["rows"], dtype=np.int64),
                    Cell.from_dict(d["cell"]))
    surr = tuple(Surrogate(SplitRule.from_dict(s["rule"]), float(s["agreement"]), bool(s["reverse"]))
                 for s in d["surrogates"])
    return Internal(SplitRule.from_dict(d["split"]), _node_from_dict(d["left"]), _node_from_dict(d["right"]),
                    int(d["n"]), Cell.from_dict(d["cell"]), surr)


def tree_to_dict(tree: DecisionTree) -> dict:
    return {"n_train": tree.n_train, "seed": tree.seed, "root": _node_to_dict(tree.root)}


def tree_from_dict(d: dict, schema: Schema) -> DecisionTree:
    return DecisionTree(_node_from_dict(d["root"]), schema, int(d["n_train"]), d["seed"])


def forest_to_dict(forest: RandomForest) -> dict:
    return {
        "schema": forest.schema.to_dict(),
        "params": forest.params.to_dict(),
        "seed": forest.seed,
        "class_counts": np.asarray(forest.class_counts).tolist(),
        "trees": [tree_to_dict(t) for t in forest.trees],
    }


def forest_from_dict(d: dict) -> RandomForest:
    schema = Schema.from_dict(d["schema"])
    trees = [tree_from_dict(t, schema) for t in d["trees"]]
    return RandomForest(trees, schema, ForestParams(**d["params"]), d["seed"],
                        np.asarray(d["class_counts"], dtype=np.int64))


# ---------------------------------------------------------------- generative forests


def gef_to_dict(gef: GeF) -> dict:
    schema = gef.gedts[0].circuit.schema
    gedts = []
    for g in gef.gedts:
        c = circuit_to_dict(g.circuit)
        c.pop("schema", None)
        gedts.append({"circuit": c, "class_counts": g.class_counts.tolist(), "leaf_nodes": list(g.leaf_nodes)})
    return {
        "schema": None if schema is None else schema.to_dict(),
        "mode": gef.mode,
        "leaf": gef.leaf,
        "class_counts": gef.class_counts.tolist(),
        "gedts": gedts,
    }


def gef_from_dict(d: dict) -> GeF:
    schema = None if d["schema"] is None else Schema.from_dict(d["schema"])
    gedts = [GeDT(circuit_from_dict(g["circuit"], schema), np.asarray(g["class_counts"], dtype=np.int64), None,
                  tuple(g["leaf_nodes"])) for g in d["gedts"]]
    return GeF(gedts, d["mode"], np.asarray(d["class_counts"], dtype=np.int64), d["leaf"])


# ---------------------------------------------------------------- documents


def dumps(model) -> str:
    if isinstance(model, RandomForest):
        kind, body = "forest", forest_to_dict(model)
    elif isinstance(model, GeF):
        kind, body = "gef", gef_to_dict(model)
    elif isinstance(model, GeDT):
        kind, body = "gef", gef_to_dict(GeF([model]))
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return json.dumps({"format": FORMAT, "version": VERSION, "type": kind, "model": body}, indent=1)


def loads(text: str):
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise Corrupted(f"model document is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise Corrupted("not a genforest model document")
    version = doc.get("version")
    if not isinstance(version, int):
        raise Corrupted("model document has no integer version")
    if version != VERSION:
        raise UnsupportedVersion(f"model version {version} is not supported (expected {VERSION})")
    try:
        if doc["type"] == "forest":
            return forest_from_dict(doc["model"])
        if doc["type"] == "gef":
            return gef_from_dict(doc["model"])
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise Corrupted(f"model document is malformed: {exc!r}") from exc
    raise Corrupted(f"unknown model type {doc['type']!r}")


def save_model(model, path) -> Path:
    path = Path(path)
    path.write_text(dumps(model))
    return path


def load_model(path):
    try:
        text = Path(path).read_text()
    except UnicodeDecodeError as exc:
        raise Corrupted(f"model file is not text: {exc}") from exc
    return loads(text)
