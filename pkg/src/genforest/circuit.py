"""Probabilistic circuits evaluated in the log domain.

Variables are numbered ``0 .. m-1`` for features and ``m`` for the class.
Queries are passed as a value matrix of shape (n, m + 1) plus a boolean
``missing`` matrix of the same shape; a missing variable is marginalised.

Nodes live in a flat tuple in topological order (children before parents),
so a single forward sweep evaluates the whole circuit.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np

from .data import Schema

NEG_INF = -np.inf
WEIGHT_TOL = 1e-9

_LEAF_TYPES: dict[str, type] = {}


def register_leaf(cls):
    """Class decorator making a leaf density (de)serialisable by name."""
    _LEAF_TYPES[cls.kind] = cls
    return cls


def leaf_from_dict(d: dict):
    try:
        cls = _LEAF_TYPES[d["kind"]]
    except KeyError as exc:
        raise ValueError(f"unknown leaf kind {d.get('kind')!r}") from exc
    return cls.from_dict(d)


# ---------------------------------------------------------------- nodes


@dataclass(frozen=True, eq=False)
class SumNode:
    children: tuple[int, ...]
    weights: tuple[float, ...]
    counts: tuple[int, ...] | None = None
    split: object | None = None  # SplitRule annotation for tree-derived sums

    @classmethod
    def from_counts(cls, children: Sequence[int], counts: Sequence[int], split=None) -> "SumNode":
        counts = tuple(int(c) for c in counts)
        total = sum(counts)
        if total <= 0:
            raise ValueError("sum node needs a positive total count")
        return cls(tuple(children), tuple(c / total for c in counts), counts, split)

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(int(c) for c in self.children))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.children) != len(self.weights) or not self.children:
            raise ValueError("sum node needs one weight per child")
        w = np.asarray(self.weights)
        if (w < 0).any() or abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise ValueError(f"sum weights must be nonnegative and sum to 1, got {self.weights}")

    def exact_weights(self) -> tuple[Fraction, ...]:
        if self.counts is not None:
            total = sum(self.counts)
            return tuple(Fraction(c, total) for c in self.counts)
        return tuple(Fraction(w) for w in self.weights)


@dataclass(frozen=True, eq=False)
class ProductNode:
    children: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "children", tuple(int(c) for c in self.children))
        if not self.children:
            raise ValueError("product node needs children")


INDICATOR_OPS = ("eq", "in", "le", "gt")


@dataclass(frozen=True, eq=False)
class IndicatorNode:
    var: int
    op: str
    value: float | frozenset

    def __post_init__(self):
        if self.op not in INDICATOR_OPS:
            raise ValueError(f"unknown indicator op {self.op!r}")
        if self.op == "in":
            object.__setattr__(self, "value", frozenset(int(v) for v in self.value))
        else:
            object.__setattr__(self, "value", float(self.value))

    def holds(self, col: np.ndarray) -> np.ndarray:
        if self.op == "le":
            return col <= self.value
        if self.op == "gt":
            return col > self.value
        if self.op == "eq":
            return col == self.value
        return np.isin(col, list(self.value))

    def __repr__(self):
        sym = {"eq": "=", "le": "<=", "gt": ">", "in": "∈"}[self.op]
        val = sorted(self.value) if self.op == "in" else self.value
        return f"1{{x{self.var} {sym} {val}}}"


@dataclass(frozen=True, eq=False)
class LeafNode:
    density: object  # anything with .scope, .log_density(values, missing), .to_dict()


CircuitNode = SumNode | ProductNode | IndicatorNode | LeafNode


class Circuit:
    """Immutable rooted DAG of circuit nodes in topological order."""

    def __init__(self, nodes: Sequence[CircuitNode], root: int | None = None, n_vars: int | None = None,
                 schema: Schema | None = None):
        self.nodes = tuple(nodes)
        self.root = len(self.nodes) - 1 if root is None else int(root)
        self.schema = schema
        if n_vars is None:
            if schema is None:
                raise ValueError("need n_vars or a schema")
            n_vars = schema.n_features + 1
        self.n_vars = int(n_vars)
        for i, node in enumerate(self.nodes):
            for ch in getattr(node, "children", ()):
                if not 0 <= ch < i:
                    raise ValueError(f"node {i} has child {ch} that does not precede it")
        self._scopes = None

    def __len__(self):
        return len(self.nodes)

    @property
    def class_var(self) -> int:
        return self.n_vars - 1

    @property
    def scopes(self) -> list[frozenset[int]]:
        if self._scopes is None:
            out = []
            for node in self.nodes:
                if isinstance(node, LeafNode):
                    out.append(frozenset(node.density.scope))
                elif isinstance(node, IndicatorNode):
                    out.append(frozenset((node.var,)))
                else:
                    out.append(frozenset().union(*(out[c] for c in node.children)))
            self._scopes = out
        return self._scopes

    def reachable(self) -> list[int]:
        seen, stack = set(), [self.root]
        while stack:
            i = stack.pop()
            if i in seen:
                continue
            seen.add(i)
            stack.extend(getattr(self.nodes[i], "children", ()))
        return sorted(seen)

    def leaf_nodes(self) -> list[int]:
        return [i for i, nd in enumerate(self.nodes) if isinstance(nd, LeafNode)]


class CircuitBuilder:
    """Append-only helper that hands out node ids in topological order."""

    def __init__(self):
        self.nodes: list[CircuitNode] = []

    def add(self, node: CircuitNode) -> int:
        self.nodes.append(node)
        return len(self.nodes) - 1

    def build(self, root: int, n_vars: int | None = None, schema: Schema | None = None) -> Circuit:
        return Circuit(self.nodes, root, n_vars, schema)


# ---------------------------------------------------------------- queries


def make_query(x, missing=None, y=None, n_vars: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (values, missing) arrays of width m + 1 from features and class.

    ``y=None`` marginalises the class.  ``missing=None`` means all features
    are observed.  Returns 2-D arrays even for a single query.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    n, m = x.shape
    if n_vars is not None and m != n_vars - 1:
        raise ValueError(f"expected {n_vars - 1} features, got {m}")
    values = np.zeros((n, m + 1))
    values[:, :m] = x
    miss = np.zeros((n, m + 1), dtype=bool)
    if missing is not None:
        miss[:, :m] = np.atleast_2d(np.asarray(missing, dtype=bool))
    if y is None:
        miss[:, m] = True
    else:
        values[:, m] = np.broadcast_to(np.asarray(y, dtype=np.float64), (n,))
    return values, miss


def logsumexp_rows(stack: np.ndarray) -> np.ndarray:
    """log Σ_i exp(stack[i]) along axis 0, exact -inf when every term is -inf."""
    top = np.max(stack, axis=0)
    finite = np.isfinite(top)
    safe = np.where(finite, top, 0.0)
    with np.errstate(under="ignore"):
        s = np.sum(np.exp(stack - safe), axis=0)
    with np.errstate(divide="ignore"):
        return np.where(finite, safe + np.log(s), NEG_INF)


# ---------------------------------------------------------------- evaluation


def sum_log_value(node: SumNode, child_vals: Sequence[np.ndarray]) -> np.ndarray:
    """log Σ w_i exp(v_i), computed as log(Σ c_i e_i) - log(Σ c_i).

    ``c_i`` are the integer routing counts when present (else the weights),
    so a sum whose children all equal log 1 returns exactly 0.
    """
    coef = node.counts if node.counts is not None else node.weights
    pairs = [(float(c), v) for c, v in zip(coef, child_vals) if c > 0]
    stack = np.vstack([v for _, v in pairs])
    top = np.max(stack, axis=0)
    finite = np.isfinite(top)
    safe = np.where(finite, top, 0.0)
    acc = np.zeros(stack.shape[1])
    den = 0.0
    with np.errstate(under="ignore"):
        for c, v in pairs:
            acc = acc + c * np.exp(v - safe)
            den = den + c
    with np.errstate(divide="ignore"):
        return np.where(finite, safe + (np.log(acc) - math.log(den)), NEG_INF)


def node_log_values(c: Circuit, values: np.ndarray, missing: np.ndarray,
                    only_reachable: bool = True) -> list[np.ndarray | None]:
    """Log value of every node for a batch of queries (single forward sweep)."""
    values = np.atleast_2d(values)
    missing = np.atleast_2d(missing)
    n = values.shape[0]
    active = set(c.reachable()) if only_reachable else None
    out: list[np.ndarray | None] = [None] * len(c.nodes)
    for i, node in enumerate(c.nodes):
        if active is not None and i not in active:
            continue
        if isinstance(node, LeafNode):
            out[i] = np.asarray(node.density.log_density(values, missing), dtype=np.float64)
        elif isinstance(node, IndicatorNode):
            col = values[:, node.var]
            miss = missing[:, node.var]
            out[i] = np.where(miss | node.holds(col), 0.0, NEG_INF)
        elif isinstance(node, ProductNode):
            acc = np.zeros(n)
            for ch in node.children:
                acc = acc + out[ch]
            out[i] = acc
        else:
            out[i] = sum_log_value(node, [out[ch] for ch in node.children])
    return out


def log_eval(c: Circuit, values: np.ndarray, missing: np.ndarray) -> np.ndarray:
    return node_log_values(c, values, missing)[c.root]


def evaluate(c: Circuit, x, y) -> np.ndarray | float:
    """Log density of complete instance(s) ``x`` with class ``y``."""
    single = np.ndim(x) == 1
    values, missing = make_query(x, None, y, c.n_vars)
    out = log_eval(c, values, missing)
    return float(out[0]) if single else out


def marginal(c: Circuit, x, missing=None, y=None) -> np.ndarray | float:
    """Log marginal density of the observed part of ``x`` (and ``y`` unless None)."""
    single = np.ndim(x) == 1
    values, miss = make_query(x, missing, y, c.n_vars)
    out = log_eval(c, values, miss)
    return float(out[0]) if single else out


def _leaf_class_split(density, values, missing, class_var, n_classes):
    if hasattr(density, "class_split"):
        return density.class_split(values, missing)
    vals = values.copy()
    miss = missing.copy()
    miss[:, class_var] = False
    cols = []
    for k in range(n_classes):
        vals[:, class_var] = k
        cols.append(np.asarray(density.log_density(vals, miss), dtype=np.float64))
    joint = np.stack(cols, axis=1)
    s = logsumexp_rows(joint.T)
    with np.errstate(invalid="ignore"):
        q = np.exp(joint - np.where(np.isfinite(s), s, 0.0)[:, None])
    return s, q


def class_conditional(c: Circuit, values: np.ndarray, missing: np.ndarray,
                      n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass carrying ``(log p(x_o), p(y | x_o))`` instead of per-class joints.

    Each node's joint over the class is stored as ``exp(s) * q(y)`` with
    ``q`` normalised (or ``None`` when the class is outside the node's
    scope).  Sums mix the ``q`` vectors with their posterior child weights,
    so a query routed to a single leaf returns that leaf's class vector
    exactly.  The class column of ``values`` is ignored.
    """
    values = np.atleast_2d(values)
    missing = np.array(np.atleast_2d(missing), copy=True)
    cv = c.class_var
    missing[:, cv] = True
    n = values.shape[0]
    scopes = c.scopes
    active = set(c.reachable())
    S: list = [None] * len(c.nodes)
    Q: list = [None] * len(c.nodes)
    for i, node in enumerate(c.nodes):
        if i not in active:
            continue
        if isinstance(node, LeafNode):
            if cv in scopes[i]:
                S[i], Q[i] = _leaf_class_split(node.density, values, missing, cv, n_classes)
            else:
                S[i] = np.asarray(node.density.log_density(values, missing), dtype=np.float64)
        elif isinstance(node, IndicatorNode):
            if node.var == cv:
                raise ValueError("class indicators are not supported in class_conditional")
            col = values[:, node.var]
            S[i] = np.where(missing[:, node.var] | node.holds(col), 0.0, NEG_INF)
        elif isinstance(node, ProductNode):
            s = np.zeros(n)
            q = None
            for ch in node.children:
                s = s + S[ch]
                if Q[ch] is not None:
                    q = Q[ch] if q is None else q * Q[ch]
            if q is not None and sum(Q[ch] is not None for ch in node.children) > 1:
                z = q.sum(axis=1)
                with np.errstate(divide="ignore", invalid="ignore"):
                    s = s + np.log(z)
                    q = q / z[:, None]
            S[i], Q[i] = s, q
        else:
            kids = [(ch, w) for ch, w in zip(node.children, node.weights) if w > 0]
            logs = np.vstack([S[ch] + np.log(w) for ch, w in kids])
            s = logsumexp_rows(logs)
            S[i] = s
            if any(Q[ch] is not None for ch, _ in kids):
                with np.errstate(invalid="ignore", under="ignore"):
                    r = np.exp(logs - np.where(np.isfinite(s), s, 0.0)[None, :])
                q = np.zeros((n, n_classes))
                for (ch, _), rc in zip(kids, r):
                    qc = Q[ch]
                    term = rc[:, None] * qc
                    q = q + np.where(rc[:, None] > 0, term, 0.0)
                Q[i] = q
    q = Q[c.root]
    if q is None:
        q = np.full((n, n_classes), 1.0 / n_classes)
    return S[c.root], q


def evaluate_lazy(c: Circuit, values: np.ndarray, missing: np.ndarray) -> tuple[float, int]:
    """Top-down evaluation of one query that skips a product's remaining
    children once an indicator child is zero.

    Returns ``(log value, number of leaf nodes evaluated)``.
    """
    values = np.atleast_2d(values)
    missing = np.atleast_2d(missing)
    memo: dict[int, float] = {}
    touched = 0

    def visit(i: int) -> float:
        nonlocal touched
        if i in memo:
            return memo[i]
        node = c.nodes[i]
        if isinstance(node, LeafNode):
            touched += 1
            v = float(node.density.log_density(values, missing)[0])
        elif isinstance(node, IndicatorNode):
            ok = missing[0, node.var] or bool(node.holds(values[0, node.var]))
            v = 0.0 if ok else NEG_INF
        elif isinstance(node, ProductNode):
            kids = sorted(node.children, key=lambda ch: not isinstance(c.nodes[ch], IndicatorNode))
            v = 0.0
            for ch in kids:
                v += visit(ch)
                if v == NEG_INF:
                    break
        else:
            coef = node.counts if node.counts is not None else node.weights
            vals = [np.array([visit(ch)]) if c > 0 else np.zeros(1) for ch, c in zip(node.children, coef)]
            v = float(sum_log_value(node, vals)[0])
        memo[i] = v
        return v

    return visit(c.root), touched


def marginal_exact(c: Circuit, values: np.ndarray, missing: np.ndarray) -> Fraction:
    """Linear-domain evaluation of one query in rational arithmetic.

    Every reachable leaf density must provide ``exact_density``.
    """
    values = np.atleast_2d(values)
    missing = np.atleast_2d(missing)
    memo: dict[int, Fraction] = {}
    for i in c.reachable():
        node = c.nodes[i]
        if isinstance(node, LeafNode):
            memo[i] = node.density.exact_density(values[0], missing[0])
        elif isinstance(node, IndicatorNode):
            ok = missing[0, node.var] or bool(node.holds(values[0, node.var]))
            memo[i] = Fraction(int(ok))
        elif isinstance(node, ProductNode):
            acc = Fraction(1)
            for ch in node.children:
                acc *= memo[ch]
            memo[i] = acc
        else:
            memo[i] = sum((w * memo[ch] for ch, w in zip(node.children, node.exact_weights())), Fraction(0))
    return memo[c.root]


# ---------------------------------------------------------------- structure checks


def check_smooth(c: Circuit) -> bool:
    scopes = c.scopes
    for i in c.reachable():
        node = c.nodes[i]
        if isinstance(node, SumNode):
            first = scopes[node.children[0]]
            if any(scopes[ch] != first for ch in node.children[1:]):
                return False
    return True


def check_decomposable(c: Circuit) -> bool:
    scopes = c.scopes
    for i in c.reachable():
        node = c.nodes[i]
        if isinstance(node, ProductNode):
            seen: set[int] = set()
            for ch in node.children:
                if seen & scopes[ch]:
                    return False
                seen |= scopes[ch]
    return True


def check_deterministic(c: Circuit, samples: np.ndarray) -> bool:
    """True iff on every complete sample each sum has at most one nonzero child.

    ``samples`` has shape (n, m + 1) with the class in the last column.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        return True
    samples = np.atleast_2d(samples)
    vals = node_log_values(c, samples, np.zeros(samples.shape, dtype=bool))
    for i in c.reachable():
        node = c.nodes[i]
        if isinstance(node, SumNode) and len(node.children) > 1:
            nonzero = sum((vals[ch] > NEG_INF).astype(np.int64) for ch in node.children)
            if (nonzero > 1).any():
                return False
    return True


def count_determinism_violations(c: Circuit, samples: np.ndarray) -> int:
    """Number of (sample, sum node) pairs with more than one nonzero child."""
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    vals = node_log_values(c, samples, np.zeros(samples.shape, dtype=bool))
    bad = 0
    for i in c.reachable():
        node = c.nodes[i]
        if isinstance(node, SumNode) and len(node.children) > 1:
            nonzero = sum((vals[ch] > NEG_INF).astype(np.int64) for ch in node.children)
            bad += int((nonzero > 1).sum())
    return bad


# ---------------------------------------------------------------- indicator pull-up


class NotATreeCircuit(ValueError):
    pass


def split_indicators(rule, cardinality: int) -> tuple[IndicatorNode, IndicatorNode]:
    """Indicators selecting the left / right side of a tree split."""
    j = rule.feature
    if rule.threshold is not None:
        return IndicatorNode(j, "le", rule.threshold), IndicatorNode(j, "gt", rule.threshold)
    left = frozenset(rule.left_set)
    right = frozenset(range(cardinality)) - left

    def ind(s):
        return IndicatorNode(j, "eq", next(iter(s))) if len(s) == 1 else IndicatorNode(j, "in", s)

    return ind(left), ind(right)


def compile_pullup(c: Circuit) -> Circuit:
    """Move each tree decision next to its sum node as an indicator.

    The input must be a tree of binary sums annotated with their split rule
    and leaf densities at the bottom.  Every sum child ``u`` becomes
    ``Product(indicator, u')``; leaves are replaced by ``density.pulled_up()``
    when they offer it (factors already fixed by the path are dropped).
    """
    if c.schema is None:
        raise NotATreeCircuit("pull-up needs the circuit's schema")
    card = c.schema.cardinalities
    b = CircuitBuilder()
    parents = {}
    for i in c.reachable():
        for ch in getattr(c.nodes[i], "children", ()):
            if ch in parents:
                raise NotATreeCircuit("circuit is not tree-shaped")
            parents[ch] = i

    def build(i: int) -> int:
        node = c.nodes[i]
        if isinstance(node, LeafNode):
            dens = node.density
            reduced = dens.pulled_up() if hasattr(dens, "pulled_up") else dens
            return b.add(LeafNode(reduced))
        if not isinstance(node, SumNode) or node.split is None or len(node.children) != 2:
            raise NotATreeCircuit(f"node {i} is not an annotated binary sum")
        left_ind, right_ind = split_indicators(node.split, int(card[node.split.feature]))
        kids = []
        for ch, ind in zip(node.children, (left_ind, right_ind)):
            sub = build(ch)
            kids.append(b.add(ProductNode((b.add(ind), sub))))
        return b.add(SumNode(tuple(kids), node.weights, node.counts, node.split))

    root = build(c.root)
    return b.build(root, c.n_vars, c.schema)


# ---------------------------------------------------------------- (de)serialisation


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def circuit_to_dict(c: Circuit) -> dict:
    nodes = []
    for node in c.nodes:
        if isinstance(node, SumNode):
            entry = {"type": "sum", "children": list(node.children)}
            if node.counts is not None:
                entry["counts"] = list(node.counts)
                entry["weights"] = [str(w) for w in node.exact_weights()]
            else:
                entry["weights"] = [_fmt(w) for w in node.weights]
            if node.split is not None:
                entry["split"] = node.split.to_dict()
        elif isinstance(node, ProductNode):
            entry = {"type": "product", "children": list(node.children)}
        elif isinstance(node, IndicatorNode):
            val = sorted(node.value) if node.op == "in" else _fmt(node.value)
            entry = {"type": "indicator", "var": node.var, "op": node.op, "value": val}
        else:
            entry = {"type": "leaf", "density": node.density.to_dict()}
        nodes.append(entry)
    out = {"n_vars": c.n_vars, "root": c.root, "nodes": nodes}
    if c.schema is not None:
        out["schema"] = c.schema.to_dict()
    return out


def circuit_from_dict(d: dict, schema: Schema | None = None) -> Circuit:
    from .forest import SplitRule

    if schema is None and "schema" in d:
        schema = Schema.from_dict(d["schema"])
    nodes: list[CircuitNode] = []
    for e in d["nodes"]:
        t = e["type"]
        if t == "sum":
            split = SplitRule.from_dict(e["split"]) if "split" in e else None
            if "counts" in e:
                nodes.append(SumNode.from_counts(e["children"], e["counts"], split))
            else:
                nodes.append(SumNode(tuple(e["children"]), tuple(float(w) for w in e["weights"]), None, split))
        elif t == "product":
            nodes.append(ProductNode(tuple(e["children"])))
        elif t == "indicator":
            val = frozenset(e["value"]) if e["op"] == "in" else float(e["value"])
            nodes.append(IndicatorNode(int(e["var"]), e["op"], val))
        elif t == "leaf":
            nodes.append(LeafNode(leaf_from_dict(e["density"])))
        else:
            raise ValueError(f"unknown node type {t!r}")
    return Circuit(nodes, int(d["root"]), int(d["n_vars"]), schema)


def map_leaves(c: Circuit, fn: Callable) -> Circuit:
    """Copy of ``c`` with every leaf density replaced by ``fn(density)``."""
    nodes = [LeafNode(fn(nd.density)) if isinstance(nd, LeafNode) else nd for nd in c.nodes]
    return Circuit(nodes, c.root, c.n_vars, c.schema)


def enumerate_states(cards: Iterable[int]) -> np.ndarray:
    """All joint states of discrete variables as rows (for brute-force oracles)."""
    grids = np.meshgrid(*[np.arange(k) for k in cards], indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1).astype(np.float64)
