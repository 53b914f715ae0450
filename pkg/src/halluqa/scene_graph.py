"""Per-image attribute-aware scene graphs: build, prune, persist, flatten.

Object nodes come from the detection service, attribute nodes from per-region
VQA queries (color / shape / texture), spatial edges from bounding-box
geometry, and non-spatial edges from pairwise relation VQA. The graph is the
knowledge base the QA stage retrieves from. Coordinates use a top-left
origin with y growing downward, so "above" means a smaller center y.
"""

from __future__ import annotations

import io
import json
import re
from dataclasses import dataclass, replace

from .lexicon import Lexicon, default_lexicon, similarity_ratio
from .prompt_parser import ATTRIBUTE_RELATIONS, RELATION_ATTRIBUTE_KINDS, Triple

GRAPH_SCHEMA_VERSION = 1

NODE_KINDS = ("object", "attribute")
EDGE_KINDS = ("attribute_binding", "spatial", "nonspatial")
# attribute classes queried from the VQA service; "other" appears only in
# synthetic identity graphs carrying prompt adjectives outside those classes
ATTRIBUTE_NODE_KINDS = ("color", "shape", "texture", "other")

VQA_UNKNOWN_MARKERS = frozenset({"", "unknown", "none", "nothing", "no", "n/a", "no relation"})


class DecodeError(ValueError):
    """Image bytes could not be decoded."""


class SchemaError(ValueError):
    """Graph JSON does not match the schema; `pointer` is a JSON pointer path."""

    def __init__(self, pointer: str, message: str = ""):
        self.pointer = pointer
        super().__init__(f"{pointer}: {message}" if message else pointer)


@dataclass(frozen=True)
class GraphConfig:
    confidence_min: float = 0.35
    dup_threshold: float = 0.8
    max_pair_frac: float = 0.9
    near_frac: float = 0.3
    contact_frac: float = 0.1
    overlap_frac: float = 0.5
    # absolute pixels; when None, resolved as 0.02 * image width
    center_epsilon_px: float | None = None

    def epsilon(self, image_w: float) -> float:
        return self.center_epsilon_px if self.center_epsilon_px is not None else 0.02 * image_w


@dataclass(frozen=True)
class BoundingBox:
    x: float
    y: float
    w: float
    h: float
    image_w: float
    image_h: float

    def __post_init__(self):
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError("image dimensions must be positive")
        if self.w <= 0 or self.h <= 0:
            raise ValueError("box width/height must be positive")
        x = min(max(self.x, 0.0), self.image_w)
        y = min(max(self.y, 0.0), self.image_h)
        w = min(self.w, self.image_w - x)
        h = min(self.h, self.image_h - y)
        if w <= 0 or h <= 0:
            raise ValueError("box lies outside the image")
        for name, val in (("x", x), ("y", y), ("w", w), ("h", h)):
            object.__setattr__(self, name, float(val))
        object.__setattr__(self, "image_w", float(self.image_w))
        object.__setattr__(self, "image_h", float(self.image_h))

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    def diagonal(self) -> float:
        return (self.image_w**2 + self.image_h**2) ** 0.5


def center_distance(a: BoundingBox, b: BoundingBox) -> float:
    (ax, ay), (bx, by) = a.center(), b.center()
    return ((ax - bx) ** 2 + (ay - by) ** 2) ** 0.5


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: str  # object | attribute
    label: str
    attribute_kind: str | None = None
    bbox: BoundingBox | None = None
    confidence: float = 1.0
    same_group: str | None = None  # duplicate-detection group id, set by prune_edges

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ValueError(f"bad node kind {self.kind!r}")
        if not self.label:
            raise ValueError("node label must be non-empty")
        if not (0.0 <= self.confidence <= 1.0):
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.kind == "object":
            if self.bbox is None:
                raise ValueError(f"object node {self.node_id} needs a bbox")
            if self.attribute_kind is not None:
                raise ValueError("object nodes carry no attribute_kind")
        else:
            if self.attribute_kind not in ATTRIBUTE_NODE_KINDS:
                raise ValueError(f"bad attribute kind {self.attribute_kind!r}")
            if self.bbox is not None:
                raise ValueError("attribute nodes carry no bbox")


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    label: str
    kind: str  # attribute_binding | spatial | nonspatial

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise ValueError(f"bad edge kind {self.kind!r}")
        if self.src == self.dst:
            raise ValueError("self-loop edge")
        if not self.label:
            raise ValueError("edge label must be non-empty")


@dataclass(frozen=True)
class SceneGraph:
    image_id: str
    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    def __post_init__(self):
        nodes = tuple(sorted(self.nodes, key=lambda n: n.node_id))
        edges = tuple(sorted(self.edges, key=lambda e: (e.kind, e.src, e.dst, e.label)))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", edges)
        by_id = {}
        for n in nodes:
            if n.node_id in by_id:
                raise ValueError(f"duplicate node id {n.node_id}")
            by_id[n.node_id] = n
        for e in edges:
            if e.src not in by_id or e.dst not in by_id:
                raise ValueError(f"edge endpoint missing: {e}")
            src, dst = by_id[e.src], by_id[e.dst]
            if e.kind == "attribute_binding":
                if src.kind != "object" or dst.kind != "attribute":
                    raise ValueError(f"binding edge must go object->attribute: {e}")
            else:
                if src.kind != "object" or dst.kind != "object":
                    raise ValueError(f"relation edge must go object->object: {e}")

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def object_nodes(self) -> tuple[Node, ...]:
        return tuple(n for n in self.nodes if n.kind == "object")


def infer_spatial_relation(a: BoundingBox, b: BoundingBox, cfg: GraphConfig) -> str | None:
    """Spatial label describing a relative to b, or None when neither axis wins.

    Lateral axis wins ties; "above" upgrades to "on the top of" when the boxes
    are in vertical contact and overlap horizontally.
    """
    if (a.image_w, a.image_h) != (b.image_w, b.image_h):
        raise ValueError("boxes from different image dimensions")
    eps = cfg.epsilon(a.image_w)
    (acx, acy), (bcx, bcy) = a.center(), b.center()
    dx, dy = bcx - acx, bcy - acy
    if abs(dx) >= abs(dy):
        if dx > eps:
            return "to the left of"
        if dx < -eps:
            return "to the right of"
    else:
        if dy > eps:
            gap = b.y - a.y2
            overlap = min(a.x2, b.x2) - max(a.x, b.x)
            frac = overlap / min(a.w, b.w) if overlap > 0 else 0.0
            if gap <= cfg.contact_frac * b.h and frac >= cfg.overlap_frac:
                return "on the top of"
            return "above"
        if dy < -eps:
            return "below"
    if center_distance(a, b) < cfg.near_frac * a.diagonal():
        return "next to"
    return None


def prune_edges(g: SceneGraph, cfg: GraphConfig) -> SceneGraph:
    """Collapse duplicate detections and drop long-range relation noise.

    Object pairs whose labels are near-identical (normalized Levenshtein
    similarity >= dup_threshold) are tagged with a shared same_group id and
    their inter-pair relation edges removed; relation edges spanning more
    than max_pair_frac of the image diagonal are dropped. Idempotent.
    """
    objs = [n for n in g.nodes if n.kind == "object"]
    parent = {n.node_id: n.node_id for n in objs}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for i, a in enumerate(objs):
        for b in objs[i + 1 :]:
            if similarity_ratio(a.label, b.label) >= cfg.dup_threshold:
                ra, rb = find(a.node_id), find(b.node_id)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)

    members: dict[str, list[str]] = {}
    for n in objs:
        members.setdefault(find(n.node_id), []).append(n.node_id)
    group_of = {
        nid: root for root, ids in members.items() if len(ids) > 1 for nid in ids
    }

    new_nodes = tuple(
        replace(n, same_group=group_of.get(n.node_id)) if n.kind == "object" else n
        for n in g.nodes
    )
    boxes = {n.node_id: n.bbox for n in objs}
    kept = []
    for e in g.edges:
        if e.kind != "attribute_binding":
            ga, gb = group_of.get(e.src), group_of.get(e.dst)
            if ga is not None and ga == gb:
                continue
            ba, bb = boxes[e.src], boxes[e.dst]
            if center_distance(ba, bb) > cfg.max_pair_frac * ba.diagonal():
                continue
        kept.append(e)
    return SceneGraph(image_id=g.image_id, nodes=new_nodes, edges=tuple(kept))


def triples_of_graph(g: SceneGraph) -> list[Triple]:
    """Flatten the graph into triples: existence, bindings, then relations."""
    prov = f"image:{g.image_id}"
    by_id = {n.node_id: n for n in g.nodes}
    out = [
        Triple(n.label, "exists", "true", "existence", prov) for n in g.object_nodes()
    ]
    for e in g.edges:
        if e.kind == "attribute_binding":
            out.append(Triple(by_id[e.src].label, e.label, by_id[e.dst].label,
                              "attribute_binding", prov))
    for e in g.edges:
        if e.kind != "attribute_binding":
            out.append(Triple(by_id[e.src].label, e.label, by_id[e.dst].label, e.kind, prov))
    return out


# ---------------------------------------------------------------------------
# persistence: canonical JSON, byte-stable across save/load cycles
# ---------------------------------------------------------------------------

def _bbox_to_dict(b: BoundingBox | None) -> dict | None:
    if b is None:
        return None
    return {"x": b.x, "y": b.y, "w": b.w, "h": b.h,
            "image_w": b.image_w, "image_h": b.image_h}


def save_graph(g: SceneGraph) -> bytes:
    doc = {
        "schema_version": GRAPH_SCHEMA_VERSION,
        "image_id": g.image_id,
        "nodes": [
            {
                "node_id": n.node_id,
                "kind": n.kind,
                "label": n.label,
                "attribute_kind": n.attribute_kind,
                "bbox": _bbox_to_dict(n.bbox),
                "confidence": n.confidence,
                "same_group": n.same_group,
            }
            for n in g.nodes
        ],
        "edges": [
            {"src": e.src, "dst": e.dst, "label": e.label, "kind": e.kind}
            for e in g.edges
        ],
    }
    return (json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False) + "\n").encode("utf-8")


def _require(d: dict, key: str, pointer: str):
    if key not in d:
        raise SchemaError(f"{pointer}/{key}", "missing")
    return d[key]


def load_graph(data: bytes) -> SceneGraph:
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise SchemaError("/", f"not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SchemaError("/", "top level must be an object")
    version = _require(doc, "schema_version", "")
    if version != GRAPH_SCHEMA_VERSION:
        raise SchemaError("/schema_version", f"unsupported version {version!r}")
    image_id = _require(doc, "image_id", "")
    raw_nodes = _require(doc, "nodes", "")
    raw_edges = _require(doc, "edges", "")
    if not isinstance(raw_nodes, list):
        raise SchemaError("/nodes", "must be a list")
    if not isinstance(raw_edges, list):
        raise SchemaError("/edges", "must be a list")

    nodes = []
    for i, nd in enumerate(raw_nodes):
        ptr = f"/nodes/{i}"
        if not isinstance(nd, dict):
            raise SchemaError(ptr, "must be an object")
        bbox_d = nd.get("bbox")
        bbox = None
        if bbox_d is not None:
            if not isinstance(bbox_d, dict):
                raise SchemaError(f"{ptr}/bbox", "must be an object")
            try:
                bbox = BoundingBox(
                    _require(bbox_d, "x", f"{ptr}/bbox"),
                    _require(bbox_d, "y", f"{ptr}/bbox"),
                    _require(bbox_d, "w", f"{ptr}/bbox"),
                    _require(bbox_d, "h", f"{ptr}/bbox"),
                    _require(bbox_d, "image_w", f"{ptr}/bbox"),
                    _require(bbox_d, "image_h", f"{ptr}/bbox"),
                )
            except ValueError as e:
                raise SchemaError(f"{ptr}/bbox", str(e)) from None
        try:
            nodes.append(
                Node(
                    node_id=_require(nd, "node_id", ptr),
                    kind=_require(nd, "kind", ptr),
                    label=_require(nd, "label", ptr),
                    attribute_kind=nd.get("attribute_kind"),
                    bbox=bbox,
                    confidence=nd.get("confidence", 1.0),
                    same_group=nd.get("same_group"),
                )
            )
        except ValueError as e:
            raise SchemaError(ptr, str(e)) from None
    edges = []
    for i, ed in enumerate(raw_edges):
        ptr = f"/edges/{i}"
        if not isinstance(ed, dict):
            raise SchemaError(ptr, "must be an object")
        try:
            edges.append(
                Edge(
                    src=_require(ed, "src", ptr),
                    dst=_require(ed, "dst", ptr),
                    label=_require(ed, "label", ptr),
                    kind=_require(ed, "kind", ptr),
                )
            )
        except ValueError as e:
            raise SchemaError(ptr, str(e)) from None
    try:
        return SceneGraph(image_id=image_id, nodes=tuple(nodes), edges=tuple(edges))
    except ValueError as e:
        raise SchemaError("/", str(e)) from None


# ---------------------------------------------------------------------------
# construction from model services
# ---------------------------------------------------------------------------

_SLUG_RE = re.compile(r"[^a-z0-9]+")


def attribute_node_id(obj_id: str, attr_kind: str, value: str) -> str:
    return f"{obj_id}/{attr_kind}/{_SLUG_RE.sub('-', value.lower()).strip('-') or 'x'}"


def image_dimensions(image_bytes: bytes) -> tuple[int, int]:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(image_bytes)) as im:
            return im.size
    except (UnidentifiedImageError, OSError, ValueError) as e:
        raise DecodeError(f"cannot decode image: {e}") from None


def _lemmatize_label(label: str, lex: Lexicon) -> str:
    words = label.lower().split()
    if not words:
        return label.lower()
    words[-1] = lex.lemmatize(words[-1])
    return " ".join(words)


def clean_vqa_answer(text: str, attr_kind: str | None, lex: Lexicon) -> str:
    """Normalize a raw VQA reply; picks the lexicon word of the asked class
    when one is present, otherwise returns the cleaned phrase verbatim."""
    cleaned = " ".join(text.lower().replace(".", " ").split())
    words = [w for w in cleaned.split() if w not in ("a", "an", "the", "it", "is")]
    cleaned = " ".join(words)
    if attr_kind in ("color", "shape", "texture"):
        for w in words:
            if lex.attribute_kind(w) == attr_kind:
                return w
    return cleaned


def build_graph(
    image_id: str,
    image_bytes: bytes,
    vocab: list[str],
    detector,
    vqa,
    cfg: GraphConfig,
    lexicon: Lexicon | None = None,
) -> SceneGraph:
    """Detect objects, query per-region attributes and pairwise relations,
    then prune. Raises DecodeError on bad image bytes; client errors
    propagate so the caller can isolate the image."""
    lex = lexicon or default_lexicon()
    img_w, img_h = image_dimensions(image_bytes)
    vocabulary = sorted({_lemmatize_label(v, lex) for v in vocab if v.strip()})

    detections = detector.detect(image_bytes, vocabulary)
    nodes: list[Node] = []
    edges: list[Edge] = []
    for det in detections:
        if det.confidence < cfg.confidence_min:
            continue
        x, y, w, h = det.box
        try:
            bbox = BoundingBox(x, y, w, h, img_w, img_h)
        except ValueError:
            continue
        nodes.append(
            Node(
                node_id=f"obj{len(nodes):03d}",
                kind="object",
                label=_lemmatize_label(det.label, lex),
                bbox=bbox,
                confidence=float(det.confidence),
            )
        )

    for node in list(nodes):
        box = [node.bbox.x, node.bbox.y, node.bbox.w, node.bbox.h]
        for attr_kind in ("color", "shape", "texture"):
            question = f"What is the {attr_kind} of the {node.label}?"
            answer = vqa.ask(image_bytes, [box], question)
            value = clean_vqa_answer(answer, attr_kind, lex)
            if value in VQA_UNKNOWN_MARKERS:
                continue
            attr_id = attribute_node_id(node.node_id, attr_kind, value)
            nodes.append(Node(node_id=attr_id, kind="attribute", label=value,
                              attribute_kind=attr_kind))
            edges.append(Edge(src=node.node_id, dst=attr_id,
                              label=ATTRIBUTE_RELATIONS[attr_kind], kind="attribute_binding"))

    objects = [n for n in nodes if n.kind == "object"]
    for i, a in enumerate(objects):
        for b in objects[i + 1 :]:
            if center_distance(a.bbox, b.bbox) > cfg.max_pair_frac * a.bbox.diagonal():
                continue
            spatial = infer_spatial_relation(a.bbox, b.bbox, cfg)
            if spatial is not None:
                edges.append(Edge(src=a.node_id, dst=b.node_id, label=spatial, kind="spatial"))
            question = f"What is the relationship between the {a.label} and the {b.label}?"
            regions = [
                [a.bbox.x, a.bbox.y, a.bbox.w, a.bbox.h],
                [b.bbox.x, b.bbox.y, b.bbox.w, b.bbox.h],
            ]
            answer = clean_vqa_answer(vqa.ask(image_bytes, regions, question), None, lex)
            if answer not in VQA_UNKNOWN_MARKERS:
                edges.append(Edge(src=a.node_id, dst=b.node_id, label=answer, kind="nonspatial"))

    graph = SceneGraph(image_id=image_id, nodes=tuple(nodes), edges=tuple(edges))
    return prune_edges(graph, cfg)
