"""End-to-end orchestration plus the hallucination-injection simulator.

run_pipeline drives parse -> questions -> graph (or captions) -> QA ->
report -> score for every (prompt, image) pair, isolating per-image failures
in an error manifest. The simulator builds identity graphs that answer every
generated question correctly, then injects single corruptions to exercise the
error taxonomy end to end with a known ground truth.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

from .config import ConfigError, RunConfig
from .graph_qa import (
    Finding,
    Memory,
    QAResult,
    SynonymTable,
    decode_answer,
    decode_answer_chat,
    default_synonyms,
    detect_extraneous,
    extract_entities,
    load_synonyms,
    retrieve_memory,
    retrieve_memory_captions,
    split_captions,
)
from .lexicon import DATA_DIR, default_lexicon
from .model_clients import (
    CaptionClient,
    ChatClient,
    ClientError,
    DetectClient,
    VqaClient,
)
from .prompt_parser import (
    ATTRIBUTE_RELATIONS,
    ParseError,
    PromptSpec,
    Triple,
    parse_prompt,
    triples_of,
)
from .question_gen import Question, generate_questions
from .scene_graph import (
    BoundingBox,
    DecodeError,
    Edge,
    GraphConfig,
    Node,
    SceneGraph,
    attribute_node_id,
    build_graph,
    save_graph,
)
from .scoring import HallucinationReport, Score, build_report, report_to_dict, score
from .stats import (
    EvalRun,
    ImageScore,
    LabeledFinding,
    MissingHumanScore,
    TypeScores,
    aggregate_run,
    evalrun_to_dict,
    f1_by_type,
    load_gold_findings,
    load_human_scores,
    spearman_rho,
)

CORRUPTION_KINDS = ("attribute_swap", "object_delete", "relation_flip", "extraneous_insert")

# deterministic replacement pools for corruptions without an explicit one
_SPATIAL_POOL = ("above", "below", "next to", "to the left of", "to the right of")
_VERB_POOL = ("chasing", "holding", "wearing", "pushing", "following")
_ATTR_POOL = {
    "color": ("red", "green", "blue", "yellow", "purple", "orange"),
    "shape": ("round", "square", "oval", "triangular"),
    "texture": ("wooden", "metallic", "furry", "smooth"),
    "other": ("broken", "open", "tall", "small"),
}
_EXTRA_POOL = ("chair", "person", "tree", "lamp", "bottle")


class UnsatisfiableLayout(ValueError):
    """Declared spatial relations contradict each other."""


class TargetNotFound(KeyError):
    """Corruption target does not exist in the source graph."""


# ---------------------------------------------------------------------------
# input loading
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    image_id: str
    prompt_id: str
    model_name: str
    path: Path


def load_prompts(path: Path | str) -> list[tuple[str, str]]:
    """Prompts as (id, text): plain text (one per line) or JSONL {id, text}."""
    path = Path(path)
    out = []
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".jsonl":
        for i, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            out.append((str(doc["id"]), str(doc["text"])))
    else:
        for i, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if line:
                out.append((f"p{i:04d}", line))
    return out


def load_manifest(path: Path | str) -> list[ManifestEntry]:
    base = Path(path).resolve().parent
    entries = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        doc = json.loads(line)
        p = Path(doc["path"])
        entries.append(
            ManifestEntry(
                image_id=str(doc["image_id"]),
                prompt_id=str(doc["prompt_id"]),
                model_name=str(doc["model_name"]),
                path=p if p.is_absolute() else base / p,
            )
        )
    return entries


def load_corpus(path: Path | str | None = None) -> list[tuple[str, str]]:
    return load_prompts(Path(path) if path is not None else DATA_DIR / "corpus.jsonl")


def load_open_vocab(path: Path | str | None = None) -> list[str]:
    p = Path(path) if path is not None else DATA_DIR / "open_vocab.txt"
    return [
        w.strip().lower()
        for w in p.read_text(encoding="utf-8").splitlines()
        if w.strip() and not w.startswith("#")
    ]


# ---------------------------------------------------------------------------
# per-image evaluation (shared by the pipeline and the simulator)
# ---------------------------------------------------------------------------

def answer_questions(
    questions: list[Question],
    graph: SceneGraph | None = None,
    captions: list[str] | None = None,
    syn: SynonymTable | None = None,
    chat=None,
) -> list[QAResult]:
    """Decode every question against the graph or the caption sentences."""
    table = syn or default_synonyms()
    results = []
    for q in questions:
        ent = extract_entities(q)
        if graph is not None:
            mem = retrieve_memory(ent, graph, table)
        else:
            mem = retrieve_memory_captions(ent, captions or [], table)
        if chat is not None:
            results.append(decode_answer_chat(mem, q, chat, table))
        else:
            results.append(decode_answer(mem, q, table))
    return sorted(results, key=lambda r: r.question_id)


def evaluate_image(
    image_id: str,
    spec: PromptSpec,
    questions: list[Question],
    graph: SceneGraph | None = None,
    captions: list[str] | None = None,
    syn: SynonymTable | None = None,
    chat=None,
) -> tuple[HallucinationReport, Score]:
    table = syn or default_synonyms()
    results = answer_questions(questions, graph=graph, captions=captions, syn=table, chat=chat)
    extraneous = detect_extraneous(graph, spec, table) if graph is not None else []
    report = build_report(results, extraneous, spec, image_id, questions=questions)
    return report, score(report, spec)


# ---------------------------------------------------------------------------
# identity graphs and corruptions
# ---------------------------------------------------------------------------

def _toposort_layers(n_groups: int, edges: set[tuple[int, int]]) -> list[int]:
    """Longest-path layer per group over a precedence DAG; cycle -> error."""
    succs: dict[int, set[int]] = {i: set() for i in range(n_groups)}
    indeg = {i: 0 for i in range(n_groups)}
    for a, b in sorted(edges):
        if b not in succs[a]:
            succs[a].add(b)
            indeg[b] += 1
    layer = {i: 0 for i in range(n_groups)}
    queue = sorted(i for i in range(n_groups) if indeg[i] == 0)
    seen = 0
    while queue:
        node = queue.pop(0)
        seen += 1
        for nxt in sorted(succs[node]):
            layer[nxt] = max(layer[nxt], layer[node] + 1)
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
        queue.sort()
    if seen != n_groups:
        raise UnsatisfiableLayout("cyclic spatial constraints")
    return [layer[i] for i in range(n_groups)]


_BOX = 100.0  # synthetic unit box; vertical spacing equals the box height so
# stacked objects touch, satisfying the on-the-top-of contact rule


def ideal_graph_of(
    spec: PromptSpec,
    syn: SynonymTable | None = None,
    image_w: float = 1000.0,
    image_h: float = 1000.0,
) -> SceneGraph:
    """Graph containing exactly the prompt's objects, attributes, and
    relations, with boxes arranged to satisfy the declared spatial layout;
    every generated question decodes correct against it."""
    table = syn or default_synonyms()
    n = len(spec.objects)
    parent = list(range(n))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    x_edges: set[tuple[int, int]] = set()
    y_edges: set[tuple[int, int]] = set()
    ordered: list[tuple[str, int, int]] = []
    for rel in spec.relations:
        if rel.kind != "spatial":
            continue
        canon = table.relation_canonical(rel.phrase)
        if canon == "next to":
            ra, rb = find(rel.subject_ref), find(rel.object_ref)
            parent[max(ra, rb)] = min(ra, rb)
        elif canon == "above":
            ordered.append(("y", rel.subject_ref, rel.object_ref))
        elif canon == "below":
            ordered.append(("y", rel.object_ref, rel.subject_ref))
        elif canon == "to the left of":
            ordered.append(("x", rel.subject_ref, rel.object_ref))
        elif canon == "to the right of":
            ordered.append(("x", rel.object_ref, rel.subject_ref))
        # behind / in front of and unmapped phrases place no 2-D constraint

    for axis, a, b in ordered:
        ga, gb = find(a), find(b)
        if ga == gb:
            raise UnsatisfiableLayout(
                f"objects {spec.objects[a].lemma} and {spec.objects[b].lemma} "
                "are both coincident and ordered"
            )
        (x_edges if axis == "x" else y_edges).add((ga, gb))

    roots = sorted({find(i) for i in range(n)})
    index = {root: k for k, root in enumerate(roots)}
    lx = _toposort_layers(len(roots), {(index[a], index[b]) for a, b in x_edges})
    ly = _toposort_layers(len(roots), {(index[a], index[b]) for a, b in y_edges})

    nodes: list[Node] = []
    edges: list[Edge] = []
    obj_ids = []
    for obj in spec.objects:
        g = index[find(obj.ref)]
        bbox = BoundingBox(
            x=50.0 + 150.0 * lx[g],
            y=50.0 + _BOX * ly[g],
            w=_BOX,
            h=_BOX,
            image_w=image_w,
            image_h=image_h,
        )
        node_id = f"obj{obj.ref:03d}"
        obj_ids.append(node_id)
        nodes.append(Node(node_id=node_id, kind="object", label=obj.lemma, bbox=bbox))
        for attr in obj.attributes:
            attr_id = attribute_node_id(node_id, attr.kind, attr.value)
            nodes.append(
                Node(node_id=attr_id, kind="attribute", label=attr.value,
                     attribute_kind=attr.kind)
            )
            edges.append(Edge(src=node_id, dst=attr_id,
                              label=ATTRIBUTE_RELATIONS[attr.kind], kind="attribute_binding"))
    for rel in spec.relations:
        edges.append(
            Edge(
                src=obj_ids[rel.subject_ref],
                dst=obj_ids[rel.object_ref],
                label=rel.phrase,
                kind=rel.kind,
            )
        )
    return SceneGraph(image_id=f"ideal-{spec.prompt_id}", nodes=tuple(nodes), edges=tuple(edges))


@dataclass(frozen=True)
class Corruption:
    kind: str
    target: str | tuple[str, str]
    replacement: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CORRUPTION_KINDS:
            raise ValueError(f"bad corruption kind {self.kind!r}")


def _pick(rng: random.Random, pool, forbidden) -> str:
    candidates = [p for p in pool if p not in forbidden]
    if not candidates:
        raise TargetNotFound("no replacement candidate available")
    return rng.choice(candidates)


def corrupt(g: SceneGraph, c: Corruption, syn: SynonymTable | None = None) -> SceneGraph:
    """Apply exactly one semantic change; raises TargetNotFound otherwise."""
    table = syn or default_synonyms()
    rng = random.Random(c.seed)
    by_id = {n.node_id: n for n in g.nodes}

    if c.kind == "attribute_swap":
        target = str(c.target)
        attr = next(
            (n for n in g.nodes if n.kind == "attribute" and n.label == target), None
        )
        if attr is None:
            raise TargetNotFound(f"attribute value {target!r} not in graph")
        binding = next(e for e in g.edges if e.kind == "attribute_binding" and e.dst == attr.node_id)
        forbidden = {target} | {
            w for w in _ATTR_POOL.get(attr.attribute_kind, ()) if table.nouns_match(w, target)
        }
        new_value = c.replacement or _pick(rng, _ATTR_POOL[attr.attribute_kind], forbidden)
        if new_value == target or table.nouns_match(new_value, target):
            raise ValueError(f"replacement {new_value!r} is not a semantic change")
        new_id = attribute_node_id(binding.src, attr.attribute_kind, new_value)
        nodes = tuple(
            replace(n, node_id=new_id, label=new_value) if n.node_id == attr.node_id else n
            for n in g.nodes
        )
        edges = tuple(
            replace(e, dst=new_id) if e.dst == attr.node_id else e for e in g.edges
        )
        return SceneGraph(g.image_id, nodes, edges)

    if c.kind == "object_delete":
        target = str(c.target)
        victim = next(
            (n for n in g.object_nodes() if n.label == target), None
        )
        if victim is None:
            raise TargetNotFound(f"object {target!r} not in graph")
        bound_attrs = {
            e.dst for e in g.edges if e.kind == "attribute_binding" and e.src == victim.node_id
        }
        dead = bound_attrs | {victim.node_id}
        nodes = tuple(n for n in g.nodes if n.node_id not in dead)
        edges = tuple(e for e in g.edges if e.src not in dead and e.dst not in dead)
        return SceneGraph(g.image_id, nodes, edges)

    if c.kind == "relation_flip":
        head, tail = c.target  # type: ignore[misc]
        edge = next(
            (
                e
                for e in g.edges
                if e.kind in ("spatial", "nonspatial")
                and by_id[e.src].label == head
                and by_id[e.dst].label == tail
            ),
            None,
        )
        if edge is None:
            raise TargetNotFound(f"no relation edge between {head!r} and {tail!r}")
        pool = _SPATIAL_POOL if edge.kind == "spatial" else _VERB_POOL
        forbidden = {p for p in pool if table.relations_match(p, edge.label)}
        new_label = c.replacement or _pick(rng, pool, forbidden)
        if table.relations_match(new_label, edge.label):
            raise ValueError(f"replacement {new_label!r} is synonymous with {edge.label!r}")
        edges = tuple(replace(e, label=new_label) if e == edge else e for e in g.edges)
        return SceneGraph(g.image_id, g.nodes, edges)

    if c.kind == "extraneous_insert":
        label = str(c.target) if c.target else (c.replacement or "")
        if not label:
            label = _pick(rng, _EXTRA_POOL, {n.label for n in g.object_nodes()})
        objs = g.object_nodes()
        n_objs = len(objs)
        iw, ih = (objs[0].bbox.image_w, objs[0].bbox.image_h) if objs else (1000.0, 1000.0)
        bbox = BoundingBox(
            x=min(50.0 + 150.0 * n_objs, iw - _BOX - 1) if iw > _BOX + 1 else 0.0,
            y=max(ih - 150.0, 0.0),
            w=min(_BOX, iw), h=min(_BOX, ih),
            image_w=iw, image_h=ih,
        )
        node = Node(node_id=f"xtr{n_objs:03d}", kind="object", label=label, bbox=bbox)
        return SceneGraph(g.image_id, g.nodes + (node,), g.edges)

    raise ValueError(f"unknown corruption kind {c.kind!r}")


def injected_finding(image_id: str, g: SceneGraph, c: Corruption) -> LabeledFinding:
    """Ground-truth label for a corruption, for F1 against the injection log."""
    if c.kind == "attribute_swap":
        target = str(c.target)
        for e in g.edges:
            if e.kind == "attribute_binding":
                nodes = {n.node_id: n for n in g.nodes}
                if nodes[e.dst].label == target:
                    return LabeledFinding(image_id, "attribute", nodes[e.src].label)
        raise TargetNotFound(target)
    if c.kind == "object_delete":
        return LabeledFinding(image_id, "omission", str(c.target))
    if c.kind == "relation_flip":
        head, tail = c.target  # type: ignore[misc]
        return LabeledFinding(image_id, "relation", f"{head}|{tail}")
    return LabeledFinding(image_id, "extraneous", str(c.target))


def applicable_corruptions(spec: PromptSpec, seed: int = 0) -> list[Corruption]:
    """One corruption per kind where the prompt offers a target."""
    out = [Corruption("object_delete", spec.objects[-1].lemma, seed=seed)]
    for obj in spec.objects:
        if obj.attributes:
            out.insert(0, Corruption("attribute_swap", obj.attributes[0].value, seed=seed))
            break
    for rel in spec.relations:
        head = spec.objects[rel.subject_ref].lemma
        tail = spec.objects[rel.object_ref].lemma
        out.append(Corruption("relation_flip", (head, tail), seed=seed))
        break
    prompt_labels = set(spec.object_lemmas())
    extra = next(label for label in _EXTRA_POOL if label not in prompt_labels)
    out.append(Corruption("extraneous_insert", extra, seed=seed))
    return out


# ---------------------------------------------------------------------------
# the batch pipeline
# ---------------------------------------------------------------------------

@dataclass
class ImageFailure:
    image_id: str
    prompt_id: str
    model_name: str
    stage: str
    error: str


@dataclass
class ImageOutcome:
    entry: ManifestEntry
    report: HallucinationReport
    score: Score
    graph_bytes: bytes | None


@dataclass
class RunOutcome:
    output_dir: Path
    outcomes: list[ImageOutcome]
    failures: list[ImageFailure]
    eval_runs: dict[str, EvalRun]

    @property
    def ok(self) -> bool:
        return not self.failures


def _build_clients(cfg: RunConfig, transport):
    try:
        detect = vqa = caption = chat = None
        if cfg.qa.knowledge == "graph":
            detect = DetectClient(cfg.clients, transport=transport)
            vqa = VqaClient(cfg.clients, transport=transport)
        else:
            caption = CaptionClient(cfg.clients, transport=transport)
        if cfg.qa.decoder == "chat":
            chat = ChatClient(cfg.clients, transport=transport)
        return detect, vqa, caption, chat
    except ClientError as e:
        raise ConfigError(str(e)) from None


def run_pipeline(cfg: RunConfig, transport=None) -> RunOutcome:
    """Evaluate every manifest entry and write the output tree.

    Fails fast on configuration problems; per-image failures are isolated in
    an error manifest and reflected in the CLI exit status.
    """
    if cfg.paths.prompts is None or cfg.paths.manifest is None:
        raise ConfigError("paths.prompts and paths.manifest are required for a run")
    syn = default_synonyms()
    if cfg.qa.fuzzy_threshold != syn.fuzzy_threshold:
        syn = load_synonyms(fuzzy_threshold=cfg.qa.fuzzy_threshold)
    lexicon = default_lexicon()

    detect, vqa, caption, chat = _build_clients(cfg, transport)
    open_vocab = load_open_vocab(cfg.run.open_vocab)

    specs: dict[str, PromptSpec] = {}
    questions: dict[str, list[Question]] = {}
    prompt_errors: dict[str, str] = {}
    for pid, text in load_prompts(cfg.paths.prompts):
        try:
            spec = parse_prompt(pid, text, lexicon)
            specs[pid] = spec
            questions[pid] = generate_questions(triples_of(spec))
        except ParseError as e:
            prompt_errors[pid] = f"{e.reason}: {e}"

    entries = load_manifest(cfg.paths.manifest)

    def process(entry: ManifestEntry):
        if entry.prompt_id in prompt_errors:
            return ImageFailure(entry.image_id, entry.prompt_id, entry.model_name,
                                "parse", prompt_errors[entry.prompt_id])
        spec = specs.get(entry.prompt_id)
        if spec is None:
            return ImageFailure(entry.image_id, entry.prompt_id, entry.model_name,
                                "parse", f"unknown prompt_id {entry.prompt_id!r}")
        try:
            image_bytes = entry.path.read_bytes()
        except OSError as e:
            return ImageFailure(entry.image_id, entry.prompt_id, entry.model_name,
                                "input", str(e))
        graph = None
        captions = None
        graph_bytes = None
        try:
            if cfg.qa.knowledge == "graph":
                vocab = list(spec.object_lemmas()) + open_vocab
                graph = build_graph(entry.image_id, image_bytes, vocab, detect, vqa,
                                    cfg.graph, lexicon)
                graph_bytes = save_graph(graph)
            else:
                captions = split_captions(caption.caption(image_bytes))
            report, s = evaluate_image(
                entry.image_id, spec, questions[entry.prompt_id],
                graph=graph, captions=captions, syn=syn, chat=chat,
            )
        except (ClientError, DecodeError) as e:
            stage = "graph" if cfg.qa.knowledge == "graph" else "captions"
            return ImageFailure(entry.image_id, entry.prompt_id, entry.model_name,
                                stage, str(e))
        return ImageOutcome(entry=entry, report=report, score=s, graph_bytes=graph_bytes)

    if cfg.run.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.run.workers) as pool:
            produced = list(pool.map(process, entries))
    else:
        produced = [process(e) for e in entries]

    outcomes = sorted(
        (p for p in produced if isinstance(p, ImageOutcome)),
        key=lambda o: (o.entry.model_name, o.entry.image_id),
    )
    failures = sorted(
        (p for p in produced if isinstance(p, ImageFailure)),
        key=lambda f: (f.model_name, f.image_id),
    )

    eval_runs = _aggregate(cfg, outcomes)
    _write_outputs(cfg, outcomes, failures, eval_runs)
    return RunOutcome(cfg.paths.output_dir, outcomes, failures, eval_runs)


def _aggregate(cfg: RunConfig, outcomes: list[ImageOutcome]) -> dict[str, EvalRun]:
    if cfg.paths.human_scores is None or not outcomes:
        return {}
    human = load_human_scores(cfg.paths.human_scores)
    have = {h.image_id for h in human}
    gold = load_gold_findings(cfg.paths.gold_findings) if cfg.paths.gold_findings else None
    runs: dict[str, EvalRun] = {}
    for model in sorted({o.entry.model_name for o in outcomes}):
        mine = [o for o in outcomes if o.entry.model_name == model]
        scored = [
            ImageScore(o.entry.image_id, o.entry.prompt_id, o.score.points, o.score.normalized)
            for o in mine
            if o.entry.image_id in have  # unscored images are excluded, listed in run.json
        ]
        if not scored:
            continue
        f1 = None
        if gold is not None:
            predicted = [
                LabeledFinding(o.entry.image_id, f.error_type, f.target)
                for o in mine
                for f in o.report.findings
            ]
            gold_mine = [g for g in gold if g.image_id in {o.entry.image_id for o in mine}]
            f1 = f1_by_type(predicted, gold_mine)
        runs[model] = aggregate_run(scored, human, model, f1=f1)
    return runs


def _json_bytes(doc) -> bytes:
    return (json.dumps(doc, sort_keys=True, separators=(",", ": "), ensure_ascii=False,
                       indent=1) + "\n").encode("utf-8")


def _write_outputs(cfg: RunConfig, outcomes, failures, eval_runs):
    out = cfg.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    unscored = []
    if cfg.paths.human_scores is not None:
        have = {h.image_id for h in load_human_scores(cfg.paths.human_scores)}
        unscored = sorted(
            o.entry.image_id for o in outcomes if o.entry.image_id not in have
        )
    for o in outcomes:
        model_dir = out / o.entry.model_name
        model_dir.mkdir(parents=True, exist_ok=True)
        doc = report_to_dict(o.report, o.score)
        doc["prompt_id"] = o.entry.prompt_id
        doc["model_name"] = o.entry.model_name
        (model_dir / f"{o.entry.image_id}.report.json").write_bytes(_json_bytes(doc))
        if o.graph_bytes is not None:
            (model_dir / f"{o.entry.image_id}.graph.json").write_bytes(o.graph_bytes)

    lines = ["image_id,prompt_id,model_name,points,normalized,attribute,relation,omission,extraneous"]
    for o in outcomes:
        c = o.report.counts
        lines.append(
            f"{o.entry.image_id},{o.entry.prompt_id},{o.entry.model_name},"
            f"{o.score.points},{o.score.normalized:.6f},"
            f"{c['attribute']},{c['relation']},{c['omission']},{c['extraneous']}"
        )
    (out / "summary.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    if failures:
        rows = [
            json.dumps(
                {"image_id": f.image_id, "prompt_id": f.prompt_id,
                 "model_name": f.model_name, "stage": f.stage, "error": f.error},
                sort_keys=True, ensure_ascii=False,
            )
            for f in failures
        ]
        (out / "errors.jsonl").write_text("\n".join(rows) + "\n", encoding="utf-8")

    run_doc = {
        "schema_version": 1,
        "settings": {
            "mode": cfg.clients.mode,
            "decoder": cfg.qa.decoder,
            "knowledge": cfg.qa.knowledge,
            "seed": cfg.run.seed,
            "workers": cfg.run.workers,
        },
        "n_images": len(outcomes),
        "n_failures": len(failures),
        "unscored": unscored,
        "models": {m: evalrun_to_dict(r) for m, r in eval_runs.items()},
    }
    (out / "run.json").write_bytes(_json_bytes(run_doc))
    if eval_runs:
        emit_report(list(eval_runs.values()), out)


# ---------------------------------------------------------------------------
# Table-shaped report emission
# ---------------------------------------------------------------------------

def _fmt_cell(v: float | None) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def emit_report(runs: list[EvalRun], out_dir: Path | str) -> list[Path]:
    """Model-comparison table (mean + correlations) and per-type F1 table,
    each as CSV and aligned text, sorted by model name."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = sorted(runs, key=lambda r: r.model_name)
    written = []

    header = ["model", "mean_normalized", "pearson", "kendall_tau", "spearman_rho"]
    rows = [
        [r.model_name, _fmt_cell(r.mean_normalized), _fmt_cell(r.pearson),
         _fmt_cell(r.kendall_tau), _fmt_cell(r.spearman_rho)]
        for r in runs
    ]
    written.append(_write_table(out_dir / "table_scores", header, rows))

    f1_runs = [r for r in runs if r.f1_by_type]
    if f1_runs:
        header2 = ["model", "attribute", "omission", "relation", "extraneous"]
        rows2 = []
        for r in f1_runs:
            cells = [r.model_name]
            for etype in ("attribute", "omission", "relation", "extraneous"):
                ts = r.f1_by_type.get(etype)
                cells.append("n/a" if ts is None else f"{ts.f1:.4f}")
            rows2.append(cells)
        written.append(_write_table(out_dir / "table_f1", header2, rows2))
    return written


def _write_table(stem: Path, header: list[str], rows: list[list[str]]) -> Path:
    csv_path = stem.with_suffix(".csv")
    csv_path.write_text(
        "\n".join([",".join(header)] + [",".join(r) for r in rows]) + "\n",
        encoding="utf-8",
    )
    widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
              for i, h in enumerate(header)]
    def fmt_row(cells):
        return "  ".join(c.ljust(w) for c, w in zip(cells, widths)).rstrip()
    text = [fmt_row(header), fmt_row(["-" * w for w in widths])]
    text.extend(fmt_row(r) for r in rows)
    stem.with_suffix(".txt").write_text("\n".join(text) + "\n", encoding="utf-8")
    return csv_path


# ---------------------------------------------------------------------------
# simulation: identity soundness, injection completeness, ranked models
# ---------------------------------------------------------------------------

@dataclass
class SimulateOutcome:
    identity_scores: dict[str, int]
    f1: dict[str, TypeScores]
    rate_means: dict[str, float]
    score_error_spearman: float
    n_rate_images: int


def identity_scores(specs: list[PromptSpec], syn: SynonymTable | None = None) -> dict[str, int]:
    """Full pipeline over each prompt's own ideal graph; sound decoding
    scores 7 everywhere."""
    table = syn or default_synonyms()
    out = {}
    for spec in specs:
        g = ideal_graph_of(spec, table)
        questions = generate_questions(triples_of(spec))
        _, s = evaluate_image(g.image_id, spec, questions, graph=g, syn=table)
        out[spec.prompt_id] = s.points
    return out


def injection_suite(
    specs: list[PromptSpec], seed: int = 0, syn: SynonymTable | None = None
) -> tuple[dict[str, TypeScores], list[LabeledFinding], list[LabeledFinding]]:
    """Corpus x corruption kinds (where applicable): returns per-type F1 of
    reported findings against the injection log, plus both finding lists."""
    table = syn or default_synonyms()
    predicted: list[LabeledFinding] = []
    injected: list[LabeledFinding] = []
    for spec in specs:
        base = ideal_graph_of(spec, table)
        questions = generate_questions(triples_of(spec))
        for c in applicable_corruptions(spec, seed=seed):
            image_id = f"{spec.prompt_id}-{c.kind}"
            g = corrupt(base, c, table)
            injected.append(injected_finding(image_id, base, c))
            report, _ = evaluate_image(image_id, spec, questions, graph=g, syn=table)
            predicted.extend(
                LabeledFinding(image_id, f.error_type, f.target) for f in report.findings
            )
    return f1_by_type(predicted, injected, table), predicted, injected


def rate_models(
    specs: list[PromptSpec],
    rates: dict[str, float] | None = None,
    seed: int = 0,
    syn: SynonymTable | None = None,
) -> tuple[dict[str, float], float, int]:
    """Synthetic models that corrupt a fixed fraction of identity graphs.

    Returns per-model mean normalized score, the pooled Spearman correlation
    between pipeline scores and injected-error counts, and the image count.
    """
    table = syn or default_synonyms()
    if rates is None:
        rates = {"synthetic-000": 0.0, "synthetic-010": 0.1, "synthetic-030": 0.3}
    means: dict[str, float] = {}
    all_scores: list[float] = []
    all_errors: list[int] = []
    for m_idx, (model, rate) in enumerate(sorted(rates.items())):
        rng = random.Random(seed * 1000 + m_idx)
        k = round(rate * len(specs))
        chosen = set(rng.sample(range(len(specs)), k))
        normalized = []
        for i, spec in enumerate(specs):
            g = ideal_graph_of(spec, table)
            injected = 0
            if i in chosen:
                options = applicable_corruptions(spec, seed=seed + i)
                g = corrupt(g, rng.choice(options), table)
                injected = 1
            questions = generate_questions(triples_of(spec))
            _, s = evaluate_image(f"{model}-{spec.prompt_id}", spec, questions,
                                  graph=g, syn=table)
            normalized.append(s.normalized)
            all_scores.append(s.normalized)
            all_errors.append(injected)
        means[model] = sum(normalized) / len(normalized)
    rho = spearman_rho(all_scores, all_errors)
    return means, rho, len(all_scores)


def simulate(
    corpus_path: Path | str | None = None,
    out_dir: Path | str | None = None,
    seed: int = 0,
) -> SimulateOutcome:
    """Run the full injection suite over the bundled corpus and emit tables."""
    lexicon = default_lexicon()
    specs = [parse_prompt(pid, text, lexicon) for pid, text in load_corpus(corpus_path)]
    table = default_synonyms()

    ident = identity_scores(specs, table)
    f1, predicted, injected = injection_suite(specs, seed=seed, syn=table)
    means, rho, n_images = rate_models(specs, seed=seed, syn=table)

    outcome = SimulateOutcome(
        identity_scores=ident,
        f1=f1,
        rate_means=means,
        score_error_spearman=rho,
        n_rate_images=n_images,
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        doc = {
            "identity_scores": ident,
            "f1": {t: {"precision": s.precision, "recall": s.recall, "f1": s.f1}
                   for t, s in sorted(f1.items())},
            "rate_means": means,
            "score_error_spearman": rho,
            "n_rate_images": n_images,
            "seed": seed,
        }
        (out / "simulate.json").write_bytes(_json_bytes(doc))
        log_lines = ["image_id,error_type,target"]
        log_lines += [f"{i.image_id},{i.error_type},{i.target}" for i in injected]
        (out / "injection_log.csv").write_text("\n".join(log_lines) + "\n", encoding="utf-8")
        pred_lines = ["image_id,error_type,target"]
        pred_lines += [f"{p.image_id},{p.error_type},{p.target}" for p in predicted]
        (out / "injection_predicted.csv").write_text("\n".join(pred_lines) + "\n", encoding="utf-8")
        fake_run = EvalRun("injection-suite", len(injected), 0.0, None, None, None,
                           f1_by_type=f1)
        emit_report([fake_run], out)
    return outcome
