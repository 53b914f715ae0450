"""Command-line interface.

Verbs: parse, questions, graph, qa, score, stats, run, simulate, config show.
Exit codes: 0 clean, 1 when per-image failures occurred, 2 on config errors.
"""

from __future__ import annotations

import csv
import json
import sys
from pathlib import Path

import click

from . import pipeline
from .config import ConfigError, RunConfig, load_config, render_config
from .graph_qa import default_synonyms, detect_extraneous
from .lexicon import default_lexicon
from .model_clients import ClientError
from .prompt_parser import ParseError, parse_prompt, spec_to_dict, triple_to_dict, triples_of
from .question_gen import generate_questions, question_from_dict, question_to_dict
from .scene_graph import load_graph
from .scoring import build_report, report_to_dict, score
from .stats import ImageScore, aggregate_run, f1_by_type, load_gold_findings, load_human_scores


def _cfg_or_exit(path: str | None) -> RunConfig:
    try:
        return load_config(path) if path else RunConfig()
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)


def _write_jsonl(path: str, docs) -> None:
    with click.open_file(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n")


@click.group()
def main():
    """Scene-graph QA evaluation of text-to-image faithfulness."""


@main.command("parse")
@click.option("--prompts", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="-", help="output JSONL (default stdout)")
def parse_cmd(prompts, out):
    """Parse prompts into object/attribute/relation triples."""
    lexicon = default_lexicon()
    docs = []
    for pid, text in pipeline.load_prompts(prompts):
        try:
            spec = parse_prompt(pid, text, lexicon)
            docs.append(
                {
                    "prompt_id": pid,
                    "spec": spec_to_dict(spec),
                    "triples": [triple_to_dict(t) for t in triples_of(spec)],
                }
            )
        except ParseError as e:
            docs.append({"prompt_id": pid, "error": str(e)})
    _write_jsonl(out, docs)


@main.command("questions")
@click.option("--prompts", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", default="-", help="output JSONL (default stdout)")
def questions_cmd(prompts, out):
    """Generate templated question/gold pairs from prompts."""
    lexicon = default_lexicon()
    docs = []
    for pid, text in pipeline.load_prompts(prompts):
        try:
            spec = parse_prompt(pid, text, lexicon)
        except ParseError as e:
            docs.append({"prompt_id": pid, "error": str(e)})
            continue
        docs.extend(question_to_dict(q) for q in generate_questions(triples_of(spec)))
    _write_jsonl(out, docs)


@main.command("graph")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--image-id", default=None, help="only this manifest entry")
def graph_cmd(config_path, image_id):
    """Build scene graphs for manifest entries and write them as JSON."""
    cfg = _cfg_or_exit(config_path)
    if cfg.paths.manifest is None or cfg.paths.prompts is None:
        click.echo("config error: paths.prompts and paths.manifest required", err=True)
        sys.exit(2)
    try:
        detect = pipeline.DetectClient(cfg.clients)
        vqa = pipeline.VqaClient(cfg.clients)
    except ClientError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    lexicon = default_lexicon()
    specs = {}
    for pid, text in pipeline.load_prompts(cfg.paths.prompts):
        try:
            specs[pid] = parse_prompt(pid, text, lexicon)
        except ParseError:
            pass
    out_dir = cfg.paths.output_dir / "graphs"
    out_dir.mkdir(parents=True, exist_ok=True)
    open_vocab = pipeline.load_open_vocab(cfg.run.open_vocab)
    failures = 0
    for entry in pipeline.load_manifest(cfg.paths.manifest):
        if image_id is not None and entry.image_id != image_id:
            continue
        spec = specs.get(entry.prompt_id)
        if spec is None:
            failures += 1
            click.echo(f"{entry.image_id}: unparseable prompt {entry.prompt_id}", err=True)
            continue
        try:
            g = pipeline.build_graph(
                entry.image_id, entry.path.read_bytes(),
                list(spec.object_lemmas()) + open_vocab, detect, vqa, cfg.graph, lexicon,
            )
        except (OSError, ClientError, pipeline.DecodeError) as e:
            failures += 1
            click.echo(f"{entry.image_id}: {e}", err=True)
            continue
        (out_dir / f"{entry.image_id}.graph.json").write_bytes(pipeline.save_graph(g))
        click.echo(f"{entry.image_id}: {len(g.nodes)} nodes, {len(g.edges)} edges")
    sys.exit(1 if failures else 0)


@main.command("qa")
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--questions", "questions_path", required=True, type=click.Path(exists=True))
@click.option("--out", default="-", help="results JSONL (default stdout)")
def qa_cmd(graph_path, questions_path, out):
    """Answer a question file against one scene-graph JSON file."""
    g = load_graph(Path(graph_path).read_bytes())
    qs = [
        question_from_dict(json.loads(line))
        for line in Path(questions_path).read_text(encoding="utf-8").splitlines()
        if line.strip() and "question_id" in json.loads(line)
    ]
    results = pipeline.answer_questions(qs, graph=g)
    _write_jsonl(out, (
        {
            "question_id": r.question_id,
            "predicted": r.predicted,
            "verdict": r.verdict,
            "error_type": r.error_type,
            "target": r.target,
            "expected": r.expected,
            "memory_size": r.memory_size,
        }
        for r in results
    ))


@main.command("score")
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--prompts", required=True, type=click.Path(exists=True))
@click.option("--prompt-id", required=True)
@click.option("--image-id", default=None)
@click.option("--out", default="-", help="report JSON (default stdout)")
def score_cmd(graph_path, prompts, prompt_id, image_id, out):
    """QA + hallucination report + rubric score for one graph."""
    lexicon = default_lexicon()
    by_id = dict(pipeline.load_prompts(prompts))
    if prompt_id not in by_id:
        click.echo(f"prompt {prompt_id!r} not found in {prompts}", err=True)
        sys.exit(2)
    spec = parse_prompt(prompt_id, by_id[prompt_id], lexicon)
    g = load_graph(Path(graph_path).read_bytes())
    questions = generate_questions(triples_of(spec))
    report, s = pipeline.evaluate_image(
        image_id or g.image_id, spec, questions, graph=g
    )
    doc = report_to_dict(report, s)
    with click.open_file(out, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(doc, sort_keys=True, indent=1, ensure_ascii=False) + "\n")


@main.command("stats")
@click.option("--summary", required=True, type=click.Path(exists=True),
              help="summary.csv from a run")
@click.option("--human", "human_path", required=True, type=click.Path(exists=True))
@click.option("--gold-findings", default=None, type=click.Path(exists=True))
@click.option("--predicted-findings", default=None, type=click.Path(exists=True))
@click.option("--per-prompt", is_flag=True, default=False,
              help="average per-prompt correlations instead of pooling")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
def stats_cmd(summary, human_path, gold_findings, predicted_findings, per_prompt, out_dir):
    """Correlations and (optionally) per-type F1 from run outputs."""
    human = load_human_scores(human_path)
    by_model: dict[str, list[ImageScore]] = {}
    with open(summary, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            by_model.setdefault(row["model_name"], []).append(
                ImageScore(row["image_id"], row["prompt_id"],
                           int(row["points"]), float(row["normalized"]))
            )
    f1 = None
    if gold_findings and predicted_findings:
        f1 = f1_by_type(load_gold_findings(predicted_findings),
                        load_gold_findings(gold_findings))
    runs = []
    for model in sorted(by_model):
        runs.append(aggregate_run(by_model[model], human, model, f1=f1,
                                  group_by_prompt=per_prompt))
    paths = pipeline.emit_report(runs, out_dir)
    for p in paths:
        click.echo(str(p))


@main.command("run")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def run_cmd(config_path):
    """End-to-end batch evaluation."""
    cfg = _cfg_or_exit(config_path)
    try:
        outcome = pipeline.run_pipeline(cfg)
    except ConfigError as e:
        click.echo(f"config error: {e}", err=True)
        sys.exit(2)
    click.echo(
        f"{len(outcome.outcomes)} images scored, {len(outcome.failures)} failures, "
        f"outputs in {outcome.output_dir}"
    )
    sys.exit(0 if outcome.ok else 1)


@main.command("simulate")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, type=int)
@click.option("--corpus", default=None, type=click.Path(exists=True),
              help="override the bundled prompt corpus")
def simulate_cmd(out_dir, seed, corpus):
    """Identity + single-corruption injection suite over the corpus."""
    outcome = pipeline.simulate(corpus_path=corpus, out_dir=out_dir, seed=seed)
    bad = {pid: pts for pid, pts in outcome.identity_scores.items() if pts != 7}
    click.echo(f"identity: {len(outcome.identity_scores) - len(bad)}"
               f"/{len(outcome.identity_scores)} prompts at 7"
               + (f" (off: {sorted(bad)})" if bad else ""))
    for etype, ts in sorted(outcome.f1.items()):
        click.echo(f"f1[{etype}] = {ts.f1:.4f}")
    for model, mean in sorted(outcome.rate_means.items()):
        click.echo(f"mean[{model}] = {mean:.4f}")
    click.echo(f"score-vs-errors spearman = {outcome.score_error_spearman:.4f} "
               f"over {outcome.n_rate_images} images")
    sys.exit(0 if not bad else 1)


@main.group("config")
def config_group():
    """Configuration helpers."""


@config_group.command("show")
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
def config_show(config_path):
    """Print the effective configuration (defaults when no file given)."""
    cfg = _cfg_or_exit(config_path)
    click.echo(render_config(cfg), nl=False)


if __name__ == "__main__":
    main()
