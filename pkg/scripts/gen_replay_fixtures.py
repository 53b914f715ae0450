#!/usr/bin/env python3
"""Regenerate the bundled replay demo under tests/fixtures/replay_demo/.

Five prompts, five tiny PNGs, and a scripted scenario per image (one faithful,
one wrong attribute, one missing object, one extraneous object, one flipped
relation). The real clients run in record mode against an in-process fake
service, so the recorded digests are exactly what replay-mode runs recompute.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import os
import re
import shutil
from pathlib import Path

from PIL import Image

from halluqa.model_clients import CaptionClient, ClientConfig, DetectClient, VqaClient
from halluqa.pipeline import load_open_vocab, load_prompts
from halluqa.prompt_parser import parse_prompt
from halluqa.scene_graph import GraphConfig, build_graph

ROOT = Path(__file__).resolve().parent.parent
DEMO = ROOT / "tests" / "fixtures" / "replay_demo"

PROMPTS = [
    ("r01", "a green banana and a cucumber"),
    ("r02", "a red book and a yellow vase"),
    ("r03", "a black cat on the top of the wooden sofa"),
    ("r04", "a white mug and a red kettle"),
    ("r05", "a blue car to the left of a red bus"),
]

# per image: fill color, detections [(label, box, confidence, attrs)], caption
SCENARIO = {
    "r01": {
        "fill": (240, 230, 140),
        "objects": [
            ("banana", (10, 40, 20, 20), 0.95, {"color": "green", "shape": "curved"}),
            ("cucumber", (60, 40, 20, 20), 0.92, {"color": "green"}),
        ],
        "caption": "a green banana and a cucumber.",
    },
    "r02": {
        "fill": (70, 130, 180),
        "objects": [
            ("book", (10, 10, 30, 30), 0.97, {"color": "blue"}),
            ("vase", (60, 10, 25, 35), 0.91, {"color": "yellow"}),
        ],
        "caption": "a book and a yellow vase.",
    },
    "r03": {
        "fill": (139, 90, 43),
        "objects": [
            ("sofa", (20, 50, 60, 40), 0.96, {"texture": "wooden", "color": "brown"}),
        ],
        "caption": "a wooden sofa.",
    },
    "r04": {
        "fill": (245, 245, 245),
        "objects": [
            ("mug", (10, 60, 20, 20), 0.94, {"color": "white"}),
            ("kettle", (50, 55, 25, 25), 0.93, {"color": "red"}),
            ("chair", (72, 15, 22, 35), 0.90, {"color": "brown", "texture": "wooden"}),
        ],
        "caption": "a white mug and a red kettle and a chair.",
    },
    "r05": {
        "fill": (60, 60, 160),
        "objects": [
            ("car", (70, 40, 22, 18), 0.95, {"color": "blue"}),
            ("bus", (8, 35, 26, 24), 0.94, {"color": "red"}),
        ],
        "caption": "a blue car and a red bus.",
    },
}

HUMAN_POINTS = {"r01": 7, "r02": 5, "r03": 2, "r04": 6, "r05": 3}

_ATTR_Q = re.compile(r"What is the (color|shape|texture) of the (.+)\?")
_REL_Q = re.compile(r"What is the relationship between the (.+) and the (.+)\?")


class FakeServiceTransport:
    """Answers detect/vqa/caption requests from the scenario table."""

    def __init__(self, by_sha: dict[str, dict]):
        self.by_sha = by_sha

    def _scene(self, body: dict) -> dict:
        sha = hashlib.sha256(base64.b64decode(body["image"]["b64"])).hexdigest()
        return self.by_sha[sha]

    def post(self, url: str, body: dict, headers: dict, timeout_s: float):
        scene = self._scene(body)
        if url.endswith("/detect"):
            dets = [
                {"label": label, "confidence": conf, "box": list(box)}
                for label, box, conf, _ in scene["objects"]
                if label in set(body["vocabulary"])
            ]
            return 200, {"detections": dets}
        if url.endswith("/vqa"):
            q = body["question"]
            m = _ATTR_Q.fullmatch(q)
            if m:
                kind, label = m.group(1), m.group(2)
                for obj_label, _, _, attrs in scene["objects"]:
                    if obj_label == label:
                        return 200, {"answer": attrs.get(kind, "unknown")}
                return 200, {"answer": "unknown"}
            if _REL_Q.fullmatch(q):
                return 200, {"answer": "unknown"}
            return 200, {"answer": "unknown"}
        if url.endswith("/caption"):
            return 200, {"text": scene["caption"]}
        raise AssertionError(f"unexpected url {url}")


def make_png(fill: tuple[int, int, int]) -> bytes:
    im = Image.new("RGB", (100, 100), fill)
    for x in range(20, 40):
        for y in range(20, 40):
            im.putpixel((x, y), (fill[2], fill[0], fill[1]))
    buf = io.BytesIO()
    im.save(buf, format="PNG")
    return buf.getvalue()


def main():
    if DEMO.exists():
        shutil.rmtree(DEMO)
    (DEMO / "images").mkdir(parents=True)
    (DEMO / "fixtures").mkdir()

    by_sha = {}
    for image_id, scene in SCENARIO.items():
        png = make_png(scene["fill"])
        (DEMO / "images" / f"{image_id}.png").write_bytes(png)
        by_sha[hashlib.sha256(png).hexdigest()] = scene

    (DEMO / "prompts.jsonl").write_text(
        "\n".join(json.dumps({"id": pid, "text": text}) for pid, text in PROMPTS) + "\n",
        encoding="utf-8",
    )
    (DEMO / "manifest.jsonl").write_text(
        "\n".join(
            json.dumps(
                {"image_id": pid, "prompt_id": pid, "model_name": "demo",
                 "path": f"images/{pid}.png"}
            )
            for pid, _ in PROMPTS
        )
        + "\n",
        encoding="utf-8",
    )
    (DEMO / "human_scores.csv").write_text(
        "image_id,prompt_id,points\n"
        + "\n".join(f"{pid},{pid},{HUMAN_POINTS[pid]}" for pid, _ in PROMPTS)
        + "\n",
        encoding="utf-8",
    )
    (DEMO / "config.toml").write_text(
        'config_version = 1\n\n[paths]\nprompts = "prompts.jsonl"\n'
        'manifest = "manifest.jsonl"\nhuman_scores = "human_scores.csv"\n'
        'fixtures_dir = "fixtures"\noutput_dir = "out"\n\n'
        '[clients]\nmode = "replay"\n\n'
        '[qa]\ndecoder = "deterministic"\nknowledge = "graph"\n\n'
        '[run]\nworkers = 2\nseed = 0\n',
        encoding="utf-8",
    )
    (DEMO / "config_captions.toml").write_text(
        'config_version = 1\n\n[paths]\nprompts = "prompts.jsonl"\n'
        'manifest = "manifest.jsonl"\nhuman_scores = "human_scores.csv"\n'
        'fixtures_dir = "fixtures"\noutput_dir = "out_captions"\n\n'
        '[clients]\nmode = "replay"\n\n'
        '[qa]\ndecoder = "deterministic"\nknowledge = "captions"\n\n'
        '[run]\nworkers = 1\nseed = 0\n',
        encoding="utf-8",
    )

    os.environ.setdefault("HALLU_DETECT_URL", "https://models.invalid/detect")
    os.environ.setdefault("HALLU_VQA_URL", "https://models.invalid/vqa")
    os.environ.setdefault("HALLU_CAPTION_URL", "https://models.invalid/caption")
    for service in ("DETECT", "VQA", "CAPTION"):
        os.environ.setdefault(f"HALLU_{service}_TOKEN", "record-only")

    transport = FakeServiceTransport(by_sha)
    cfg = ClientConfig(mode="record", fixtures_dir=DEMO / "fixtures")
    detect = DetectClient(cfg, transport=transport)
    vqa = VqaClient(cfg, transport=transport)
    captioner = CaptionClient(cfg, transport=transport)

    open_vocab = load_open_vocab()
    graph_cfg = GraphConfig()
    for pid, text in load_prompts(DEMO / "prompts.jsonl"):
        spec = parse_prompt(pid, text)
        png = (DEMO / "images" / f"{pid}.png").read_bytes()
        vocab = list(spec.object_lemmas()) + open_vocab
        g = build_graph(pid, png, vocab, detect, vqa, graph_cfg)
        captioner.caption(png)
        print(f"{pid}: recorded graph with {len(g.nodes)} nodes, {len(g.edges)} edges")

    n = sum(1 for _ in (DEMO / "fixtures").rglob("*.json"))
    print(f"recorded {n} transcripts under {DEMO / 'fixtures'}")


if __name__ == "__main__":
    main()
