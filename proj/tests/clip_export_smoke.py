#!/usr/bin/env python3
"""Exports embeddings from a tiny random local CLIP model and trains a few steps on them."""

import json
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch
from transformers import CLIPConfig, CLIPModel, CLIPTokenizer

ROOT = Path(__file__).resolve().parents[1]


def bytes_to_unicode():
    bs = list(range(ord("!"), ord("~") + 1)) + list(range(ord("¡"), ord("¬") + 1)) + list(range(ord("®"), ord("ÿ") + 1))
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return [chr(c) for c in cs]


def tiny_model(out):
    """Byte-level tokenizer without merges plus a 2-layer CLIP projecting to 512."""
    chars = bytes_to_unicode()
    vocab = {c: i for i, c in enumerate(chars)}
    vocab.update({c + "</w>": len(chars) + i for i, c in enumerate(chars)})
    vocab["<|startoftext|>"] = len(vocab)
    vocab["<|endoftext|>"] = len(vocab)
    (out / "vocab.json").write_text(json.dumps(vocab))
    (out / "merges.txt").write_text("#version: 0.2\n")
    CLIPTokenizer(str(out / "vocab.json"), str(out / "merges.txt")).save_pretrained(out)
    layers = dict(hidden_size=32, intermediate_size=64, num_hidden_layers=2, num_attention_heads=2)
    config = CLIPConfig(
        text_config=dict(vocab_size=len(vocab), max_position_embeddings=77, bos_token_id=len(vocab) - 2,
                         eos_token_id=len(vocab) - 1, **layers),
        vision_config=dict(image_size=32, patch_size=8, **layers),
        projection_dim=512)
    torch.manual_seed(0)
    CLIPModel(config).save_pretrained(out)


def run(*args):
    print("+", " ".join(map(str, args)), flush=True)
    subprocess.run([str(a) for a in args], check=True)


def main():
    cli = sys.argv[1]
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        (tmp / "model").mkdir()
        tiny_model(tmp / "model")
        run(cli, "ingest", "--format", "synthetic-fixture", "--output", tmp / "data", "--limit", 6)
        emb = tmp / "emb.json"
        run(sys.executable, ROOT / "tools" / "export_clip_embeddings.py", "--data", tmp / "data", "--out", emb,
            "--hf-model", tmp / "model", "--image-size", 32, "--template", "a photo of a {label}",
            "--template", "{label1} and {label2}", "--pair-limit", 5)
        doc = json.loads(emb.read_text())
        assert doc["dim"] == 512 and doc["image_size"] == 32, (doc["dim"], doc["image_size"])
        assert len(doc["text"]) == 4 + 5, sorted(doc["text"])
        assert len(doc["images"]) == 12 and "test/fixture-test-0000" in doc["images"], sorted(doc["images"])
        norms = [np.linalg.norm(v) for v in list(doc["text"].values()) + list(doc["images"].values())]
        assert max(abs(n - 1) for n in norms) < 1e-9
        run(cli, "--config", ROOT / "configs" / "fixture.toml", "--set", "data.dataset=ondisk",
            "--set", f"data.root={tmp / 'data'}", "--set", "clip.fixture=false", "--set", "clip.backbone=vit-b-16",
            "--set", f"clip.embeddings={emb}", "--set", "train.max_steps=4", "--set", "train.epochs=1",
            "--out", tmp / "runs", "--run-id", "smoke", "train")
        summary = json.loads((tmp / "runs" / "smoke" / "train_summary.json").read_text())
        assert summary["steps"] == 2, summary
    print("ok")


if __name__ == "__main__":
    main()
