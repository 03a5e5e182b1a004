#!/usr/bin/env python3
"""Precompute CLIP text and image embeddings for clipstrike's precomputed encoder.

    python tools/export_clip_embeddings.py --data data/cifar10 \
        --template "a photo of a {label}" --out weights/clip-vit-b-16-cifar10.json

Writes {"backbone", "dim", "image_size", "text": {prompt: [...]}, "images": {id: [...]}}.
Prompts are every class for `{label}` templates and every ordered pair of
distinct classes for `{label1}`/`{label2}` templates (capped by --pair-limit),
matching clipstrike's expansion. Image ids are "<split>/<stem>", the ids the
dataset loader assigns. Images are warp-resized to --image-size, as in the
clipstrike pipeline, before CLIP normalisation.
"""

import argparse
import json
import re
from pathlib import Path

import numpy as np
import torch
from PIL import Image
from transformers import CLIPModel, CLIPTokenizer

BACKBONES = {
    "vit-b-16": "openai/clip-vit-base-patch16",
    "vit-b-32": "openai/clip-vit-base-patch32",
    "vit-l-14": "openai/clip-vit-large-patch14",
}
CLIP_MEAN = [0.48145466, 0.4578275, 0.40821073]
CLIP_STD = [0.26862954, 0.26130258, 0.27577711]
PLACEHOLDER = re.compile(r"\{(label|label1|label2)\}")


def fill(template, labels):
    return PLACEHOLDER.sub(lambda m: labels[1] if m.group(1) == "label2" else labels[0], template)


def prompts_for(template, classes, pair_limit):
    fields = set(PLACEHOLDER.findall(template))
    if fields == {"label"}:
        return [fill(template, [c]) for c in classes]
    if fields != {"label1", "label2"}:
        raise SystemExit(f"template {template!r} needs {{label}} or both {{label1}} and {{label2}}")
    out = []
    for a in classes:
        for b in classes:
            if a == b:
                continue
            if pair_limit and len(out) == pair_limit:
                return out
            out.append(fill(template, [a, b]))
    return out


def image_items(root):
    for split in ("train", "test"):
        for sidecar in sorted((root / split).glob("*.json")):
            for ext in (".png", ".jpg", ".jpeg"):
                if sidecar.with_suffix(ext).exists():
                    yield f"{split}/{sidecar.stem}", sidecar.with_suffix(ext)
                    break


def unit_rows(t):
    if not torch.is_tensor(t):
        t = t.pooler_output
    t = t.double()
    return (t / t.norm(dim=1, keepdim=True)).cpu().numpy()


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--data", required=True, type=Path, help="dataset root written by clipstrike ingest")
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--backbone", default="vit-b-16")
    parser.add_argument("--hf-model", help="Hugging Face model id or local directory (default: per backbone)")
    parser.add_argument("--template", action="append", help="prompt template (repeatable)")
    parser.add_argument("--pair-limit", type=int, default=0)
    parser.add_argument("--image-size", type=int, default=224)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    args = parser.parse_args()

    model_id = args.hf_model or BACKBONES.get(args.backbone)
    if model_id is None:
        raise SystemExit(f"unknown backbone {args.backbone!r}; pass --hf-model")
    model = CLIPModel.from_pretrained(model_id).to(args.device).eval()
    tokenizer = CLIPTokenizer.from_pretrained(model_id)

    classes = [c for c in (args.data / "classes.txt").read_text().splitlines() if c]
    prompts = []
    for template in args.template or ["a photo of a {label}"]:
        prompts += [p for p in prompts_for(template, classes, args.pair_limit) if p not in prompts]

    text = {}
    with torch.no_grad():
        for i in range(0, len(prompts), args.batch_size):
            chunk = prompts[i:i + args.batch_size]
            tokens = tokenizer(chunk, padding=True, return_tensors="pt").to(args.device)
            for p, v in zip(chunk, unit_rows(model.get_text_features(**tokens))):
                text[p] = v.tolist()

        mean = torch.tensor(CLIP_MEAN).view(1, 3, 1, 1)
        std = torch.tensor(CLIP_STD).view(1, 3, 1, 1)
        images = {}
        items = list(image_items(args.data))
        for i in range(0, len(items), args.batch_size):
            chunk = items[i:i + args.batch_size]
            pixels = []
            for _, path in chunk:
                img = Image.open(path).convert("RGB").resize((args.image_size, args.image_size), Image.BILINEAR)
                pixels.append(torch.from_numpy(np.asarray(img, dtype=np.float32) / 255.0).permute(2, 0, 1))
            batch = ((torch.stack(pixels) - mean) / std).to(args.device)
            for (sample_id, _), v in zip(chunk, unit_rows(model.get_image_features(pixel_values=batch))):
                images[sample_id] = v.tolist()

    dim = len(next(iter(text.values())))
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps({"backbone": args.backbone, "dim": dim, "image_size": args.image_size,
                                    "text": text, "images": images}))
    print(f"wrote {len(text)} prompts and {len(images)} images ({dim}-d) to {args.out}")


if __name__ == "__main__":
    main()
