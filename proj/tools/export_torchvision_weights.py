#!/usr/bin/env python3
"""Export a torchvision classifier into the CSTW tensor archive read by clipstrike.

    python tools/export_torchvision_weights.py --arch densenet121 --num-classes 10 \
        --finetune data/cifar10 --epochs 3 --out weights/densenet121-cifar10.cstw

The classification head is replaced by a fresh `--num-classes` layer. Pass
`--finetune <dataset root>` (the layout written by `clipstrike ingest`) to train
the network on that data first, or `--state-dict` to load weights fine-tuned
elsewhere.
"""

import argparse
import json
import struct
from pathlib import Path

import numpy as np
import torch
import torchvision
from PIL import Image

ARCHS = ["vgg16", "vgg19", "resnet18", "resnet50", "resnet152", "densenet121", "densenet169"]
IMAGENET_MEAN = [0.485, 0.456, 0.406]
IMAGENET_STD = [0.229, 0.224, 0.225]


def build(arch, num_classes, pretrained):
    model = getattr(torchvision.models, arch)(weights="DEFAULT" if pretrained else None)
    if arch.startswith("vgg"):
        model.classifier[6] = torch.nn.Linear(model.classifier[6].in_features, num_classes)
    elif arch.startswith("resnet"):
        model.fc = torch.nn.Linear(model.fc.in_features, num_classes)
    else:
        model.classifier = torch.nn.Linear(model.classifier.in_features, num_classes)
    return model


class LayoutDataset(torch.utils.data.Dataset):
    """<root>/classes.txt, <root>/<split>/<id>.json + image."""

    def __init__(self, root, split, size):
        root = Path(root)
        self.classes = [c for c in (root / "classes.txt").read_text().splitlines() if c]
        meta = root / "meta.json"
        self.multilabel = meta.exists() and json.loads(meta.read_text()).get("multilabel", False)
        self.items = []
        for sidecar in sorted((root / split).glob("*.json")):
            image = next((sidecar.with_suffix(e) for e in (".png", ".jpg", ".jpeg") if sidecar.with_suffix(e).exists()), None)
            if image is None:
                continue
            labels = [self.classes.index(n) for n in json.loads(sidecar.read_text())["labels"]]
            self.items.append((image, labels))
        self.transform = torchvision.transforms.Compose([
            torchvision.transforms.Resize((size, size)),
            torchvision.transforms.ToTensor(),
            torchvision.transforms.Normalize(IMAGENET_MEAN, IMAGENET_STD),
        ])

    def __len__(self):
        return len(self.items)

    def __getitem__(self, i):
        path, labels = self.items[i]
        x = self.transform(Image.open(path).convert("RGB"))
        if self.multilabel:
            y = torch.zeros(len(self.classes))
            y[labels] = 1.0
        else:
            y = torch.tensor(labels[0])
        return x, y


def finetune(model, root, epochs, lr, batch_size, size, device):
    data = LayoutDataset(root, "train", size)
    if len(data.classes) != model_classes(model):
        raise SystemExit(f"{root} has {len(data.classes)} classes but --num-classes is {model_classes(model)}")
    loader = torch.utils.data.DataLoader(data, batch_size=batch_size, shuffle=True, num_workers=2)
    loss_fn = torch.nn.BCEWithLogitsLoss() if data.multilabel else torch.nn.CrossEntropyLoss()
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)
    model.to(device).train()
    for epoch in range(epochs):
        total, count = 0.0, 0
        for x, y in loader:
            x, y = x.to(device), y.to(device)
            optimizer.zero_grad()
            loss = loss_fn(model(x), y)
            loss.backward()
            optimizer.step()
            total += loss.item() * len(x)
            count += len(x)
        print(f"epoch {epoch + 1}/{epochs}: loss {total / max(count, 1):.4f}")
    model.cpu().eval()


def model_classes(model):
    head = list(model.modules())[-1]
    return head.out_features


def write_archive(path, tensors, metadata):
    """CSTW v1: magic, u32 version, u64 meta_len, meta, u64 count, entries in name order."""
    meta = json.dumps(metadata, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(b"CSTW")
        f.write(struct.pack("<I", 1))
        f.write(struct.pack("<Q", len(meta)))
        f.write(meta)
        f.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            value = np.ascontiguousarray(tensors[name], dtype="<f8")
            encoded = name.encode()
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", 1))
            f.write(struct.pack("<I", value.ndim))
            for d in value.shape:
                f.write(struct.pack("<q", d))
            f.write(value.tobytes())


def main():
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--arch", required=True, choices=ARCHS)
    parser.add_argument("--num-classes", type=int, required=True)
    parser.add_argument("--out", required=True, type=Path)
    parser.add_argument("--state-dict", type=Path, help="fine-tuned torch state_dict to load before export")
    parser.add_argument("--finetune", type=Path, help="dataset root to fine-tune on before export")
    parser.add_argument("--epochs", type=int, default=3)
    parser.add_argument("--lr", type=float, default=1e-4)
    parser.add_argument("--batch-size", type=int, default=32)
    parser.add_argument("--image-size", type=int, default=224)
    parser.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    parser.add_argument("--no-pretrained", action="store_true", help="start from random weights")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    torch.manual_seed(args.seed)
    model = build(args.arch, args.num_classes, not args.no_pretrained)
    if args.state_dict:
        model.load_state_dict(torch.load(args.state_dict, map_location="cpu"))
    if args.finetune:
        finetune(model, args.finetune, args.epochs, args.lr, args.batch_size, args.image_size, args.device)
    model.eval()

    tensors = {name: t.detach().cpu().double().numpy() for name, t in model.state_dict().items()
               if not name.endswith("num_batches_tracked")}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_archive(args.out, tensors, {"arch": args.arch, "num_classes": args.num_classes, "source": "torchvision"})
    print(f"wrote {len(tensors)} tensors to {args.out}")


if __name__ == "__main__":
    main()
