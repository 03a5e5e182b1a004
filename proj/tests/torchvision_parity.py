#!/usr/bin/env python3
"""Exports randomly initialised torchvision models and checks clipstrike reproduces their logits."""

import subprocess
import sys
import tempfile
from pathlib import Path

import torch

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tools"))
import export_torchvision_weights as export  # noqa: E402


def main():
    binary = sys.argv[1]
    archs = sys.argv[2:] or ["resnet18", "densenet121"]
    torch.manual_seed(0)
    failed = 0
    with tempfile.TemporaryDirectory() as tmp:
        for arch in archs:
            model = export.build(arch, 4, pretrained=False).double().eval()
            for m in model.modules():
                if isinstance(m, torch.nn.BatchNorm2d):
                    m.running_mean.uniform_(-0.1, 0.1)
                    m.running_var.uniform_(0.5, 1.5)
                    m.weight.data.uniform_(0.5, 1.5)
                    m.bias.data.uniform_(-0.1, 0.1)
            x = torch.rand(2, 3, 224, 224, dtype=torch.float64)
            mean = torch.tensor(export.IMAGENET_MEAN, dtype=torch.float64).view(1, 3, 1, 1)
            std = torch.tensor(export.IMAGENET_STD, dtype=torch.float64).view(1, 3, 1, 1)
            with torch.no_grad():
                logits = model((x - mean) / std)
            weights = Path(tmp) / f"{arch}.cstw"
            io = Path(tmp) / f"{arch}.io.cstw"
            tensors = {n: t.numpy() for n, t in model.state_dict().items() if not n.endswith("num_batches_tracked")}
            export.write_archive(weights, tensors, {"arch": arch})
            export.write_archive(io, {"x": x.numpy(), "logits": logits.numpy()}, {})
            failed += subprocess.run([binary, arch, str(weights), str(io)]).returncode != 0
    sys.exit(1 if failed else 0)


if __name__ == "__main__":
    main()
