"""Trains the Network4 MNIST CNN and writes an OIMD model plus a test fixture.

Input: a directory of per-digit JSON files (`{"data": [...]}`, 784 values in
[0, 1] per image), as shipped by the `mnist` npm package under src/digits.

    python3 tools/train_network4.py /path/to/digits --out crates/core/tests/fixtures

Writes network4_mnist.oimd and mnist_test100.json. Needs torch and the
`oinf` Python module (for the network descriptor).
"""

import argparse
import json
import struct
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

import oinf


class Net4(nn.Module):
    # no biases: the secure layers only carry weights
    def __init__(self):
        super().__init__()
        self.c1 = nn.Conv2d(1, 16, 5, bias=False)
        self.c2 = nn.Conv2d(16, 16, 5, bias=False)
        self.f1 = nn.Linear(256, 100, bias=False)
        self.f2 = nn.Linear(100, 10, bias=False)

    def forward(self, x):
        x = F.avg_pool2d(F.relu(self.c1(x)), 2)
        x = F.avg_pool2d(F.relu(self.c2(x)), 2)
        x = F.relu(self.f1(x.flatten(1)))
        return self.f2(x)


def load_digits(root):
    xs, ys = [], []
    for d in range(10):
        raw = json.loads((Path(root) / f"{d}.json").read_text())["data"]
        n = len(raw) // 784
        xs.append(torch.tensor(raw[: n * 784], dtype=torch.float32).view(n, 1, 28, 28))
        ys.append(torch.full((n,), d, dtype=torch.long))
    return torch.cat(xs), torch.cat(ys)


def write_oimd(path, desc_json, tensors):
    ring = json.loads(desc_json)["ring"]
    body = desc_json.encode()
    with open(path, "wb") as f:
        f.write(b"OIMD")
        f.write(struct.pack("<HBBI", 1, ring["t"], ring["f"], len(body)))
        f.write(body)
        for t in tensors:
            flat = t.detach().double().flatten().tolist()
            f.write(struct.pack("<Q", len(flat)))
            f.write(struct.pack(f"<{len(flat)}d", *flat))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("digits")
    ap.add_argument("--out", default="crates/core/tests/fixtures")
    ap.add_argument("--epochs", type=int, default=12)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=7)
    a = ap.parse_args()

    torch.manual_seed(a.seed)
    x, y = load_digits(a.digits)
    perm = torch.randperm(len(y))
    x, y = x[perm], y[perm]
    xt, yt, xv, yv = x[a.test :], y[a.test :], x[: a.test], y[: a.test]

    net = Net4()
    opt = torch.optim.Adam(net.parameters(), lr=2e-3)
    sched = torch.optim.lr_scheduler.StepLR(opt, step_size=4, gamma=0.5)
    for ep in range(a.epochs):
        net.train()
        order = torch.randperm(len(yt))
        for i in range(0, len(order), 64):
            idx = order[i : i + 64]
            opt.zero_grad()
            F.cross_entropy(net(xt[idx]), yt[idx]).backward()
            opt.step()
        sched.step()
        net.eval()
        with torch.no_grad():
            acc = (net(xv).argmax(1) == yv).float().mean().item()
        print(f"epoch {ep + 1}: held-out accuracy {acc:.4f}")

    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_oimd(
        out / "network4_mnist.oimd",
        oinf.network("network4"),
        [net.c1.weight, net.c2.weight, net.f1.weight, net.f2.weight],
    )
    with torch.no_grad():
        pred = net(xv[:100]).argmax(1)
    fixture = {
        "pixels": [[round(v * 255) for v in img.flatten().tolist()] for img in xv[:100]],
        "labels": yv[:100].tolist(),
        "float_predictions": pred.tolist(),
    }
    (out / "mnist_test100.json").write_text(json.dumps(fixture, separators=(",", ":")))
    print(f"first 100 held-out: {(pred == yv[:100]).sum().item()} correct")


if __name__ == "__main__":
    main()
