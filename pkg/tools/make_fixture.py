"""Build the committed test fixtures: a 1000-digit IDX subset and a tiny trained model.

Run once, offline:

    pip download --no-deps -d /tmp/mlx mlxtend   # provides mnist_5k.csv.gz
    python tools/make_fixture.py /tmp/mlx/mlxtend-*.whl

The 5000-sample MNIST extract bundled with mlxtend is split into 4000
training and 1000 held-out digits. A small network with the digit-recognition
layout (4, 8, 16 and 10 maps) is trained with the tanh-sigmoid in torch and
exported to the JSON model format. Needs torch, which the package itself does
not import.
"""

from __future__ import annotations

import argparse
import gzip
import io
import zipfile
from pathlib import Path

import numpy as np
import torch
from torch import nn

from multiplierless.engine import infer_reference_batch
from multiplierless.evalharness import preprocess, write_idx
from multiplierless.model import Layer, NetworkModel, save_model

MAPS = (4, 8, 16, 10)
OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def load_csv(wheel: Path) -> np.ndarray:
    with zipfile.ZipFile(wheel) as z:
        raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    return np.loadtxt(io.TextIOWrapper(gzip.GzipFile(fileobj=io.BytesIO(raw))), delimiter=",", dtype=np.int64)


class TanhSigmoid(nn.Module):
    def forward(self, x):
        return 1.7159 * torch.tanh(2.0 / 3.0 * x)


class Pool(nn.Module):
    """Average pooling with one trainable coefficient and bias per map."""

    def __init__(self, maps):
        super().__init__()
        self.coef = nn.Parameter(torch.ones(maps))
        self.bias = nn.Parameter(torch.zeros(maps))

    def forward(self, x):
        y = nn.functional.avg_pool2d(x, 2)
        return y * self.coef[None, :, None, None] + self.bias[None, :, None, None]


class Net(nn.Module):
    def __init__(self):
        super().__init__()
        m1, m2, m3, m4 = MAPS
        self.c1 = nn.Conv2d(1, m1, 5)
        self.s1 = Pool(m1)
        self.c2 = nn.Conv2d(m1, m2, 3)
        self.s2 = Pool(m2)
        self.n1 = nn.Conv2d(m2, m3, 6)
        self.out = nn.Linear(m3, m4)
        self.act = TanhSigmoid()

    def forward(self, x):
        x = self.act(self.c1(x))
        x = self.act(self.s1(x))
        x = self.act(self.c2(x))
        x = self.act(self.s2(x))
        x = self.act(self.n1(x))
        return self.act(self.out(x.flatten(1)))


def export(net: Net) -> NetworkModel:
    sd = {k: v.detach().double().numpy() for k, v in net.state_dict().items()}
    m1, m2, m3, m4 = MAPS
    c1 = Layer.convolution((1, 32, 32), [sd["c1.weight"][o, 0] for o in range(m1)], [(0, o) for o in range(m1)], sd["c1.bias"])
    s1 = Layer.pooling(c1.output_shape, (2, 2), sd["s1.coef"], sd["s1.bias"])
    t2 = [(i, o) for o in range(m2) for i in range(m1)]
    c2 = Layer.convolution(s1.output_shape, [sd["c2.weight"][o, i] for i, o in t2], t2, sd["c2.bias"])
    s2 = Layer.pooling(c2.output_shape, (2, 2), sd["s2.coef"], sd["s2.bias"])
    t3 = [(i, o) for o in range(m3) for i in range(m2)]
    n1 = Layer.convolution(s2.output_shape, [sd["n1.weight"][o, i] for i, o in t3], t3, sd["n1.bias"])
    out = Layer.fully_connected(n1.output_shape, sd["out.weight"], sd["out.bias"])
    return NetworkModel("mnist-tiny", (32, 32, 1), (c1, s1, c2, s2, n1, out), meta={"trained_on": "mlxtend mnist_5k, 4000 samples"})


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("wheel", type=Path)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    data = load_csv(args.wheel)
    rng = np.random.default_rng(args.seed)
    order = rng.permutation(len(data))
    test, train = order[:1000], order[1000:]
    images = data[:, :784].reshape(-1, 28, 28).astype(np.uint8)
    labels = data[:, 784].astype(np.uint8)

    OUT.mkdir(parents=True, exist_ok=True)
    write_idx(OUT / "digits-1k-images.idx3-ubyte.gz", images[test])
    write_idx(OUT / "digits-1k-labels.idx1-ubyte.gz", labels[test])

    torch.manual_seed(args.seed)
    x_train = torch.tensor(preprocess(images[train], (32, 32))[:, None], dtype=torch.float32)
    y_train = torch.tensor(labels[train], dtype=torch.long)
    x_test = torch.tensor(preprocess(images[test], (32, 32))[:, None], dtype=torch.float32)
    y_test = torch.tensor(labels[test], dtype=torch.long)

    net = Net()
    opt = torch.optim.Adam(net.parameters(), lr=3e-3)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, args.epochs)
    loss_fn = nn.CrossEntropyLoss()
    for epoch in range(args.epochs):
        net.train()
        perm = torch.randperm(len(x_train))
        for i in range(0, len(perm), 64):
            idx = perm[i : i + 64]
            opt.zero_grad()
            # outputs are bounded by 1.7159; the factor 3 sharpens the softmax
            loss = loss_fn(3.0 * net(x_train[idx]), y_train[idx])
            loss.backward()
            opt.step()
        sched.step()
        net.eval()
        with torch.no_grad():
            acc = (net(x_test).argmax(1) == y_test).float().mean().item()
        print(f"epoch {epoch + 1:3d}  held-out accuracy {acc:.4f}")

    model = export(net)
    with torch.no_grad():
        ref = net(x_test[:50]).double().numpy()
    ours = infer_reference_batch(model, x_test[:50, 0].double().numpy())
    print("max |torch - reference engine| =", float(np.abs(ref - ours).max()))
    save_model(model, OUT / "mnist_tiny.json")


if __name__ == "__main__":
    main()
