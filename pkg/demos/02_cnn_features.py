"""Run one patch through the forward-only network and compare the two
feature taps."""

import time

import numpy as np

from mammopatch import (
    architecture,
    forward_with_tap,
    prepare_input,
    seeded_random_network,
)

# The layer plan: sixteen 3x3 convolutions in five pooled blocks, then
# three fully connected layers. Only the first two FC layers ever run
# here; the classifier head is skipped by both taps.
plan = architecture()
convs = [s for s in plan if s.kind == "conv3x3"]
pools = [s for s in plan if s.kind == "maxpool2x2"]
print(f"{len(convs)} conv layers, {len(pools)} pooling stages")
for spec in convs:
    print(f"  {spec.name}: {spec.in_channels} -> {spec.out_channels} channels")

# A seeded random weight set stands in for pretrained weights; the same
# seed always reproduces the same tensors.
t0 = time.time()
net = seeded_random_network(42)
print(f"\nbuilt weight set in {time.time() - t0:.1f}s "
      f"({len(net.weights)} tensors)")

# Any single-channel patch is accepted: it is resized to 224x224 with
# bilinear interpolation and replicated onto three channels.
rng = np.random.default_rng(1)
patch = (rng.random((64, 64)) * 16000).astype(np.uint16)
x = prepare_input(patch)
print(f"prepared input shape {x.shape}, range "
      f"[{x.min():.3f}, {x.max():.3f}]")

for tap in ("flatten", "fc2"):
    t0 = time.time()
    v = forward_with_tap(net, x, tap)
    print(f"tap {tap!r}: {v.size} features in {time.time() - t0:.2f}s, "
          f"{int((v > 0).sum())} nonzero")
