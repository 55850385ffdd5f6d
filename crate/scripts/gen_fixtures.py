#!/usr/bin/env python3
"""Writes the model catalog, device file and golden timing table under fixtures/.

Per-block parameter counts and FLOPs are computed from the layer shapes of
each architecture at 224x224 input. Lower-precision variants shrink the
payload with the bit width and carry a reduced effective workload.
"""

import json
import math
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
OUT = ROOT / "fixtures"

PRECISIONS = [("fp32", 32, 1.0, 0.0), ("fp16", 16, 0.6, -0.003), ("int8", 8, 0.8, -0.03)]
DOMAINS = 4
TASK_TYPES = 10
BASE_ACCURACY = {"resnet18": 0.86, "resnet34": 0.89, "resnet50": 0.915, "deit_s": 0.935}
DOMAIN_OFFSET = [0.0, -0.02, 0.01, -0.01]


def conv(cin, cout, k, hw):
    params = cin * cout * k * k
    return params, 2 * params * hw * hw


def basic_block(cin, cout, hw):
    p1, f1 = conv(cin, cout, 3, hw)
    p2, f2 = conv(cout, cout, 3, hw)
    p, f = p1 + p2, f1 + f2
    if cin != cout:
        pd, fd = conv(cin, cout, 1, hw)
        p, f = p + pd, f + fd
    return p, f


def bottleneck(cin, width, hw):
    cout = 4 * width
    parts = [conv(cin, width, 1, hw), conv(width, width, 3, hw), conv(width, cout, 1, hw)]
    if cin != cout:
        parts.append(conv(cin, cout, 1, hw))
    return sum(p for p, _ in parts), sum(f for _, f in parts)


def stem():
    return conv(3, 64, 7, 112)


def resnet(blocks, bottlenecked):
    layers = [stem()]
    cin = 64
    for stage, count in enumerate(blocks):
        width = 64 * 2**stage
        hw = 56 // 2**stage
        for _ in range(count):
            if bottlenecked:
                layers.append(bottleneck(cin, width, hw))
                cin = 4 * width
            else:
                layers.append(basic_block(cin, width, hw))
                cin = width
    layers.append((cin * 1000 + 1000, 2 * cin * 1000))
    return layers


def deit_small():
    dim, tokens, mlp = 384, 197, 1536
    embed = (3 * 16 * 16 * dim + tokens * dim, 2 * 3 * 16 * 16 * dim * 196)
    block_params = 4 * dim * dim + 2 * dim * mlp
    block_flops = 2 * tokens * block_params + 4 * tokens * tokens * dim
    head = (dim * 1000 + 1000, 2 * dim * 1000)
    return [embed] + [(block_params, block_flops)] * 12 + [head]


ARCHS = {
    "resnet18": resnet([2, 2, 2, 2], False),
    "resnet34": resnet([3, 4, 6, 3], False),
    "resnet50": resnet([3, 4, 6, 3], True),
    "deit_s": deit_small(),
}


def catalog():
    models = []
    mid = 0
    for domain in range(DOMAINS):
        tasks = [t for t in range(TASK_TYPES) if t % DOMAINS == domain]
        for arch, layers in ARCHS.items():
            for tag, bits, work, acc_shift in PRECISIONS:
                acc = BASE_ACCURACY[arch] + DOMAIN_OFFSET[domain] + acc_shift
                models.append(
                    {
                        "id": mid,
                        "name": f"{arch}-{tag}-d{domain}",
                        "precision": tag,
                        "accuracy": round(acc, 4),
                        "tasks": tasks,
                        "layers": [
                            {"size_bits": float(p * bits), "flops": float(f * work)} for p, f in layers
                        ],
                    }
                )
                mid += 1
    return {"models": models}


DEVICES = {
    "orin-nano": {
        "gpu_freq_hz": 624.75e6,
        "cycles_per_flop": 0.04,
        "power_coeff": 5.0 / 624.75e6**3,
        "mem_to_gpu_rate_bps": 3.2e10,
        "instantiation_latency_s": 0.05,
        "instantiation_energy_j": 0.3,
        "rated_power_w": 5.0,
    },
    "orin-nx": {
        "gpu_freq_hz": 918e6,
        "cycles_per_flop": 0.04,
        "power_coeff": 10.0 / 918e6**3,
        "mem_to_gpu_rate_bps": 6.4e10,
        "instantiation_latency_s": 0.035,
        "instantiation_energy_j": 0.5,
        "rated_power_w": 10.0,
    },
}


def golden(cat):
    """Full-speed per-layer inference times of resnet18-fp32 on the nano."""
    dev = DEVICES["orin-nano"]
    model = cat["models"][0]
    rows = []
    for layer in model["layers"]:
        memcpy = layer["size_bits"] / dev["mem_to_gpu_rate_bps"]
        compute = layer["flops"] * dev["cycles_per_flop"] / dev["gpu_freq_hz"]
        rows.append({"memcpy_s": memcpy, "compute_s": compute, "total_s": memcpy + compute})
    return {"model_id": model["id"], "device": "orin-nano", "batch_size": 1, "layers": rows}


def main():
    OUT.mkdir(exist_ok=True)
    cat = catalog()
    (OUT / "catalog.json").write_text(json.dumps(cat, indent=1) + "\n")
    (OUT / "devices.json").write_text(json.dumps({"devices": DEVICES}, indent=1) + "\n")
    (OUT / "golden_resnet18_nano.json").write_text(json.dumps(golden(cat), indent=1) + "\n")
    for m in cat["models"][:12]:
        size_mb = sum(l["size_bits"] for l in m["layers"]) / 8e6
        gflops = sum(l["flops"] for l in m["layers"]) / 1e9
        print(f"{m['name']:>22} L={len(m['layers']):2d} {size_mb:7.2f} MB {gflops:6.2f} GFLOP acc={m['accuracy']}")
    assert math.isclose(len(cat["models"]), 48)


if __name__ == "__main__":
    main()
