"""Cross-component check of the checkpoint exporter: its MKYT files must load
through the tensor store with stats matching its manifest, and activation
profiles must be stable across profiling seeds.

Runs only when node and the built exporter are available (exporter/: npm
install && npm run build).
"""

import json
import shutil
import struct
import subprocess
from pathlib import Path

import numpy as np
import pytest

from expquant.tensorstore import compute_stats, load_tensor

EXPORTER = Path(__file__).resolve().parent.parent / "exporter" / "dist" / "cli.js"

pytestmark = pytest.mark.skipif(
    shutil.which("node") is None or not EXPORTER.exists(),
    reason="node or built exporter not available",
)


def write_safetensors(path, tensors):
    header = {}
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        nbytes = arr.size * 4
        header[name] = {
            "dtype": "F32",
            "shape": list(arr.shape),
            "data_offsets": [offset, offset + nbytes],
        }
        payloads.append(arr.tobytes())
        offset += nbytes
    hbytes = json.dumps(header).encode()
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(hbytes)))
        f.write(hbytes)
        for p in payloads:
            f.write(p)


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    rng = np.random.default_rng(99)
    dim, vocab, hidden = 32, 64, 64
    t = {
        "embed.weight": rng.standard_normal((vocab, dim)),
        "ln1.weight": np.ones(dim),
        "ln1.bias": np.zeros(dim),
        "attn.q.weight": rng.standard_normal((dim, dim)) / np.sqrt(dim),
        "attn.k.weight": rng.standard_normal((dim, dim)) / np.sqrt(dim),
        "attn.v.weight": rng.standard_normal((dim, dim)) / np.sqrt(dim),
        "attn.o.weight": rng.standard_normal((dim, dim)) / np.sqrt(dim),
        "ln2.weight": np.ones(dim),
        "ln2.bias": np.zeros(dim),
        "mlp.fc1.weight": rng.standard_normal((dim, hidden)) / np.sqrt(dim),
        "mlp.fc2.weight": rng.standard_normal((hidden, dim)) / np.sqrt(hidden),
    }
    p = tmp_path_factory.mktemp("ckpt") / "block.safetensors"
    write_safetensors(p, t)
    return p


def run_exporter(*args):
    res = subprocess.run(["node", str(EXPORTER), *map(str, args)],
                         capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    return res


def check_manifest_against_store(out_dir):
    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert manifest["tensors"]
    for entry in manifest["tensors"]:
        t = load_tensor(out_dir / entry["file"])
        assert list(t.shape) == entry["shape"]
        s = compute_stats(t)
        for key in ("mean", "std", "min", "max"):
            want = entry["stats"][key]
            got = getattr(s, key)
            denom = max(abs(want), 1e-12)
            assert abs(got - want) / denom < 1e-6, (entry["name"], key, got, want)
        assert s.count == entry["stats"]["count"]
    return manifest


def test_exported_weights_roundtrip(checkpoint, tmp_path):
    out = tmp_path / "weights"
    run_exporter("weights", checkpoint, out)
    manifest = check_manifest_against_store(out)
    assert manifest["kind"] == "weights"
    assert len(manifest["tensors"]) == 11


def test_exported_activations_roundtrip_and_stability(checkpoint, tmp_path):
    """[SECONDARY] acceptance: emitted files load through the tensor store
    with manifest-matching stats; two profiling seeds agree within 5%/hook."""
    out7 = tmp_path / "act7"
    out8 = tmp_path / "act8"
    run_exporter("activations", checkpoint, out7,
                 "--batch", 8, "--seq", 64, "--seed", 7)
    run_exporter("activations", checkpoint, out8,
                 "--batch", 8, "--seq", 64, "--seed", 8)
    m7 = check_manifest_against_store(out7)
    m8 = check_manifest_against_store(out8)
    assert m7["batch"]["size"] == 8
    for e7, e8 in zip(m7["tensors"], m8["tensors"]):
        assert e7["name"] == e8["name"]
        s7, s8 = e7["stats"], e8["stats"]
        assert abs(s7["std"] - s8["std"]) / s7["std"] < 0.05, e7["name"]
        assert abs(s7["mean"] - s8["mean"]) / s7["std"] < 0.05, e7["name"]
