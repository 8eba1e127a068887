"""Command-line pipeline driver.

Subcommands: gen-golden, quantize, pack, unpack, matmul, verify, simulate,
eval. Every command is deterministic given --seed and emits both a human
summary on stdout and machine-readable JSON next to its outputs.
"""

import argparse
import json
import sys

import numpy as np

from . import engine, golden, packing, quantize, sim
from .tensorstore import Tensor, compute_stats, load_tensor, save_tensor


def _write_json(doc, path):
    with open(path, "w") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def cmd_gen_golden(args):
    gd = golden.generate_golden_dictionary(
        samples=args.samples, clusters=args.clusters, repeats=args.repeats,
        seed=args.seed)
    fit = golden.fit_exponential(gd)
    golden.save_golden(gd, fit, args.out)
    print(f"magnitudes: {[round(m, 6) for m in gd.magnitudes]}")
    print(f"a={fit.a:.6f} b={fit.b:.6f} residual={fit.residual:.3e}")
    print(f"wrote {args.out}")
    return 0


def _quantize_one(tensor, fit, samples):
    if samples:
        sample_tensors = [load_tensor(p) for p in samples]
        d = quantize.profile_activations(sample_tensors + [tensor], fit)
    else:
        d = quantize.build_tensor_dictionary(compute_stats(tensor), fit, tensor)
    return quantize.encode_tensor(tensor, d)


def cmd_quantize(args):
    tensor = load_tensor(args.tensor)
    _, fit = golden.load_golden(args.golden)
    q = _quantize_one(tensor, fit, args.activations)
    p = packing.pack(q)
    packing.save_packed(p, args.out)
    quantize.save_sidecar(q.dict, args.out + ".dict.json", aux_counts=q.aux_counts)
    shape_doc = {"shape": list(q.shape)}
    _write_json(shape_doc, args.out + ".shape.json")
    print(f"elements={q.size} outlier_fraction={q.outlier_fraction():.5f} "
          f"bits_per_value={packing.measure(p):.4f}")
    print(f"wrote {args.out} (+.dict.json, +.shape.json)")
    return 0


def cmd_pack(args):
    q, _ = _load_quantized(args.codes)
    p = packing.pack(q)
    packing.save_packed(p, args.out)
    print(f"bits_per_value={packing.measure(p):.4f} bytes={packing.packed_byte_size(p)}")
    return 0


def _load_quantized(path):
    p = packing.load_packed(path)
    d, aux = quantize.load_sidecar(path + ".dict.json")
    q = packing.unpack(p, d)
    try:
        with open(path + ".shape.json") as f:
            q.shape = tuple(json.load(f)["shape"])
    except FileNotFoundError:
        pass
    return q, p


def cmd_unpack(args):
    q, _ = _load_quantized(args.packed)
    t = quantize.decode_tensor(q)
    t.shape = q.shape
    save_tensor(t, args.out)
    print(f"decoded {q.size} elements -> {args.out} (fx16, frac={t.frac_bits})")
    return 0


def cmd_matmul(args):
    qa, _ = _load_quantized(args.qa)
    qw, _ = _load_quantized(args.qw)
    out = engine.gemm(qa, qw)
    save_tensor(out, args.out)
    r = engine.dot(quantize.QuantizedTensor((qa.shape[1],), qa.codes[:qa.shape[1]], qa.dict),
                   quantize.QuantizedTensor((qw.shape[0],),
                                            qw.codes.reshape(qw.shape)[:, 0], qw.dict))
    breakdown = {k: float(v) for k, v in r.breakdown.items()}
    _write_json({"first_dot_breakdown": breakdown,
                 "out_frac": out.frac_bits}, args.out + ".breakdown.json")
    print(f"gemm {qa.shape} x {qw.shape} -> {out.shape}, frac={out.frac_bits}")
    return 0


def cmd_verify(args):
    qa, _ = _load_quantized(args.qa)
    qw, _ = _load_quantized(args.qw)
    consts = engine.EngineConstants.from_dicts(qa.dict, qw.dict)
    k = qa.shape[-1]
    out_fmt = consts.output_format(k)
    rows = qa.codes.reshape(-1, k)
    cols = qw.codes.reshape(k, -1)
    worst = 0
    for i in range(rows.shape[0]):
        for j in range(cols.shape[1]):
            got = engine.dot(rows[i], cols[:, j], consts, out_fmt).value
            want = engine.centroid_mac_oracle(rows[i], cols[:, j], qa.dict,
                                              qw.dict, out_fmt)
            worst = max(worst, abs(got - want))
    print(f"max discrepancy (grid steps): {worst}")
    return 0 if worst == 0 else 1


def cmd_simulate(args):
    qa, _ = _load_quantized(args.qa)
    qw, _ = _load_quantized(args.qw)
    cfg = sim.TileConfig(gpe_count=args.gpes, counter_bits=args.counter_bits)
    stats = sim.simulate_layer(qa, qw, cfg, tiles=args.tiles)
    text = sim.report(stats)
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    print(text, end="")
    return 0


def cmd_eval(args):
    original = load_tensor(args.tensor)
    q, p = _load_quantized(args.quantized)
    decoded = quantize.decode_tensor(q)
    x = original.values()
    y = decoded.values()
    if x.size != y.size:
        print("error: element counts differ", file=sys.stderr)
        return 1
    err = x - y
    doc = {
        "rmse": float(np.sqrt(np.mean(err ** 2))),
        "max_abs_error": float(np.max(np.abs(err))),
        "outlier_fraction": q.outlier_fraction(),
        "bits_per_value": packing.measure(p),
    }
    if args.out:
        _write_json(doc, args.out)
    print(json.dumps(doc, indent=2))
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="expquant",
                                 description="curve-dictionary quantization toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    sub = ap.add_subparsers(dest="command")

    g = sub.add_parser("gen-golden", parents=[common],
                       help="generate the reference dictionary and fit")
    g.add_argument("--samples", type=int, default=50000)
    g.add_argument("--clusters", type=int, default=16)
    g.add_argument("--repeats", type=int, default=10)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_golden)

    qz = sub.add_parser("quantize", parents=[common], help="encode a tensor against a golden file")
    qz.add_argument("tensor")
    qz.add_argument("golden")
    qz.add_argument("--activations", nargs="*", default=[],
                    help="extra sample tensors pooled into the dictionary")
    qz.add_argument("--out", required=True)
    qz.set_defaults(func=cmd_quantize)

    pk = sub.add_parser("pack", parents=[common], help="re-pack quantized codes")
    pk.add_argument("codes")
    pk.add_argument("--out", required=True)
    pk.set_defaults(func=cmd_pack)

    up = sub.add_parser("unpack", parents=[common], help="decode packed codes to fx16")
    up.add_argument("packed")
    up.add_argument("--out", required=True)
    up.set_defaults(func=cmd_unpack)

    mm = sub.add_parser("matmul", parents=[common], help="quantized GEMM with term breakdown dump")
    mm.add_argument("qa")
    mm.add_argument("qw")
    mm.add_argument("--out", required=True)
    mm.set_defaults(func=cmd_matmul)

    vf = sub.add_parser("verify", parents=[common], help="engine vs direct-MAC oracle; nonzero on mismatch")
    vf.add_argument("qa")
    vf.add_argument("qw")
    vf.set_defaults(func=cmd_verify)

    sm = sub.add_parser("simulate", parents=[common], help="tile timing for a quantized GEMM")
    sm.add_argument("qa")
    sm.add_argument("qw")
    sm.add_argument("--gpes", type=int, default=8)
    sm.add_argument("--counter-bits", type=int, default=8)
    sm.add_argument("--tiles", type=int, default=1)
    sm.add_argument("--group-size", type=int, default=64)
    sm.add_argument("--out", default=None)
    sm.set_defaults(func=cmd_simulate)

    ev = sub.add_parser("eval", parents=[common], help="quantization error report")
    ev.add_argument("tensor")
    ev.add_argument("quantized")
    ev.add_argument("--out", default=None)
    ev.set_defaults(func=cmd_eval)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if not getattr(args, "command", None):
        ap.print_help()
        return 0
    try:
        return args.func(args)
    except Exception as e:  # single place turning failures into exit codes
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
