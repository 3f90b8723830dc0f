"""Command-line entry point: ``halfcnn <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import dataset, gradcheck, io, metrics, retrieval
from . import network as nw
from . import optim
from .errors import ConfigError, HalfCNNError, InputError
from .tensor import block_downsample, pad_zero

log = logging.getLogger("halfcnn")


def _open_out(path):
    return open(path, "w", newline="") if path and path != "-" else sys.stdout


def _close_out(fh):
    if fh is not sys.stdout:
        fh.close()


# -- train / predict -----------------------------------------------------------

def cmd_train(args) -> int:
    spec = io.load_spec(args.spec_file)
    if args.factor != spec.target_factor:
        raise ConfigError(f"--factor {args.factor} does not match the spec's factor {spec.target_factor}")
    records = io.read_manifest(args.manifest)
    samples = dataset.load_samples(records, args.canvas, args.canvas, args.factor, spec.input_channels)
    net = nw.build(spec, seed=args.seed)
    loss_cfg = nw.LossConfig(args.lam)
    if args.optimizer == "lbfgs":
        cfg = optim.LbfgsConfig(memory=args.memory, max_iterations=args.max_iter,
                                gradient_tolerance=args.grad_tol)
        result = optim.lbfgs_train(net, samples, cfg, loss_cfg,
                                   callback=lambda r: log.info("iter %d  f=%.6g  |g|=%.3g", r.iteration,
                                                               r.objective, r.grad_max_norm))
        if args.trace:
            optim.write_trace_csv(result.trace, args.trace)
        first, last = result.trace[0].objective, result.trace[-1].objective
        print(f"lbfgs: {result.status} after {len(result.trace) - 1} iterations, "
              f"objective {first:.6g} -> {last:.6g}")
    else:
        cfg = optim.SgdConfig(args.lr, args.momentum, args.epochs, args.batch_size, args.seed)
        result = optim.sgd_train(net, samples, cfg, loss_cfg)
        if args.trace:
            with open(args.trace, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["epoch", "loss"])
                for i, v in enumerate(result.epoch_losses, 1):
                    w.writerow([i, repr(v)])
        print(f"sgd: {len(result.epoch_losses)} epochs, status {result.status}, "
              f"final loss {result.epoch_losses[-1] if result.epoch_losses else float('nan'):.6g}")
    io.save_checkpoint(net, args.out)
    return 0


def _write_any_map(m, path) -> None:
    if str(path).lower().endswith(".pgm"):
        io.write_map(m, path)
    else:
        io.write_raw_map(m, path)


def cmd_predict(args) -> int:
    net = io.load_checkpoint(args.ckpt)
    image = io.read_image(args.image)
    if image.shape[0] != net.spec.input_channels:
        image = _convert_channels(image, net.spec.input_channels)
    _write_any_map(dataset.predict_image(net, image), args.out_map)
    return 0


def _convert_channels(image, channels):
    if channels == 1:
        return image.mean(axis=0, keepdims=True)
    if image.shape[0] == 1:
        return np.repeat(image, channels, axis=0)
    raise InputError(f"cannot convert a {image.shape[0]}-channel image to {channels} channels")


# -- evaluation ----------------------------------------------------------------

class _MapSource:
    """Predicted maps from a checkpoint or from a directory of ``<id>.map`` files."""

    def __init__(self, ckpt, maps_dir, factor):
        if (ckpt is None) == (maps_dir is None):
            raise InputError("give exactly one of --ckpt or --maps")
        self.net = io.load_checkpoint(ckpt) if ckpt else None
        self.maps_dir = Path(maps_dir) if maps_dir else None
        self.factor = self.net.factor if self.net else factor
        if self.net and factor is not None and factor != self.net.factor:
            raise ConfigError(f"--factor {factor} does not match the checkpoint's factor {self.net.factor}")
        if self.factor is None:
            raise InputError("--factor is required with --maps")

    def __call__(self, rec: io.Record):
        if self.net is not None:
            image = io.read_image(rec.image_path)
            if image.shape[0] != self.net.spec.input_channels:
                image = _convert_channels(image, self.net.spec.input_channels)
            return dataset.predict_image(self.net, image)
        return io.read_map(self.maps_dir / f"{rec.image_id}.map")


def cmd_eval_detection(args) -> int:
    records = io.read_manifest(args.manifest)
    source = _MapSource(args.ckpt, args.maps, args.factor)
    hold = args.hold if args.hold is not None else (source.net.spec.output_hold if source.net else 1)
    out = _open_out(args.out)
    try:
        w = csv.writer(out)
        w.writerow(["image_id", "n_truth", "n_predicted", "n_matched", "rate"])
        preds, truths = [], []
        for rec in records:
            if rec.kind != "windows":
                raise InputError(f"{rec.image_id}: detection evaluation needs windows records")
            found = retrieval.detect(source(rec), source.factor, args.threshold, hold)
            matched = len(retrieval.match_windows(found, rec.windows, args.iou))
            preds.append(found)
            truths.append(rec.windows)
            rate = matched / len(rec.windows) if rec.windows else 1.0
            w.writerow([rec.image_id, len(rec.windows), len(found), matched, f"{rate:.6f}"])
        total = retrieval.retrieval_rate(preds, truths, args.iou)
        w.writerow(["__all__", sum(map(len, truths)), sum(map(len, preds)),
                    round(total * sum(map(len, truths))), f"{total:.6f}"])
    finally:
        _close_out(out)
    if args.out and args.out != "-":
        print(f"retrieval rate {total:.4f}")
    return 0


def _reference_fixations(rec: io.Record, factor: int, map_shape, top_frac):
    h, w = map_shape
    if rec.kind == "fixations":
        cells = np.unique(np.asarray(rec.fixations).reshape(-1, 2) // factor, axis=0)
        keep = (cells[:, 0] < w) & (cells[:, 1] < h) & (cells >= 0).all(axis=1)
        return metrics.FixationSet(cells[keep], rec.image_id)
    if rec.kind == "map":
        full = io.read_map(rec.map_path)
        _, fh, fw = full.shape
        padded = pad_zero(full, 0, -fh % factor, 0, -fw % factor)
        small = block_downsample(padded, factor)[:, :h, :w]
        return metrics.fixations_from_map(small, top_frac, rec.image_id)
    raise InputError(f"{rec.image_id}: saliency evaluation needs map or fixations records")


def cmd_eval_saliency(args) -> int:
    records = io.read_manifest(args.manifest)
    source = _MapSource(args.ckpt, args.maps, args.factor)
    preds, fixes = [], []
    for rec in records:
        pred = source(rec)
        preds.append(pred)
        fixes.append(_reference_fixations(rec, source.factor, pred.shape[1:], args.top_frac))
    out = _open_out(args.out)
    try:
        w = csv.writer(out)
        w.writerow(["image_id", "auc", "sauc"])
        aucs, saucs = [], []
        for i, (rec, pred, fx) in enumerate(zip(records, preds, fixes)):
            a = metrics.auc(pred, fx)
            others = [f for j, f in enumerate(fixes) if j != i]
            try:
                s = metrics.sauc(pred, fx, others, args.sauc_rounds, args.seed + i)
            except InputError:
                s = float("nan")  # no other image supplies shuffle negatives
            aucs.append(a)
            saucs.append(s)
            w.writerow([rec.image_id, f"{a:.6f}", f"{s:.6f}"])
        finite = [v for v in saucs if not math.isnan(v)]
        mean_sauc = sum(finite) / len(finite) if finite else float("nan")
        w.writerow(["__mean__", f"{np.mean(aucs):.6f}", f"{mean_sauc:.6f}"])
    finally:
        _close_out(out)
    return 0


# -- data ----------------------------------------------------------------------

def cmd_make_gt(args) -> int:
    records = io.read_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for rec in records:
        sample = dataset.record_to_sample(rec, args.canvas, args.canvas, args.factor)
        io.write_raw_map(sample.target, out_dir / f"{rec.image_id}.map")
        io.write_map(sample.target, out_dir / f"{rec.image_id}.pgm")
        io.write_raw_map(sample.mask, out_dir / f"{rec.image_id}.mask.map")
    print(f"wrote {len(records)} target maps to {out_dir}")
    return 0


def cmd_synth(args) -> int:
    size_range = None
    if args.min_size is not None or args.max_size is not None:
        size_range = (args.min_size or args.canvas // 4, args.max_size or args.canvas // 2)
    records = io.synth_dataset(args.n, args.canvas, args.factor, (args.min_windows, args.max_windows),
                               args.seed, args.out_dir, size_range)
    print(f"wrote {len(records)} images to {args.out_dir}")
    return 0


def cmd_gradcheck(args) -> int:
    spec = io.load_spec(args.spec_file)
    d = spec.size_divisor
    size = -(-args.size // d) * d
    ok = True
    for seed in range(args.seed, args.seed + args.seeds):
        reports = [] if args.skip_layers else gradcheck.check_layers(seed, args.tol)
        reports.append(gradcheck.check_network(spec, (spec.input_channels, size, size), seed, args.tol,
                                               lam=args.lam))
        for r in reports:
            print(r.format())
            ok &= r.passed
    print("gradcheck PASSED" if ok else "gradcheck FAILED")
    return 0 if ok else 1


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="halfcnn", description="Whole-image CNN regression toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a network on a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--spec-file", required=True, help="spec file path or bundled name (face, saliency, synth, toy)")
    t.add_argument("--canvas", type=int, default=256)
    t.add_argument("--factor", type=int, default=4)
    t.add_argument("--optimizer", choices=["lbfgs", "sgd"], default="lbfgs")
    t.add_argument("--lambda", dest="lam", type=float, default=1e-4)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)
    t.add_argument("--max-iter", type=int, default=100)
    t.add_argument("--memory", type=int, default=10)
    t.add_argument("--grad-tol", type=float, default=1e-6)
    t.add_argument("--epochs", type=int, default=10)
    t.add_argument("--lr", type=float, default=0.01)
    t.add_argument("--momentum", type=float, default=0.9)
    t.add_argument("--batch-size", type=int, default=8)
    t.add_argument("--trace", help="write the optimisation trace as CSV")
    t.set_defaults(func=cmd_train)

    pr = sub.add_parser("predict", help="predict a map for one image")
    pr.add_argument("--ckpt", required=True)
    pr.add_argument("--image", required=True)
    pr.add_argument("--out-map", required=True, help=".pgm for a preview, anything else for a raw map")
    pr.set_defaults(func=cmd_predict)

    for name, func, helptext in (("eval-detection", cmd_eval_detection, "window retrieval rate"),
                                 ("eval-saliency", cmd_eval_saliency, "AUC / shuffled AUC")):
        e = sub.add_parser(name, help=helptext)
        e.add_argument("--manifest", required=True)
        e.add_argument("--ckpt")
        e.add_argument("--maps", help="directory of <image_id>.map predictions instead of --ckpt")
        e.add_argument("--factor", type=int)
        e.add_argument("--out", help="CSV path (default stdout)")
        if name == "eval-detection":
            e.add_argument("--iou", type=float, default=retrieval.DEFAULT_IOU)
            e.add_argument("--threshold", type=float, default=retrieval.DEFAULT_THRESHOLD)
            e.add_argument("--hold", type=int,
                           help="cell block size on which maps are constant "
                                "(default: from the checkpoint's network, 1 for --maps)")
        else:
            e.add_argument("--top-frac", type=float, default=metrics.DEFAULT_TOP_FRACTION)
            e.add_argument("--sauc-rounds", type=int, default=metrics.DEFAULT_ROUNDS)
            e.add_argument("--seed", type=int, default=0)
        e.set_defaults(func=func)

    g = sub.add_parser("make-gt", help="write target maps for a manifest")
    g.add_argument("--manifest", required=True)
    g.add_argument("--canvas", type=int, default=256)
    g.add_argument("--factor", type=int, default=4)
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_make_gt)

    s = sub.add_parser("synth", help="generate a synthetic detection dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--canvas", type=int, default=64)
    s.add_argument("--factor", type=int, default=4)
    s.add_argument("--min-windows", type=int, default=1)
    s.add_argument("--max-windows", type=int, default=2)
    s.add_argument("--min-size", type=int)
    s.add_argument("--max-size", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    c = sub.add_parser("gradcheck", help="finite-difference check of all backward passes")
    c.add_argument("--spec-file", default="toy")
    c.add_argument("--tol", type=float, default=gradcheck.TOL)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to check")
    c.add_argument("--size", type=int, default=8)
    c.add_argument("--lambda", dest="lam", type=float, default=1e-3)
    c.add_argument("--skip-layers", action="store_true")
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HalfCNNError as exc:
        print(f"halfcnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"halfcnn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
