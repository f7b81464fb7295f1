"""Command-line entry point.

Subcommands: gen (synthetic dataset), normals (descriptor estimation to a
7-column file), train / eval (classification runs), bench (cost model versus
instrumented counters plus neighbor-query timing), oracle-check (the
verification suites). Exit codes: 0 success, 1 runtime failure, 2 usage.

Flags win over ``--config`` file entries ("key = value" lines), which win
over built-in defaults. APPNET_THREADS caps numeric worker threads when set
before heavy imports.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path


def _apply_thread_cap() -> None:
    cap = os.environ.get("APPNET_THREADS")
    if cap:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, cap)


def _read_config_file(path) -> dict:
    table = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}: line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        table[key.replace("-", "_")] = value
    return table


def _resolve(args, file_cfg: dict, name: str, default, cast=None):
    """Flag value if given, else config-file value, else default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in file_cfg:
        raw = file_cfg[name]
        return cast(raw) if cast else raw
    return default


def _int_tuple(text: str) -> tuple:
    return tuple(int(v) for v in text.split(","))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="appnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic labeled dataset")
    gen.add_argument("--classes", type=int, default=4, help="number of shape classes (max 4)")
    gen.add_argument("--train-per-class", type=int, default=200)
    gen.add_argument("--test-per-class", type=int, default=50)
    gen.add_argument("--points", type=int, default=1024)
    gen.add_argument("--noise", type=float, default=0.02)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=cmd_gen)

    normals = sub.add_parser("normals", help="estimate normals and curvature for an xyz file")
    normals.add_argument("--in", dest="in_path", required=True)
    normals.add_argument("--k", type=int, default=16)
    normals.add_argument("--out", required=True)
    normals.set_defaults(func=cmd_normals)

    for name in ("train", "eval"):
        p = sub.add_parser(name, help=f"{name} a classifier")
        p.add_argument("--data", required=True, help="dataset directory holding train.txt/test.txt")
        p.add_argument("--config", help="key = value config file; flags win")
        p.add_argument("--family", choices=["linear", "exp", "sin", "cos"])
        p.add_argument("--style", choices=["aw", "pw"])
        p.add_argument("--input", choices=["xyz", "normal", "normal+curvature"])
        p.add_argument("--epochs", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--checkpoint", help="checkpoint path (output for train, input for eval)")
        p.add_argument("--pooling", choices=["avg_max", "max", "avg", "position_adaptive"])
        p.add_argument("--update-style", dest="update_style", choices=["concat", "no_concat", "residual", "identity"])
        p.add_argument("--posenc", choices=["global", "local", "none"])
        p.add_argument("--pull-mode", dest="pull_mode", choices=["feature_difference", "zero_feature"])
        p.add_argument("--depth", type=int, choices=[2, 3, 4])
        p.add_argument("--ra", type=_int_tuple, help="comma list of per-layer auxiliary rates")
        p.add_argument("--rd", type=_int_tuple, help="comma list of per-layer downsample rates")
        p.add_argument("--sampler", choices=["random", "fps"])
        p.add_argument("--channels", type=_int_tuple, help="comma list of block output widths")
        p.add_argument("--batch", type=int, help="training batch size")
        p.set_defaults(func=cmd_train if name == "train" else cmd_eval)

    bench = sub.add_parser("bench", help="cost model vs instrumented counters, query timing")
    bench.add_argument("--n-list", dest="n_list", type=_int_tuple, default=(1024, 2048, 4096, 8192))
    bench.add_argument("--config", help="key = value config file; flags win")
    bench.add_argument("--baseline", action="store_true", help="include the grouped-kNN baseline table")
    bench.set_defaults(func=cmd_bench)

    oc = sub.add_parser("oracle-check", help="run the verification suites")
    oc.add_argument("--trials", type=int, default=1000)
    oc.add_argument("--precision", choices=["double", "single"], default="double")
    oc.add_argument("--seed", type=int, default=0)
    oc.set_defaults(func=cmd_oracle_check)
    return parser


# -- commands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    from .data import SHAPE_KINDS, build_dataset

    if not 1 <= args.classes <= len(SHAPE_KINDS):
        raise ValueError(f"--classes must lie in [1, {len(SHAPE_KINDS)}]")
    train_m, test_m = build_dataset(
        args.out,
        classes=SHAPE_KINDS[: args.classes],
        per_class_train=args.train_per_class,
        per_class_test=args.test_per_class,
        n_points=args.points,
        noise=args.noise,
        seed=args.seed,
    )
    print(Path(args.out) / "train.txt")
    print(Path(args.out) / "test.txt")
    print(f"wrote {len(train_m.entries)} train / {len(test_m.entries)} test samples")
    return 0


def cmd_normals(args) -> int:
    from .data import read_xyz, write_xyz
    from .surface import estimate

    cloud = read_xyz(args.in_path)
    desc = estimate(cloud, k=args.k)
    write_xyz(args.out, cloud, descriptor=desc)
    sigma = desc.curvature
    print(f"{cloud.n} points -> {args.out} (k={args.k}); sigma mean {sigma.mean():.6f}, max {sigma.max():.6f}")
    return 0


def _build_configs(args):
    from .layers import LrSchedule
    from .network import AppNetConfig, depth_rates
    from .trainer import TrainConfig, input_channels

    file_cfg = _read_config_file(args.config) if getattr(args, "config", None) else {}
    depth = _resolve(args, file_cfg, "depth", 3, int)
    default_channels = (128, 256, 512, 512)[:depth] if depth != 2 else (128, 256)
    ra_default, rd_default = depth_rates(depth)
    input_mode = _resolve(args, file_cfg, "input", "normal+curvature")

    net_kwargs = dict(
        input_channels=input_channels(input_mode),
        block_channels=_resolve(args, file_cfg, "channels", default_channels, _int_tuple),
        r_a=_resolve(args, file_cfg, "ra", ra_default, _int_tuple),
        r_d=_resolve(args, file_cfg, "rd", rd_default, _int_tuple),
        family=_resolve(args, file_cfg, "family", "exp"),
        style=_resolve(args, file_cfg, "style", "aw"),
        update_style=_resolve(args, file_cfg, "update_style", "concat"),
        posenc_mode=_resolve(args, file_cfg, "posenc", "global"),
        pull_mode=_resolve(args, file_cfg, "pull_mode", "feature_difference"),
        pooling=_resolve(args, file_cfg, "pooling", "avg_max"),
        sampler=_resolve(args, file_cfg, "sampler", "random"),
        classifier_hidden=int(_resolve(args, file_cfg, "hidden", 320, int)),
    )
    train_cfg = TrainConfig(
        epochs=_resolve(args, file_cfg, "epochs", 50, int),
        train_batch=_resolve(args, file_cfg, "batch", 32, int),
        seed=_resolve(args, file_cfg, "seed", 0, int),
        input_mode=input_mode,
        schedule=LrSchedule(),
    )
    return net_kwargs, train_cfg


def cmd_train(args) -> int:
    from .data import load_manifest
    from .network import AppNetConfig
    from .trainer import train

    data = Path(args.data)
    train_manifest = load_manifest(data / "train.txt")
    test_manifest = load_manifest(data / "test.txt")
    net_kwargs, train_cfg = _build_configs(args)
    net_config = AppNetConfig(num_classes=train_manifest.num_classes, **net_kwargs)

    print("epoch,lr,train_loss,train_oa,test_oa")
    net, rows, best = train(
        net_config,
        train_cfg,
        train_manifest,
        test_manifest,
        checkpoint_path=args.checkpoint,
        log=print,
    )
    print(f"parameters: {net.parameter_count()}")
    print(f"best test OA: {best.oa:.4f} over {best.count} samples")
    if args.checkpoint:
        print(f"checkpoint: {args.checkpoint}")
    return 0


def cmd_eval(args) -> int:
    from .data import load_manifest
    from .network import config_from_text
    from .trainer import TrainConfig, evaluate_checkpoint

    if not args.checkpoint:
        raise ValueError("eval requires --checkpoint")
    sidecar = Path(str(args.checkpoint) + ".config")
    if not sidecar.exists():
        raise FileNotFoundError(f"missing config sidecar: {sidecar}")
    net_config = config_from_text(sidecar.read_text(encoding="utf-8"))
    _, train_cfg = _build_configs(args)
    manifest = load_manifest(Path(args.data) / "test.txt")
    metrics = evaluate_checkpoint(args.checkpoint, manifest, train_cfg, net_config)
    print(f"OA: {metrics.oa:.4f} over {metrics.count} samples")
    for cid, acc in enumerate(metrics.per_class):
        print(f"class {cid} ({manifest.class_names[cid]}): {acc:.4f}")
    return 0


def cmd_bench(args) -> int:
    import numpy as np

    from . import rng
    from .appblock import AppBlockConfig, app_block_forward, init_app_block_params
    from .geometry import PointCloud, knn, one_nn_assign, random_subsample
    from .instrument import MacCounter
    from .reference import APP_MODELED_STEPS, KnnBlockConfig, evaluate_cost, knn_block, knn_block_params
    from .tensor import Tensor

    c_in, c_out, r_a, r_d, k = 32, 64, 64, 8, 32
    print(f"aggregation block: c_in={c_in} c_out={c_out} r_a={r_a} r_d={r_d}; baseline: M=N/2 K={k}")
    header = f"{'N':>6} {'step':>8} {'model MACs':>12} {'counted':>12} {'match':>6}"
    print(header)
    csv_rows = ["n,step,model_macs,counted_macs,match"]
    gen = rng.generator(123, "bench")
    wall = {}
    for n in args.n_list:
        report = evaluate_cost(n, m=n // 2, k=k, c_in=c_in, c_out=c_out, r_a=r_a, r_d=r_d)
        cloud = PointCloud(gen.normal(size=(n, 3)))
        feats = Tensor(gen.normal(size=(n, c_in)).astype(np.float32))
        config = AppBlockConfig(c_in=c_in, c_out=c_out, r_a=r_a, r_d=r_d)
        params = init_app_block_params(config, ("bench", n))
        counter = MacCounter()
        app_block_forward(cloud, feats, config, params, seed=7, counter=counter)
        best = float("inf")
        for _ in range(5):
            t0 = time.perf_counter()
            app_block_forward(cloud, feats, config, params, seed=7)
            best = min(best, time.perf_counter() - t0)
        wall[n] = best
        for step in APP_MODELED_STEPS:
            model = report.app_macs[step]
            counted = counter.macs.get(step, 0)
            ok = "yes" if model == counted else "NO"
            print(f"{n:>6} {step:>8} {model:>12} {counted:>12} {ok:>6}")
            csv_rows.append(f"{n},{step},{model},{counted},{ok}")
        print(
            f"{n:>6} {'total':>8} {report.app_total:>12} {counter.total_macs(APP_MODELED_STEPS):>12} "
            f"{'yes' if report.app_total == counter.total_macs(APP_MODELED_STEPS) else 'NO':>6}  "
            f"wall {1e3 * best:.2f} ms"
        )
        if args.baseline:
            bcfg = KnnBlockConfig(m=n // 2, k=k, c_in=c_in, c_out=c_out)
            bparams = knn_block_params(bcfg, seed=5, dtype=np.float32)
            bcounter = MacCounter()
            t0 = time.perf_counter()
            knn_block(cloud.positions, gen.normal(size=(n, c_in)).astype(np.float32), bcfg, bparams, counter=bcounter)
            bwall = time.perf_counter() - t0
            print(
                f"{n:>6} {'baseline':>8} {report.baseline_macs['mlp']:>12} {bcounter.macs['mlp']:>12} "
                f"{'yes' if report.baseline_macs['mlp'] == bcounter.macs['mlp'] else 'NO':>6}  wall {1e3 * bwall:.2f} ms"
            )
        print(
            f"{n:>6} reuse factor {report.reuse_factor:.1f}, dominant baseline/block MAC ratio {report.dominant_ratio:.2f}"
        )
    if len(args.n_list) >= 2:
        lo, hi = min(args.n_list), max(args.n_list)
        print(f"wall-time ratio N={hi} vs N={lo}: {wall[hi] / wall[lo]:.2f} (points ratio {hi / lo:.0f})")

    n = max(args.n_list)
    pts = gen.normal(size=(n, 3))
    anchors = random_subsample(PointCloud(pts), r_a, seed=3)
    t0 = time.perf_counter()
    one_nn_assign(pts, anchors)
    t_one = time.perf_counter() - t0
    t0 = time.perf_counter()
    knn(pts, pts[: n // 2], k)
    t_knn = time.perf_counter() - t0
    print(f"neighbor query at N={n}: nearest-anchor {1e3 * t_one:.2f} ms vs {k}-NN {1e3 * t_knn:.2f} ms")
    print()
    print("\n".join(csv_rows))
    return 0


def cmd_oracle_check(args) -> int:
    from .checks import run_all

    results = run_all(trials=args.trials, precision=args.precision, seed=args.seed)
    for result in results:
        print(result.line())
    return 0 if all(r.passed for r in results) else 1


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # runtime failures exit 1, usage errors exit 2 via argparse
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
