"""Command-line entry point: simulate, train-tpn, track, eval.

Every option can also be supplied through a JSON config file (--config);
explicit flags override config values.  Exit codes: 0 success, 1 usage
error, 2 runtime failure.  Heavy imports happen inside the commands so the
--threads cap can be applied to the BLAS pools first.
"""

from __future__ import annotations

import argparse
import json
import os
import sys


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mvtrack", description=__doc__)
    parser.add_argument("--config", help="JSON file with defaults for any option")
    parser.add_argument("--threads", type=int, default=1, help="BLAS thread cap (default 1, deterministic)")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("simulate", help="generate a synthetic scene or trajectory datasets")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="sequence output directory")
    p.add_argument("--views", type=int, default=3)
    p.add_argument("--frames", type=int, default=120)
    p.add_argument("--occluders", type=int, default=0)
    p.add_argument(
        "--occlusion-event",
        action="append",
        default=None,
        metavar="VIEW,START,END",
        help="place an occluder blocking VIEW over [START, END] (repeatable)",
    )
    p.add_argument("--image-size", default="640x480")
    p.add_argument("--static-target", action="store_true")
    p.add_argument("--static-cameras", action="store_true")
    p.add_argument("--depth-drift", type=float, default=0.0)
    p.add_argument("--trajectories", default=None, metavar="DIR", help="write trajectory datasets instead of a scene")
    p.add_argument("--train-scenarios", type=int, default=25)
    p.add_argument("--test-scenarios", type=int, default=8)
    p.add_argument("--pair-frames", type=int, default=900)

    p = sub.add_parser("train-tpn", help="train the trajectory prediction model")
    p.add_argument("--dataset", default=None, help="training pairs (JSON lines)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="model snapshot path")
    p.add_argument("--log", default=None, help="training log CSV path")
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--nb", type=int, default=100)
    p.add_argument("--stage1-iters", type=int, default=300)
    p.add_argument("--stage2-iters", type=int, default=60)
    p.add_argument("--lambda1", type=float, default=1e-3)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--enc-dim", type=int, default=128)
    p.add_argument("--hp-dim", type=int, default=16)
    p.add_argument("--dec-hidden", type=int, default=64)

    p = sub.add_parser("track", help="run the tracker over an exported sequence")
    p.add_argument("--sequence", default=None, help="sequence directory from `simulate`")
    p.add_argument("--out", default=None, help="tracking log (JSON lines)")
    p.add_argument("--tpn", default=None, help="TPN snapshot for occlusion recovery")
    p.add_argument("--no-tpn", action="store_true", help="disable trajectory correction")
    p.add_argument("--single-view", type=int, default=None, help="track only this view")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--update-period", type=int, default=7)
    p.add_argument("--m-max", type=int, default=30)
    p.add_argument("--tpn-fit-iters", type=int, default=300)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("eval", help="metric reports, Table-style overalls, prediction benchmark")
    p.add_argument("--table", default=None, help="CSV of per-clip accuracies + frame weights")
    p.add_argument("--tpn-bench", action="store_true")
    p.add_argument("--pairs", default=None, help="test pairs (JSON lines) for --tpn-bench")
    p.add_argument("--tpn", default=None, help="model snapshot")
    p.add_argument("--n-sim", type=int, default=1000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--reinit", action="store_true")
    p.add_argument("--no-reinit", action="store_true")
    p.add_argument("--sequence", action="append", default=None, help="sequence directory (repeatable)")
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--s-frames", type=int, default=50)
    p.add_argument("--no-tpn", action="store_true")
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--out-dir", default=None)
    return parser


def _apply_config(parser: _Parser, argv: list[str]) -> argparse.Namespace:
    # pre-scan for --config so its values become defaults (flags override)
    cfg_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif a.startswith("--config="):
            cfg_path = a.split("=", 1)[1]
    if cfg_path:
        with open(cfg_path) as fh:
            values = json.load(fh)
        for action in parser._subparsers._group_actions[0].choices.values():  # noqa: SLF001
            action.set_defaults(**{k: v for k, v in values.items() if k in {a.dest for a in action._actions}})
        parser.set_defaults(**{k: v for k, v in values.items() if k in {a.dest for a in parser._actions}})
    return parser.parse_args(argv)


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")


def cmd_simulate(args) -> int:
    from mvtrack.simulator import (
        SceneConfig,
        TrajectoryDatasetConfig,
        export_sequence,
        generate_scene,
        make_default_trajectory_datasets,
        save_trajectory_pairs,
    )

    _require(args, "seed")
    if args.trajectories:
        cfg = TrajectoryDatasetConfig(n_frames=args.pair_frames)
        from mvtrack.simulator import generate_trajectory_dataset

        train = generate_trajectory_dataset(args.train_scenarios, args.seed, cfg)
        test = generate_trajectory_dataset(
            args.test_scenarios, args.seed + 1, cfg, angle_offset=3.14159 / 7.0, id_offset=args.train_scenarios
        )
        os.makedirs(args.trajectories, exist_ok=True)
        save_trajectory_pairs(train, os.path.join(args.trajectories, "train.jsonl"))
        save_trajectory_pairs(test, os.path.join(args.trajectories, "test.jsonl"))
        print(f"wrote {len(train)} training and {len(test)} test scenarios to {args.trajectories}")
        return 0

    _require(args, "out")
    w, h = (int(v) for v in args.image_size.lower().split("x"))
    events = []
    for spec in args.occlusion_event or []:
        view, t0, t1 = (int(v) for v in spec.split(","))
        events.append((view, t0, t1))
    n_occ = max(args.occluders, len(events))
    cfg = SceneConfig(
        n_views=args.views,
        n_frames=args.frames,
        image_size=(w, h),
        n_occluders=n_occ,
        occlusion_events=tuple(events),
        static_target=args.static_target,
        moving_cameras=not args.static_cameras,
        depth_drift=args.depth_drift,
    )
    spec = generate_scene(cfg, args.seed)
    summary = export_sequence(spec, args.out)
    occ = ", ".join(f"view{c}: {frac:.2f}" for c, frac in summary["occluded_fraction"].items())
    print(f"{summary['n_views']} views x {summary['n_frames']} frames -> {args.out}")
    print(f"occluded fraction per view: {occ}")
    return 0


def cmd_train_tpn(args) -> int:
    from mvtrack.simulator import load_trajectory_pairs
    from mvtrack.tpn import TpnTrainConfig, save_model, train_tpn
    from mvtrack.tpn.model import TpnConfig

    _require(args, "dataset", "seed", "out")
    if not os.path.exists(args.dataset):
        raise FileNotFoundError(f"dataset not found: {args.dataset}")
    pairs = load_trajectory_pairs(args.dataset)
    cfg = TpnTrainConfig(
        n_b=args.nb,
        epochs=args.epochs,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        stage1_iters=args.stage1_iters,
        stage2_iters=args.stage2_iters,
        model=TpnConfig(
            enc_dim=args.enc_dim, hidden=args.hidden, h_p_dim=args.hp_dim, dec_hidden=args.dec_hidden
        ),
    )
    model, log = train_tpn(pairs, cfg, args.seed)
    save_model(model, args.out)
    if args.log:
        with open(args.log, "w") as fh:
            fh.write("epoch,batch,stage1_loss,stage2_loss\n")
            for rec in log:
                fh.write(f"{rec['epoch']},{rec['batch']},{rec['stage1_loss']:.9g},{rec['stage2_loss']:.9g}\n")
    print(f"trained {args.epochs} epochs on {len(pairs)} pairs -> {args.out}")
    return 0


def _load_sequence_frames(seq_dir):
    from mvtrack.core import MultiviewAnnotation
    from mvtrack.simulator import read_pgm

    with open(os.path.join(seq_dir, "annotations.json")) as fh:
        ann = MultiviewAnnotation.from_json(fh.read())

    def frames_of(t):
        return [
            read_pgm(os.path.join(seq_dir, f"view{c}", f"frame{t:06d}.pgm"))
            for c in range(ann.n_views)
        ]

    return ann, frames_of


def cmd_track(args) -> int:
    from mvtrack import tracker as trk
    from mvtrack.tpn import load_model

    _require(args, "sequence", "out")
    ann, frames_of = _load_sequence_frames(args.sequence)
    views = list(range(ann.n_views)) if args.single_view is None else [args.single_view]

    tpn_model = None
    if args.tpn and not args.no_tpn:
        tpn_model = load_model(args.tpn)
    cfg = trk.TrackerConfig(
        tau=args.tau,
        update_period=args.update_period,
        m_max=args.m_max,
        use_tpn=not args.no_tpn,
        tpn_fit_iters=args.tpn_fit_iters,
    )

    first = frames_of(0)
    state = trk.init([first[c] for c in views], [ann.boxes[c][0] for c in views], cfg, tpn=tpn_model)
    for t in range(1, ann.n_frames):
        frames = frames_of(t)
        trk.step(state, [frames[c] for c in views])
    with open(args.out, "w") as fh:
        for rec in state.log:
            rec = dict(rec)
            rec["view"] = views[rec["view"]]
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
    print(f"tracked {ann.n_frames} frames x {len(views)} views -> {args.out}")
    return 0


def _read_table(path):
    import csv

    with open(path) as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[-1].lower() not in ("frames", "weight", "weights"):
        raise UsageError("table CSV must end with a frames/weight column")
    names = header[1:-1]
    values = {n: [] for n in names}
    weights = []
    for row in rows[1:]:
        if not row:
            continue
        for n, v in zip(names, row[1:-1]):
            values[n].append(float(v))
        weights.append(float(row[-1]))
    return values, weights


def cmd_eval(args) -> int:
    from mvtrack.evaluation import (
        aggregate,
        error_curves_csv,
        run_with_reinit,
        run_without_reinit,
        save_ar_plot,
        save_error_plot,
        tpn_benchmark,
        weighted_overall,
    )

    if args.table:
        values, weights = _read_table(args.table)
        for name, vals in values.items():
            print(f"overall {name} = {weighted_overall(vals, weights):.3f}")
        return 0

    if args.tpn_bench:
        _require(args, "pairs", "tpn", "seed")
        from mvtrack.simulator import load_trajectory_pairs
        from mvtrack.tpn import load_model

        pairs = load_trajectory_pairs(args.pairs)
        model = load_model(args.tpn)
        curves = tpn_benchmark(pairs, model, n_sim=args.n_sim, seed=args.seed)
        out_dir = args.out_dir or "."
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error_curves.csv"), "w") as fh:
            fh.write(error_curves_csv(curves))
        save_error_plot(curves, os.path.join(out_dir, "error_curves.svg"))
        for name, curve in curves.items():
            print(f"{name}: mean error over horizon = {curve.mean():.2f} px")
        return 0

    if args.reinit or args.no_reinit:
        _require(args, "sequence")
        from mvtrack import tracker as trk
        from mvtrack.tpn import load_model

        tpn_model = load_model(args.tpn) if (args.tpn and not args.no_tpn) else None
        cfg = trk.TrackerConfig(tau=args.tau, use_tpn=not args.no_tpn)

        def factory(frames, boxes):
            state = trk.init(frames, boxes, cfg, tpn=tpn_model)
            return lambda frames_t: trk.step(state, frames_t)

        logs_by_scene = {}
        for seq_dir in args.sequence:
            ann, frames_of = _load_sequence_frames(seq_dir)
            runs = []
            for _ in range(args.runs):
                if args.reinit:
                    runs.append(run_with_reinit(factory, frames_of, ann, scene=seq_dir))
                else:
                    runs.append(run_without_reinit(factory, frames_of, ann, scene=seq_dir))
            logs_by_scene[seq_dir] = runs
        report = aggregate(logs_by_scene, s_frames=args.s_frames, with_reinit=args.reinit)
        out_dir = args.out_dir or "."
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.json"), "w") as fh:
            fh.write(report.to_json())
        with open(os.path.join(out_dir, "report.csv"), "w") as fh:
            fh.write(report.to_csv())
        if args.reinit:
            pts = {"tracker": (report.overall["accuracy"] or 0.0, report.overall["robustness"] or 0.0)}
            save_ar_plot(pts, os.path.join(out_dir, "ar_plot.svg"))
        else:
            pts = {"tracker": (report.overall["accuracy"] or 0.0, report.overall["success_rate"] or 0.0)}
            save_ar_plot(pts, os.path.join(out_dir, "ar_plot.svg"), ylabel="success rate")
        mode = "with re-initialization" if args.reinit else "without re-initialization"
        print(f"evaluated {len(logs_by_scene)} scene(s) {mode}, {args.runs}-run averaging")
        print(f"overall: {json.dumps(report.overall, sort_keys=True)}")
        return 0

    raise UsageError("choose one of --table, --tpn-bench, --reinit, --no-reinit")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = _apply_config(parser, argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        threads = str(max(args.threads, 1))
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = threads
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    try:
        handler = {
            "simulate": cmd_simulate,
            "train-tpn": cmd_train_tpn,
            "track": cmd_track,
            "eval": cmd_eval,
        }[args.command]
        return handler(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
