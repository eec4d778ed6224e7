"""Command-line pipeline: simulate, train, score, fuse, eval, classify.

Stages talk to each other only through files below the configured
directories::

    data_dir/{train,test}/<id>.tracks.csv, <id>.meta.json
    data_dir/scene/{train,test}/<id>.csv         scene-expert scores
    weights_dir/{interaction,behavior}.npz
    scores_dir/{int,beh}/{train,test}/<id>.csv
    scores_dir/stats.ini, scores_dir/fused/<id>.csv
    report_dir/eval.txt, eval.kv, roc.csv, classes.csv
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import behavior, config, evalkit, formats, fusion, interaction, nn, scene, simgen

log = logging.getLogger("xenad")

EXPERT_MODULES = {"int": "interaction", "beh": "behavior"}


class CliError(Exception):
    pass


def video_seed(seed: int, video_id: str) -> int:
    """Per-video seed for the synthetic scene scores, stable across processes."""
    return int(np.random.SeedSequence([seed, zlib.crc32(video_id.encode())]).generate_state(1)[0])


# -- stages -------------------------------------------------------------------


def cmd_simulate(cfg: config.RunConfig) -> None:
    s = cfg.simulate
    data = cfg.path("data_dir")
    t0 = time.perf_counter()
    train, test = simgen.generate_dataset(
        s.train_count, s.test_count, s.anomaly_mix(), cfg.run.seed, out_dir=data,
        num_frames=s.num_frames, fps=s.fps, num_objects=s.num_objects, noise_std=s.noise_std,
    )
    for split, videos in (("train", train), ("test", test)):
        for v in videos:
            ffp, str_ = simgen.synth_scene_scores(v, video_seed(cfg.run.seed, v.video_id), delta=s.scene_delta)
            scene.write_scene_scores(ffp, str_, data / "scene" / split / f"{v.video_id}.csv")
    log.info("stage=simulate video_id=* train=%d test=%d wall=%.3fs", len(train), len(test), time.perf_counter() - t0)


def _weights_path(cfg, expert) -> Path:
    return cfg.path("weights_dir") / f"{EXPERT_MODULES[expert]}.npz"


def _read_split(cfg, split):
    d = cfg.path("data_dir") / split
    if not d.is_dir() or not formats.list_videos(d):
        raise CliError(f"no videos in {d}; run the simulate stage first")
    return formats.read_videos(d)


def _expert(expert):
    if expert == "int":
        return interaction, interaction.train_interaction, interaction.score_interaction
    if expert == "beh":
        return behavior, behavior.train_behavior, behavior.score_behavior
    raise CliError(f"unknown expert {expert!r} (choose int or beh)")


def _expert_config(cfg, expert):
    return cfg.interaction if expert == "int" else cfg.behavior


def cmd_train(cfg: config.RunConfig, expert: str) -> str:
    mod, train_fn, _ = _expert(expert)
    ecfg = _expert_config(cfg, expert)
    videos = _read_split(cfg, "train")
    if any(v.is_anomalous for v in videos):
        raise CliError("training videos must not contain anomalous frames")
    t0 = time.perf_counter()
    params, history = train_fn(videos, ecfg, cfg.run.seed)
    out = _weights_path(cfg, expert)
    out.parent.mkdir(parents=True, exist_ok=True)
    params.save(out, extra={"expert": expert, "seed": cfg.run.seed, "config": _jsonable(ecfg.as_dict()),
                            "history": history})
    log.info("stage=train expert=%s video_id=* checksum=%s wall=%.3fs", expert, params.checksum(),
             time.perf_counter() - t0)
    return params.checksum()


def _jsonable(d):
    return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


def _load_weights(cfg, expert):
    mod, _, _ = _expert(expert)
    ecfg = _expert_config(cfg, expert)
    path = _weights_path(cfg, expert)
    if not path.exists():
        raise CliError(f"weights {path} not found; run `train --expert {expert}` first")
    expected = mod.init_params(ecfg, 0).shapes
    try:
        params, extra = nn.ParamStore.load(path, expected_shapes=expected)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    if extra.get("expert") not in (None, expert):
        raise CliError(f"{path} holds {extra.get('expert')} weights, not {expert}")
    return params


def _score_one(args):
    expert, params, ecfg, video, out = args
    _, _, score_fn = _expert(expert)
    t0 = time.perf_counter()
    series = score_fn(video, params, ecfg)
    formats.write_scores(series, out)
    return video.video_id, time.perf_counter() - t0


def cmd_score(cfg: config.RunConfig, expert: str) -> None:
    params = _load_weights(cfg, expert)
    ecfg = _expert_config(cfg, expert)
    jobs = []
    for split in ("train", "test"):
        out_dir = cfg.path("scores_dir") / expert / split
        for v in _read_split(cfg, split):
            jobs.append((expert, params, ecfg, v, out_dir / f"{v.video_id}.csv"))
    for vid, wall in _map(_score_one, jobs, cfg.run.jobs):
        log.info("stage=score expert=%s video_id=%s wall=%.3fs", expert, vid, wall)


def _map(fn, items, jobs):
    if jobs <= 1:
        return map(fn, items)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_streams(cfg, split):
    """``{video_id: [ffp, str, int, beh]}`` ScoreSeries for one split."""
    data, scores = cfg.path("data_dir"), cfg.path("scores_dir")
    out = {}
    for vid in formats.list_videos(data / split):
        paths = [data / "scene" / split / f"{vid}.csv",
                 scores / "int" / split / f"{vid}.csv",
                 scores / "beh" / split / f"{vid}.csv"]
        for p in paths:
            if not p.exists():
                raise CliError(f"missing score file {p}; run the score stage for every expert")
        ffp, str_ = scene.load_scene_scores(paths[0])
        out[vid] = [ffp, str_, formats.read_scores(paths[1]), formats.read_scores(paths[2])]
    if not out:
        raise CliError(f"no videos in {data / split}")
    return out


def fit_stats(train_streams, alpha):
    """Per-expert normalizers from the valid part of the training scores."""
    stats = {}
    for k, name in enumerate(fusion.EXPERTS):
        samples = np.concatenate([s[k].scores[s[k].valid_from:] for s in train_streams.values()])
        stats[name] = fusion.fit_normalizer(samples, alpha)
    return stats


def cmd_fuse(cfg: config.RunConfig) -> None:
    train = _load_streams(cfg, "train")
    stats = fit_stats(train, cfg.fusion.alpha)
    scores = cfg.path("scores_dir")
    fusion.save_stats(stats, scores / "stats.ini")
    tau = fusion.ensemble_threshold([stats[e] for e in fusion.EXPERTS])
    log.info("stage=fuse video_id=* tau=%r", tau)
    for vid, streams in _load_streams(cfg, "test").items():
        t0 = time.perf_counter()
        res = fusion.fuse(streams, [stats[e] for e in fusion.EXPERTS], cfg.fusion.mode)
        formats.write_fused(vid, res.series.scores, res.states, res.series.valid_from,
                            scores / "fused" / f"{vid}.csv")
        log.info("stage=fuse video_id=%s wall=%.3fs", vid, time.perf_counter() - t0)


def _read_any_scores(path):
    head = Path(path).read_text().splitlines()
    if any(line.startswith(",".join(formats.FUSED_FIELDS)) for line in head[:3]):
        return formats.read_fused(path)[0]
    return formats.read_scores(path)


def cmd_eval(cfg: config.RunConfig, scores_dir=None, labels_dir=None, source="fused") -> evalkit.EvalResult:
    labels_dir = Path(labels_dir) if labels_dir else cfg.path("data_dir") / "test"
    if scores_dir is None:
        scores_dir = cfg.path("scores_dir") / ("fused" if source == "fused" else f"{source}/test")
    scores_dir = Path(scores_dir)
    tau = cfg.eval.tau
    if tau is None:
        stats_path = cfg.path("scores_dir") / "stats.ini"
        if not stats_path.exists():
            raise CliError(f"no --tau given and {stats_path} missing; run the fuse stage or pass --tau")
        st = fusion.load_stats(stats_path)
        tau = fusion.ensemble_threshold([st[e] for e in fusion.EXPERTS]) if source == "fused" else st[source].tau
    items = []
    for p in sorted(scores_dir.glob("*.csv")):
        series = _read_any_scores(p)
        vid = series.video_id
        if not formats.meta_path(labels_dir, vid).exists():
            raise CliError(f"video {vid}: no labels in {labels_dir}")
        v = formats.read_video(labels_dir, vid)
        items.append((vid, series.scores, v.frame_labels, (v.category, v.involvement)))
    if not items:
        raise CliError(f"no score files in {scores_dir}")
    result = evalkit.evaluate(items, cfg.eval.protocol, tau)
    rep = cfg.path("report_dir")
    evalkit.write_report(result, rep / "eval.txt", rep / "eval.kv")
    evalkit.write_roc(np.concatenate([i[1] if cfg.eval.protocol == "raw" else evalkit.minmax(i[1]) for i in items]),
                      np.concatenate([i[2] for i in items]), rep / "roc.csv")
    log.info("stage=eval video_id=* protocol=%s auc=%r f1=%r", result.protocol, result.auc, result.f1)
    sys.stdout.write(evalkit.format_report(result))
    return result


def cmd_classify(cfg: config.RunConfig) -> Path:
    fused = cfg.path("scores_dir") / "fused"
    files = sorted(fused.glob("*.csv"))
    if not files:
        raise CliError(f"no fused scores in {fused}; run the fuse stage first")
    labels_dir = cfg.path("data_dir") / "test"
    rows = ["video_id,predicted,involvement,category"]
    for p in files:
        series, states = formats.read_fused(p)
        pred = fusion.classify_video(states)
        v = formats.read_video(labels_dir, series.video_id)
        rows.append(f"{series.video_id},{pred},{v.involvement},{v.category}")
    out = cfg.path("report_dir") / "classes.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(rows) + "\n")
    log.info("stage=classify video_id=* videos=%d", len(files))
    return out


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="xenad", description="Trajectory and scene anomaly ensemble pipeline.")
    ap.add_argument("--config", help="run configuration file (INI)")
    ap.add_argument("--jobs", type=int, help="parallel workers for per-video stages")
    ap.add_argument("--seed", type=int)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", help="write a synthetic dataset")
    p = sub.add_parser("train", help="train a trajectory expert")
    p.add_argument("--expert", choices=("int", "beh"), required=True)
    p.add_argument("--epochs", type=int)
    p = sub.add_parser("score", help="score train and test videos with a trained expert")
    p.add_argument("--expert", choices=("int", "beh"), required=True)
    p = sub.add_parser("fuse", help="fit normalizers and fuse the four score streams")
    p.add_argument("--mode", choices=("immediate", "deferred"))
    p.add_argument("--alpha", type=float)
    p = sub.add_parser("eval", help="AUC/F1 report")
    p.add_argument("--protocol", choices=evalkit.PROTOCOLS)
    p.add_argument("--tau", type=float)
    p.add_argument("--source", default="fused", choices=("fused", "int", "beh"))
    p.add_argument("--scores", help="directory of score CSVs (default: from the config)")
    p.add_argument("--labels", help="directory of video sidecars (default: data_dir/test)")
    sub.add_parser("classify", help="ego / non-ego label per fused video")
    sub.add_parser("show-config", help="print the effective configuration")
    return ap


def _apply_flags(cfg, args):
    if args.seed is not None:
        cfg = cfg.replace("run", seed=args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise CliError("--jobs must be >= 1")
        cfg = cfg.replace("run", jobs=args.jobs)
    if getattr(args, "epochs", None) is not None:
        section = "interaction" if args.expert == "int" else "behavior"
        cfg = cfg.replace(section, epochs=args.epochs)
    if getattr(args, "mode", None):
        cfg = cfg.replace("fusion", mode=args.mode)
    if getattr(args, "alpha", None) is not None:
        cfg = cfg.replace("fusion", alpha=args.alpha)
    if getattr(args, "protocol", None):
        cfg = cfg.replace("eval", protocol=args.protocol)
    if getattr(args, "tau", None) is not None:
        cfg = cfg.replace("eval", tau=args.tau)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = config.load(args.config) if args.config else config.loads("")
        cfg = _apply_flags(cfg, args)
        if args.command == "simulate":
            cmd_simulate(cfg)
        elif args.command == "train":
            cmd_train(cfg, args.expert)
        elif args.command == "score":
            cmd_score(cfg, args.expert)
        elif args.command == "fuse":
            cmd_fuse(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.scores, args.labels, args.source)
        elif args.command == "classify":
            cmd_classify(cfg)
        elif args.command == "show-config":
            sys.stdout.write(config.dumps(cfg))
    except (CliError, config.ConfigError, formats.FormatError, ValueError, OSError) as exc:
        log.error("stage=%s error=%s", args.command, exc)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
