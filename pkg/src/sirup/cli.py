"""``sirup`` command-line entry point.

Every subcommand reads a JSON config, validates it against its schema and
writes into a staging directory that is moved into ``--out`` only on
success, so failed runs leave no partial outputs.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from .config import ConfigError, load_config

log = logging.getLogger("sirup")

COMMANDS = ("simulate", "build-dataset", "train-vae", "train-ldm", "upmix", "localize",
            "beamform", "evaluate", "compare-sv-models")


class JsonLineFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        entry = {"time": self.formatTime(record, "%Y-%m-%dT%H:%M:%S"), "level": record.levelname,
                 "logger": record.name, "message": record.getMessage()}
        fields = getattr(record, "fields", None)
        if fields:
            entry.update({k: _jsonable(v) for k, v in fields.items()})
        return json.dumps(entry, sort_keys=True)


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if hasattr(v, "item") and getattr(v, "ndim", 1) == 0:
        return v.item()
    return v


def setup_logging(level=logging.INFO) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger()
    root.handlers[:] = [handler]
    root.setLevel(level)


def _info(msg, **fields):
    log.info(msg, extra={"fields": fields})


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _experiment(cfg: dict, seed):
    from .experiments import ExperimentConfig

    if seed is not None:
        cfg = {**cfg, "seed": seed}
    return ExperimentConfig.from_dict(cfg)


# --- subcommands ---------------------------------------------------------------------------

def cmd_simulate(cfg, args, stage: Path):
    from .parallel import ordered_map

    exp = _experiment(cfg, args.seed)
    protocol = exp.dataset_protocol()
    (stage / "scenes").mkdir()
    records = ordered_map(_simulate_one, [(protocol, i, str(stage)) for i in range(exp.num_scenes)],
                          args.workers)
    with (stage / "manifest.jsonl").open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    _write_json(stage / "protocol.json", protocol.to_dict())
    _info("simulated scenes", count=len(records))


def _simulate_one(args):
    from .room import render_scene, sample_scene
    from .signal import write_wav

    protocol, index, out = args
    params = sample_scene(protocol, index)
    scene = render_scene(protocol, params)
    stem = f"scenes/scene_{index:05d}"
    write_wav(scene.mixture, Path(out) / f"{stem}_mixture.wav")
    for k, img in enumerate(scene.per_source_images):
        write_wav(img, Path(out) / f"{stem}_src{k}.wav")
    rec = params.to_record()
    rec["elevation_deg"] = protocol.elevation_deg
    rec["mixture"] = f"{stem}_mixture.wav"
    rec["sources"] = [f"{stem}_src{k}.wav" for k in range(len(scene.per_source_images))]
    return rec


def cmd_build_dataset(cfg, args, stage: Path):
    from .room import build_dataset

    exp = _experiment(cfg, args.seed)
    protocol = exp.dataset_protocol()
    records = build_dataset(protocol, stage, args.workers)
    _write_json(stage / "protocol.json", protocol.to_dict())
    _info("built dataset", scenes=len(records), pairs=sum(len(r["pairs"]) for r in records))


def cmd_train_vae(cfg, args, stage: Path):
    from .experiments import train_vae_bundle
    from .plotting import plot_loss
    from .upmixer import VaeTrainConfig
    from .upmixer.training import write_history

    _require(Path(cfg["dataset"]) / "manifest.jsonl", "dataset manifest")
    if "validation_dataset" in cfg:
        _require(Path(cfg["validation_dataset"]) / "manifest.jsonl", "validation manifest")
    params = {k: v for k, v in cfg.items() if k not in ("dataset", "validation_dataset", "target")}
    if args.seed is not None:
        params["seed"] = args.seed
    tcfg = VaeTrainConfig.from_dict(params)
    bundle, history = train_vae_bundle(cfg["dataset"], tcfg, cfg.get("validation_dataset"),
                                       cfg.get("target", "hoa"))
    bundle.save(stage / "vae_bundle.svt")
    write_history(history, stage / "vae_loss.csv")
    _write_json(stage / "train_vae_config.json", tcfg.to_dict())
    plot_loss(history, stage / "vae_loss.png", title="VAE training loss")
    _info("trained VAE", params=bundle.parameter_count()["vae"], final=history[-1] if history else {})


def cmd_train_ldm(cfg, args, stage: Path):
    from .experiments import train_ldm_bundle
    from .plotting import plot_loss
    from .upmixer import LdmTrainConfig, ModelBundle
    from .upmixer.training import write_history

    _require(Path(cfg["dataset"]) / "manifest.jsonl", "dataset manifest")
    vae_bundle = ModelBundle.load(_require(cfg["vae_bundle"], "VAE bundle"))
    params = {k: v for k, v in cfg.items() if k not in ("dataset", "vae_bundle", "target")}
    if args.seed is not None:
        params["seed"] = args.seed
    tcfg = LdmTrainConfig.from_dict(params)
    bundle, history = train_ldm_bundle(cfg["dataset"], vae_bundle, tcfg, cfg.get("target", "hoa"))
    bundle.save(stage / "model_bundle.svt")
    write_history(history, stage / "ldm_loss.csv")
    _write_json(stage / "train_ldm_config.json", tcfg.to_dict())
    plot_loss(history, stage / "ldm_loss.png", title="denoiser epsilon loss")
    _info("trained denoiser", params=bundle.parameter_count()["denoiser"],
          initial=history[0]["loss"], final=history[-1]["loss"])


def cmd_upmix(cfg, args, stage: Path):
    from .estimation import make_condition
    from .experiments import upmix_seed
    from .geometry import SteeringVectorSet
    from .tensorfile import read_tensor, write_tensor
    from .upmixer import ModelBundle, upmix

    root = Path(cfg["dataset"])
    manifest = _require(root / "manifest.jsonl", "dataset manifest")
    bundle = ModelBundle.load(_require(cfg["model_bundle"], "model bundle"))
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    steps = cfg.get("steps", 200)
    (stage / "upmixed").mkdir()
    out_records = []
    for line in manifest.read_text(encoding="utf-8").splitlines():
        rec = json.loads(line)
        for k, pair in enumerate(rec["pairs"]):
            foa = SteeringVectorSet.from_tensorfile(read_tensor(root / pair["foa"]))
            s = upmix_seed(seed, rec["index"], k)
            up = upmix(make_condition(foa, bundle.num_channels), bundle, steps, s)
            name = Path(pair["foa"]).name.replace("_foa.svt", "_upmixed.svt")
            write_tensor(up.to_tensorfile(), stage / "upmixed" / name)
            out_records.append({"scene": rec["index"], "source": k, "seed": s,
                                "upmixed": f"upmixed/{name}", "foa": str(root / pair["foa"])})
    with (stage / "upmixed.jsonl").open("w", encoding="utf-8") as fh:
        for r in out_records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    _info("upmixed", count=len(out_records))


def _grid(cfg):
    from .localization import DoaGrid

    return DoaGrid.azimuth_ring(cfg.get("grid_elevation_deg", 28.0), cfg.get("grid_step_deg", 1.0))


def cmd_localize(cfg, args, stage: Path):
    import csv

    from .geometry import SteeringVectorSet
    from .localization import pick_peak, srp_map
    from .plotting import plot_srp_heatmap
    from .tensorfile import read_tensor

    paths = [_require(p, "steering vector file") for p in cfg["steering_vectors"]]
    grid = _grid(cfg)
    rows, maps = [], []
    for p in paths:
        sv = SteeringVectorSet.from_tensorfile(read_tensor(p))
        srp = srp_map(sv, grid)
        est = pick_peak(srp, cfg.get("interpolate", True))
        rows.append([str(p), repr(float(np.rad2deg(est.azimuth))), repr(float(np.rad2deg(est.elevation)))])
        maps.append({"SRP": srp.scores})
    with (stage / "localization.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["file", "azimuth_deg", "elevation_deg"])
        w.writerows(rows)
    from .experiments import write_srp_maps

    write_srp_maps(maps, grid, stage)
    plot_srp_heatmap(maps, grid.azimuth_deg, stage / "srp.png")
    _info("localized", count=len(rows))


def cmd_beamform(cfg, args, stage: Path):
    import csv

    from .beamforming import beam_metrics, beamform_signal, beampattern, make_beamformer
    from .geometry import SteeringVectorSet
    from .plotting import plot_beampattern
    from .signal import read_wav, write_wav
    from .tensorfile import read_tensor

    mix = read_wav(_require(cfg["mixture"], "mixture"))
    paths = [_require(p, "steering vector file") for p in cfg["steering_vectors"]]
    grid = _grid(cfg)
    rows, patterns = [], {}
    for k, p in enumerate(paths):
        sv = SteeringVectorSet.from_tensorfile(read_tensor(p))
        m = cfg.get("channels", sv.num_channels)
        if m > mix.num_channels:
            raise ValueError(f"{p}: needs {m} channels, mixture has {mix.num_channels}")
        if sv.num_channels != m:
            from .geometry import truncate_order

            sv = truncate_order(sv, int(round(np.sqrt(m))) - 1)
        bf = make_beamformer(sv)
        out = beamform_signal(bf, mix.channels(slice(0, m)))
        write_wav(out, stage / f"beamformed_{k}.wav")
        pat = beampattern(bf, grid)
        metrics = beam_metrics(pat, int(np.argmax(pat)), grid.step_deg)
        patterns[Path(p).stem] = pat
        rows.append([str(p), f"beamformed_{k}.wav", repr(metrics.di_db), repr(metrics.bw3_deg),
                     repr(metrics.sl_db), metrics.sl_defined])
    with (stage / "beam_metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["steering_vectors", "output", "di_db", "bw3_deg", "sl_db", "sl_defined"])
        w.writerows(rows)
    plot_beampattern(patterns, grid.azimuth_deg, stage / "beampattern.png")
    _info("beamformed", count=len(rows))


def _check_bundle(exp):
    if exp.model_bundle is not None:
        _require(exp.model_bundle, "model bundle")


def cmd_evaluate(cfg, args, stage: Path):
    from .experiments import (LOCALIZATION_METRICS, aggregate, run_localization, write_records,
                              write_srp_maps, write_table)
    from .plotting import plot_srp_heatmap, plot_table

    exp = _experiment(cfg, args.seed)
    if exp.protocol == "se_two_source":
        return cmd_compare_sv_models(cfg, args, stage)
    _check_bundle(exp)
    records, maps = run_localization(exp, args.workers)
    table = aggregate(records, LOCALIZATION_METRICS)
    write_records(records, stage)
    write_table(table, stage)
    write_srp_maps(maps, exp.grid(), stage)
    _write_json(stage / "experiment.json", exp.to_dict())
    truth = [r.metrics["true_azimuth_deg"] for r in records if r.condition == "FOA"]
    plot_srp_heatmap(maps, exp.grid().azimuth_deg, stage / "srp_maps.png", truth)
    plot_table(table, stage / "table.png")
    _info("evaluated", scenes=exp.num_scenes,
          summary={c: {m: v["mean"] for m, v in t.items()} for c, t in table.items()})


def cmd_compare_sv_models(cfg, args, stage: Path):
    from .experiments import SEPARATION_METRICS, aggregate, compare_sv_models, write_records, write_table
    from .plotting import plot_table

    exp = _experiment(cfg, args.seed)
    if exp.protocol != "se_two_source":
        raise ValueError("compare-sv-models needs protocol 'se_two_source'")
    if exp.model_bundle is None:
        raise ValueError("compare-sv-models needs 'model_bundle'")
    _check_bundle(exp)
    records = compare_sv_models(exp, args.workers)
    table = aggregate(records, SEPARATION_METRICS)
    write_records(records, stage)
    write_table(table, stage)
    _write_json(stage / "experiment.json", exp.to_dict())
    plot_table(table, stage / "table.png")
    _info("compared steering-vector models", scenes=exp.num_scenes,
          summary={c: {m: v["mean"] for m, v in t.items()} for c, t in table.items()})


HANDLERS = {
    "simulate": cmd_simulate, "build-dataset": cmd_build_dataset, "train-vae": cmd_train_vae,
    "train-ldm": cmd_train_ldm, "upmix": cmd_upmix, "localize": cmd_localize,
    "beamform": cmd_beamform, "evaluate": cmd_evaluate, "compare-sv-models": cmd_compare_sv_models,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sirup", description="Steering-vector upmixing pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--workers", type=int, default=1, help="scene-level worker processes")
        p.add_argument("--out", default="out", help="output directory")
    return parser


def _publish(stage: Path, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for item in sorted(stage.iterdir()):
        dest = out / item.name
        if dest.is_dir() and item.is_dir():
            shutil.rmtree(dest)
        elif dest.exists():
            dest.unlink()
        shutil.move(str(item), str(dest))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        cfg = load_config(args.config, args.command)
    except ConfigError as exc:
        for v in exc.violations:
            log.error("config violation", extra={"fields": {"violation": v, "config": args.config}})
        print(str(exc), file=sys.stderr)
        return 2
    if args.workers < 1:
        log.error("--workers must be at least 1")
        return 2
    out = Path(args.out)
    parent = out.resolve().parent
    parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out.name}-staging-", dir=parent))
    try:
        _info("start", command=args.command, config=args.config, out=str(out))
        HANDLERS[args.command](cfg, args, stage)
        _publish(stage, out)
        _info("done", command=args.command)
        return 0
    except (FileNotFoundError, ValueError, OSError, RuntimeError) as exc:
        log.error(str(exc), extra={"fields": {"command": args.command, "error": type(exc).__name__}})
        return 1
    finally:
        shutil.rmtree(stage, ignore_errors=True)


if __name__ == "__main__":
    sys.exit(main())
