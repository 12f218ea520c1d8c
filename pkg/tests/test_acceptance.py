"""End-to-end acceptance criteria, each checked at its stated tolerance.

Run alone with ``pytest -m acceptance -s``; a summary with one pass/fail
line per criterion is printed at the end of the session.
"""

import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from sirup.cli import main
from sirup.experiments import (SEPARATION_METRICS, ExperimentConfig, aggregate,
                               compare_sv_models, held_out_azimuths, run_localization,
                               train_ldm_bundle, train_vae_bundle)
from sirup.room import build_dataset
from sirup.upmixer import LdmTrainConfig, VaeTrainConfig

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parent
PROPERTY_FILES = ["test_signal.py", "test_tensorfile.py", "test_geometry.py", "test_room.py",
                  "test_estimation.py", "test_localization.py", "test_beamforming.py",
                  "test_upmixer.py"]

TOY_TRAIN_SCENES = 256
TOY_TRAIN_SEED = 100
TOY_HELD_OUT = 32
TOY_HELD_OUT_SEED = 200
TOY_LDM_EPOCHS = 1500


def _metric(records, condition, metric):
    return np.array([r.metrics[metric] for r in records if r.condition == condition], dtype=float)


# ---------------------------------------------------------------- criterion 1

def test_criterion_1_property_suite(report):
    start = time.perf_counter()
    proc = subprocess.run([sys.executable, "-m", "pytest", "-q", "-p", "no:cacheprovider",
                           *[str(ROOT / f) for f in PROPERTY_FILES]],
                          capture_output=True, text=True, cwd=ROOT.parent)
    elapsed = time.perf_counter() - start
    summary = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    ok_pass = report("criterion 1 property suite", proc.returncode == 0, summary)
    ok_time = report("criterion 1 runtime < 5 min", elapsed < 300, f"{elapsed:.0f} s")
    assert ok_pass, proc.stdout[-4000:]
    assert ok_time


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_resolution_ordering(report):
    start = time.perf_counter()
    records, _ = run_localization(ExperimentConfig("d_rt60", 30, seed=0))
    elapsed = time.perf_counter() - start
    di = {c: _metric(records, c, "di_db").mean() for c in ("FOA", "HOA")}
    bw = {c: _metric(records, c, "bw3_deg").mean() for c in ("FOA", "HOA")}
    sl = {c: _metric(records, c, "sl_db").mean() for c in ("FOA", "HOA")}
    ok = [
        report("criterion 2 DI(HOA) - DI(FOA) >= 5 dB", di["HOA"] - di["FOA"] >= 5,
               f"FOA {di['FOA']:.2f} dB, HOA {di['HOA']:.2f} dB, gap {di['HOA'] - di['FOA']:.2f} dB"),
        report("criterion 2 BW(HOA) < BW(FOA)", bw["HOA"] < bw["FOA"],
               f"FOA {bw['FOA']:.1f} deg, HOA {bw['HOA']:.1f} deg"),
        report("criterion 2 SL(HOA) < SL(FOA) - 5 dB", sl["HOA"] < sl["FOA"] - 5,
               f"FOA {sl['FOA']:.2f} dB, HOA {sl['HOA']:.2f} dB, gap {sl['FOA'] - sl['HOA']:.2f} dB"),
        report("criterion 2 runtime < 15 min", elapsed < 900, f"{elapsed:.0f} s"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_localization_trend(report):
    records, _ = run_localization(ExperimentConfig("d_snr", 30, seed=0, snr_range_db=(5.0, 5.0)))
    foa = _metric(records, "FOA", "angular_error_deg").mean()
    hoa = _metric(records, "HOA", "angular_error_deg").mean()
    ok = report("criterion 3 HOA-SRP error <= FOA-SRP error - 2 deg at 5 dB SNR",
                hoa <= foa - 2.0, f"FOA {foa:.2f} deg, HOA {hoa:.2f} deg, gap {foa - hoa:.2f} deg")
    assert ok


# ---------------------------------------------------------------- criterion 4

@pytest.fixture(scope="module")
def toy_model(tmp_path_factory):
    """Train the reduced VAE + latent denoiser on the toy manifold once per session."""
    root = tmp_path_factory.mktemp("toy")
    start = time.perf_counter()
    train = ExperimentConfig("toy_manifold", TOY_TRAIN_SCENES, seed=TOY_TRAIN_SEED)
    held = ExperimentConfig("toy_manifold", TOY_HELD_OUT, seed=TOY_HELD_OUT_SEED,
                            azimuths_deg=held_out_azimuths(TOY_HELD_OUT))
    build_dataset(train.dataset_protocol(), root / "train")
    build_dataset(held.dataset_protocol(), root / "held_out")
    vae_bundle, vae_hist = train_vae_bundle(root / "train", VaeTrainConfig(), root / "held_out")
    bundle, ldm_hist = train_ldm_bundle(root / "train", vae_bundle,
                                        LdmTrainConfig(epochs=TOY_LDM_EPOCHS))
    path = root / "model_bundle.svt"
    bundle.save(path)
    return {"bundle": path, "held": held, "vae_hist": vae_hist, "ldm_hist": ldm_hist,
            "params": bundle.parameter_count(), "train_s": time.perf_counter() - start}


def test_criterion_4_toy_upmixer(toy_model, report):
    start = time.perf_counter()
    held = toy_model["held"]
    cfg = ExperimentConfig("toy_manifold", held.num_scenes, seed=held.seed,
                           azimuths_deg=held.azimuths_deg, model_bundle=str(toy_model["bundle"]))
    records, _ = run_localization(cfg)
    elapsed = toy_model["train_s"] + time.perf_counter() - start
    err = {c: _metric(records, c, "angular_error_deg") for c in ("FOA", "Upmixed", "HOA")}
    bw_up = _metric(records, "Upmixed", "bw3_deg")
    bw_foa = _metric(records, "FOA", "bw3_deg")
    narrower = float(np.mean(bw_up < bw_foa))
    val_cos = toy_model["vae_hist"][-1]["val_cos"]
    first5 = [row["train_cos"] for row in toy_model["vae_hist"][:5]]
    ldm = toy_model["ldm_hist"]
    params = toy_model["params"]
    ok = [
        report("criterion 4(a) upmixed SRP error <= FOA SRP error",
               err["Upmixed"].mean() <= err["FOA"].mean(),
               f"FOA {err['FOA'].mean():.2f} deg, upmixed {err['Upmixed'].mean():.2f} deg, "
               f"HOA {err['HOA'].mean():.2f} deg"),
        report("criterion 4(b) upmixed lobe narrower than FOA on >= 75% of scenes",
               narrower >= 0.75,
               f"{narrower:.0%} narrower, mean BW FOA {bw_foa.mean():.1f} deg, "
               f"upmixed {bw_up.mean():.1f} deg"),
        report("criterion 4(c) VAE validation cosine >= 0.95", val_cos >= 0.95, f"{val_cos:.4f}"),
        report("criterion 4 runtime < 60 min", elapsed < 3600,
               f"{elapsed:.0f} s, parameters {params}"),
    ]
    # sub-checks on the training curves of the same run
    ok.append(report("criterion 4 VAE train cosine rises over first 5 epochs",
                     all(b > a for a, b in zip(first5, first5[1:])),
                     ", ".join(f"{c:.3f}" for c in first5)))
    ok.append(report("criterion 4 LDM final loss < 0.5 x initial",
                     ldm[-1]["loss"] < 0.5 * ldm[0]["loss"],
                     f"{ldm[0]['loss']:.4f} -> {ldm[-1]['loss']:.4f}"))
    assert all(ok)


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_se_table(toy_model, report, tmp_path):
    from sirup.experiments import write_table

    cfg = ExperimentConfig("se_two_source", 30, seed=0, model_bundle=str(toy_model["bundle"]))
    records = compare_sv_models(cfg)
    table = aggregate(records, SEPARATION_METRICS)
    write_table(table, tmp_path)
    layout_ok = (list(table) == ["SV-FOA", "SV-SIRUP-M", "SV-alg-FOA", "SV-alg-SIRUP"]
                 and all(list(v) == list(SEPARATION_METRICS) for v in table.values())
                 and (tmp_path / "table.csv").exists())
    cells = "; ".join(f"{c} SDR {v['sdr_db']['mean']:.2f} SIR {v['sir_db']['mean']:.2f} "
                      f"SAR {v['sar_db']['mean']:.2f}" for c, v in table.items())
    sir_c = table["SV-alg-FOA"]["sir_db"]["mean"]
    sir_d = table["SV-alg-SIRUP"]["sir_db"]["mean"]
    ok = [
        report("criterion 5 four-variant table produced", layout_ok, cells),
        report("criterion 5 SIR(SV-alg-SIRUP) >= SIR(SV-alg-FOA)", sir_d >= sir_c,
               f"SV-alg-FOA {sir_c:.2f} dB, SV-alg-SIRUP {sir_d:.2f} dB"),
    ]
    assert all(ok)


# ---------------------------------------------------------------- criterion 6

def _pipeline(root: Path) -> Path:
    import json

    root.mkdir(parents=True, exist_ok=True)

    def run(cmd, cfg, out):
        conf = root / f"{cmd}.json"
        conf.write_text(json.dumps(cfg), encoding="utf-8")
        assert main([cmd, "--config", str(conf), "--out", str(root / out)]) == 0

    small = {"max_ism_order": 1, "source_duration": 1.0}
    run("build-dataset", {"protocol": "toy_manifold", "num_scenes": 8, "seed": 4,
                          "overrides": small}, "data")
    run("train-vae", {"dataset": str(root / "data"), "epochs": 2, "finetune_epochs": 1,
                      "vae": {"width": 16}}, "vae")
    run("train-ldm", {"dataset": str(root / "data"), "vae_bundle": str(root / "vae/vae_bundle.svt"),
                      "epochs": 2, "denoiser": {"widths": [16, 16], "temb_dim": 16}}, "ldm")
    run("evaluate", {"protocol": "toy_manifold", "num_scenes": 4, "seed": 9, "inference_steps": 20,
                     "model_bundle": str(root / "ldm/model_bundle.svt"), "overrides": small}, "eval")
    run("compare-sv-models", {"protocol": "se_two_source", "num_scenes": 2, "seed": 9,
                              "inference_steps": 20, "model_bundle": str(root / "ldm/model_bundle.svt"),
                              "overrides": {**small, "onset_delay": 1.0}}, "se")
    return root


def test_criterion_6_determinism(tmp_path, report):
    import shutil

    # the second run reuses the same paths, since result files record input paths
    work = tmp_path / "run"
    _pipeline(work)
    first = tmp_path / "first"
    shutil.move(str(work), str(first))
    work.mkdir()
    _pipeline(work)
    files = sorted(p.relative_to(first) for p in first.rglob("*") if p.is_file())
    diff = [str(f) for f in files if (first / f).read_bytes() != (work / f).read_bytes()]
    ok = report("criterion 6 repeated pipeline gives bit-identical result files", not diff,
                f"{len(files)} files compared, {len(diff)} differ" + (f": {diff[:5]}" if diff else ""))
    assert ok
