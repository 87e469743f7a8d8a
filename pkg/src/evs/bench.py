"""Benchmark harness behind the CLI: dataset generation, pipeline runs,
hyperparameter sweeps, the refinement-mode frontier, and report aggregation.

Every command writes a manifest that is sufficient to re-execute it
bit-identically in single-threaded mode (wall-clock values excluded).
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from . import io as evsio
from .compose import (
    BLOCK_INVERSION_SFI,
    PipelineConfig,
    compose_iv,
    compose_vi,
    run_evs,
    run_iterated_baseline,
    run_t2i_only,
    run_t2v_only,
)
from .config import (
    Lab,
    build_lab,
    item_condition,
    item_seed,
    pipeline_config,
    style_vector,
    train_recipe,
)
from .diffusion import sdedit_refine
from .errors import ConfigError, ParameterError, UsageError
from .metrics import motion_smoothness, psnr, score_video
from .models import (
    ToyAttentionDenoiser,
    make_degraded_video,
    sample_world,
    train_toy_denoiser,
)
from .sfi import (
    ALL_LAYERS,
    DEEP_LAYERS,
    SHALLOW_LAYERS,
    InjectionConfig,
    denoise_with_injection,
    invert_with_capture,
)

PIPELINES = ("t2i", "t2v", "iv", "vi", "evs", "iterated")
SWEEP_AXES = ("t_T2V", "t_V", "n_V", "gamma")

DATASET_MANIFEST = "dataset_manifest.json"
RUN_MANIFEST = "run_manifest.json"

# Selective operating points blend queries at the named shallow/deep layer
# sets; the one all-layers row is the full-feature reconstruction anchor.
_FRONTIER_LAYER_SETS = (("shallow", SHALLOW_LAYERS), ("deep", DEEP_LAYERS))
_FRONTIER_GAMMAS = (0.0, 0.25, 0.5, 0.8, 1.0)
_DOMINANCE_GRID = 41


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_base(cfg: dict, kind: str) -> dict:
    return {
        "manifest_version": evsio.MANIFEST_VERSION,
        "tool_version": evsio.TOOL_VERSION,
        "kind": kind,
        "config": cfg,
    }


# ---------------------------------------------------------------------------
# gen
# ---------------------------------------------------------------------------


def cmd_gen(cfg: dict, out_dir) -> Path:
    """Write the input dataset: degraded videos, or styled off-prior ones."""
    out = _out_dir(out_dir)
    lab = build_lab(cfg)
    styled = bool(cfg["dataset"]["styled"])
    style = style_vector(cfg) if styled else None
    items = []
    for i in range(cfg["dataset"]["count"]):
        cond = item_condition(cfg, i, style)
        rng = np.random.default_rng(item_seed(cfg["seed"], i))
        if styled:
            video = sample_world(lab.spatial_world, cond, rng)
        else:
            video = make_degraded_video(
                lab.temporal_world, cond, cfg["dataset"]["flicker_sigma"], rng
            )
        name = f"item_{i:04d}.evslat"
        evsio.write_latents(out / name, [video])
        items.append({"file": name, "index": i, "mode_id": cond.mode_id, "styled": styled})
    evsio.write_world(out / "world_spatial.evswld", lab.spatial_world)
    evsio.write_world(out / "world_temporal.evswld", lab.temporal_world)
    manifest = _manifest_base(cfg, "dataset")
    manifest["items"] = items
    manifest["style"] = None if style is None else [float(x) for x in style]
    path = out / DATASET_MANIFEST
    evsio.write_json(path, manifest)
    return path


def load_dataset(dataset_dir) -> tuple[dict, list[tuple[int, np.ndarray]]]:
    dataset_dir = Path(dataset_dir)
    manifest = evsio.check_manifest_version(
        evsio.read_json(dataset_dir / DATASET_MANIFEST), dataset_dir / DATASET_MANIFEST
    )
    videos = []
    for item in manifest["items"]:
        (video,) = evsio.read_latents(dataset_dir / item["file"])
        videos.append((item["index"], video))
    return manifest, videos


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _pipeline_noise_rng(cfg: dict, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg["seed"], index, 7]))


def _evs_item_seed(cfg: dict, index: int) -> int:
    return int(np.random.SeedSequence([cfg["seed"], index]).generate_state(1)[0])


def _temporal_model_for(cfg: dict, pcfg: PipelineConfig, pipeline: str):
    """The tapped net when the temporal block needs taps, else the analytic model."""
    if pipeline == "evs" and pcfg.block_mode == BLOCK_INVERSION_SFI:
        return load_or_init_net(cfg)
    return None


def load_or_init_net(cfg: dict) -> ToyAttentionDenoiser:
    weights = cfg["net"]["weights"]
    if weights:
        return evsio.read_net(weights)
    return ToyAttentionDenoiser(
        dim=cfg["dim"],
        total_steps=cfg["schedule_v"]["steps"],
        n_modes=cfg["world"]["modes"],
        seed=cfg["net"]["seed"],
    )


def _execute(pipeline: str, lab: Lab, cfg: dict, pcfg: PipelineConfig, index, video, cond):
    rng = _pipeline_noise_rng(cfg, index)
    if pipeline == "t2i":
        return run_t2i_only(video, pcfg.t_i, lab.models, cond, rng)
    if pipeline == "t2v":
        return run_t2v_only(video, pcfg.t_v, lab.models, cond, rng)
    if pipeline == "iv":
        return compose_iv(video, pcfg.t_i, pcfg.t_v, lab.models, cond, rng)
    if pipeline == "vi":
        return compose_vi(video, pcfg.t_v, pcfg.t_i, lab.models, cond, rng)
    if pipeline == "evs":
        item_cfg = PipelineConfig(
            t_i=pcfg.t_i, t_v=pcfg.t_v, t_t2v=pcfg.t_t2v, n_v=pcfg.n_v,
            block_mode=pcfg.block_mode, injection=pcfg.injection,
            seed=_evs_item_seed(cfg, index),
        )
        return run_evs(video, item_cfg, lab.models, cond)
    if pipeline == "iterated":
        rounds = cfg["pipeline"].get("rounds", 2)
        return run_iterated_baseline(video, rounds, pcfg.t_i, pcfg.t_v, lab.models, cond, rng)
    raise UsageError(f"unknown pipeline {pipeline!r} (choose from {', '.join(PIPELINES)})")


def cmd_run(
    pipeline: str,
    cfg: dict,
    dataset_dir,
    out_dir,
    single_thread: bool = True,
    trajectories: bool = False,
) -> Path:
    """Execute one pipeline over the dataset; write CSV, outputs, manifest."""
    if pipeline not in PIPELINES:
        raise UsageError(f"unknown pipeline {pipeline!r} (choose from {', '.join(PIPELINES)})")
    if trajectories and pipeline not in ("t2i", "t2v"):
        raise UsageError("--trajectories is only supported for the t2i and t2v pipelines")
    out = _out_dir(out_dir)
    pcfg = pipeline_config(cfg)
    lab = build_lab(cfg, temporal_override=_temporal_model_for(cfg, pcfg, pipeline))
    pcfg.validate(lab.sched_i, lab.sched_v)
    ds_manifest, videos = load_dataset(dataset_dir)
    style = ds_manifest.get("style")

    rows = []
    row_meta = []
    for index, video in videos:
        cond = item_condition(cfg, index, None if style is None else np.asarray(style))
        if trajectories:
            result, traj = _run_with_trajectory(pipeline, lab, cfg, pcfg, index, video, cond)
            evsio.write_trajectory(out / f"item_{index:04d}.evstrj", traj)
        else:
            result = _execute(pipeline, lab, cfg, pcfg, index, video, cond)
        report = score_video(
            result.output,
            video,
            lab.spatial_world,
            cond,
            lab.metric_config,
            nfe_total=result.nfe_t2i + result.nfe_t2v,
            wall_time=result.wall_time,
        )
        out_file = f"item_{index:04d}.out.evslat"
        evsio.write_latents(out / out_file, [result.output])
        rows.append(
            {
                "pipeline": pipeline,
                "seed": index,
                "ms": report.ms,
                "sc": report.sc,
                "iq": report.iq,
                "psnr": report.psnr,
                "overall": report.overall,
                "nfe_t2i": result.nfe_t2i,
                "nfe_t2v": result.nfe_t2v,
                "wall_time": report.wall_time,
            }
        )
        row_meta.append(
            {
                "index": index,
                "output_file": out_file,
                "nfe_t2i": result.nfe_t2i,
                "nfe_t2v": result.nfe_t2v,
                "stage_log": [[name, list(span)] for name, span in result.stage_log],
            }
        )
    evsio.write_metric_csv(out / "runs.csv", rows)
    manifest = _manifest_base(cfg, "run")
    manifest.update(
        {
            "pipeline": pipeline,
            "dataset": {
                "path": str(Path(dataset_dir).resolve()),
                "manifest_sha256": evsio.file_sha256(Path(dataset_dir) / DATASET_MANIFEST),
            },
            "schedules": {
                "spatial_alpha_bar": [float(x) for x in lab.sched_i.alpha_bar],
                "temporal_alpha_bar": [float(x) for x in lab.sched_v.alpha_bar],
            },
            "single_thread": single_thread,
            "csv": "runs.csv",
            "rows": rows,
            "items": row_meta,
        }
    )
    path = out / RUN_MANIFEST
    evsio.write_json(path, manifest)
    return path


def _run_with_trajectory(pipeline, lab, cfg, pcfg, index, video, cond):
    rng = _pipeline_noise_rng(cfg, index)
    traj: list[np.ndarray] = []
    t0 = time.perf_counter()
    if pipeline == "t2i":
        model, sched, t_noise = lab.models.spatial, lab.sched_i, pcfg.t_i
    else:
        model, sched, t_noise = lab.models.temporal, lab.sched_v, pcfg.t_v
    evals0 = model.num_evals
    refined = sdedit_refine(video, t_noise, 0, model, cond, sched, rng, trajectory=traj)
    from .compose import PipelineResult

    result = PipelineResult(
        output=refined.predicted_clean,
        nfe_t2i=model.num_evals - evals0 if pipeline == "t2i" else 0,
        nfe_t2v=model.num_evals - evals0 if pipeline == "t2v" else 0,
        wall_time=time.perf_counter() - t0,
        stage_log=((pipeline, (t_noise, 0)),),
    )
    return result, traj


def rerun_from_manifest(manifest_path, out_dir) -> Path:
    """Re-execute a recorded run with its embedded config and dataset."""
    manifest = evsio.check_manifest_version(evsio.read_json(manifest_path), manifest_path)
    if manifest.get("kind") != "run":
        raise ConfigError(f"{manifest_path} is not a run manifest")
    return cmd_run(
        manifest["pipeline"],
        manifest["config"],
        manifest["dataset"]["path"],
        out_dir,
        single_thread=manifest.get("single_thread", True),
    )


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------


def _sweep_pipeline_config(cfg: dict, axis: str, value) -> PipelineConfig:
    if axis == "gamma":
        inj = dict(cfg["pipeline"]["injection"] or {})
        inj["gamma"] = float(value)
        return pipeline_config(cfg, injection=inj)
    key = {"t_T2V": "t_T2V", "t_V": "t_V", "n_V": "n_V"}[axis]
    return pipeline_config(cfg, **{key: int(value)})


def cmd_sweep(axis: str, grid, cfg: dict, dataset_dir, out_dir) -> Path:
    """Run the encapsulated pipeline across one hyperparameter grid."""
    if axis not in SWEEP_AXES:
        raise UsageError(f"unknown sweep axis {axis!r} (choose from {', '.join(SWEEP_AXES)})")
    if not grid:
        raise ParameterError("sweep grid must be nonempty")
    out = _out_dir(out_dir)
    _, videos = load_dataset(dataset_dir)
    point_stats = []
    for value in grid:
        try:
            pcfg = _sweep_pipeline_config(cfg, axis, value)
            lab = build_lab(
                cfg, temporal_override=_temporal_model_for(cfg, pcfg, "evs")
            )
            pcfg.validate(lab.sched_i, lab.sched_v)
        except ParameterError as exc:
            raise ParameterError(f"grid point {axis}={value}: {exc}") from exc
        per_metric = {m: [] for m in ("ms", "sc", "iq", "psnr", "overall")}
        for index, video in videos:
            cond = item_condition(cfg, index)
            result = _execute("evs", lab, cfg, pcfg, index, video, cond)
            report = score_video(
                result.output, video, lab.spatial_world, cond, lab.metric_config,
                nfe_total=result.nfe_t2i + result.nfe_t2v, wall_time=result.wall_time,
            )
            for m in per_metric:
                per_metric[m].append(getattr(report, m))
        stats = {"value": value}
        for m, vals in per_metric.items():
            arr = np.asarray(vals)
            stats[f"{m}_mean"] = float(arr.mean())
            stats[f"{m}_stderr"] = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        point_stats.append(stats)

    manifest = _manifest_base(cfg, "sweep")
    manifest.update(
        {
            "axis": axis,
            "grid": list(grid),
            "dataset": {
                "path": str(Path(dataset_dir).resolve()),
                "manifest_sha256": evsio.file_sha256(Path(dataset_dir) / DATASET_MANIFEST),
            },
            "points": point_stats,
            "csv": "sweep.csv",
        }
    )
    manifest_path = out / "sweep_manifest.json"
    evsio.write_json(manifest_path, manifest)
    mhash = evsio.file_sha256(manifest_path)

    import csv as _csv

    with open(out / "sweep.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        cols = [axis] + [f"{m}_{s}" for m in ("ms", "sc", "iq", "psnr", "overall") for s in ("mean", "stderr")]
        writer.writerow(cols)
        for stats in point_stats:
            writer.writerow(
                [stats["value"]]
                + [format(stats[c], ".12g") for c in cols[1:]]
            )
    xs = [float(s["value"]) for s in point_stats]
    for m in ("ms", "sc", "iq", "psnr", "overall"):
        evsio.svg_line_plot(
            out / f"sweep_{m}.svg",
            f"{m} vs {axis}",
            axis,
            m,
            {m: (xs, [s[f"{m}_mean"] for s in point_stats])},
            mhash,
            error_bars={m: [s[f"{m}_stderr"] for s in point_stats]},
        )
    return manifest_path


# ---------------------------------------------------------------------------
# frontier
# ---------------------------------------------------------------------------


def frontier_dominance(points_a, points_b, grid_size: int = _DOMINANCE_GRID) -> float:
    """Fraction of the shared smoothness grid where frontier A attains at
    least B's best fidelity among points at or above each smoothness level."""

    def best_at(points, level):
        vals = [p for m, p in points if m >= level]
        return max(vals) if vals else None

    lo = max(min(m for m, _ in points_a), min(m for m, _ in points_b))
    hi = min(max(m for m, _ in points_a), max(m for m, _ in points_b))
    if hi <= lo:
        return 1.0
    wins = 0
    grid = np.linspace(lo, hi, grid_size)
    for level in grid:
        a = best_at(points_a, level)
        b = best_at(points_b, level)
        if a is not None and (b is None or a >= b):
            wins += 1
    return wins / len(grid)


def cmd_frontier(cfg: dict, dataset_dir, out_dir) -> Path:
    """Sweep both temporal-block modes on styled inputs and compare frontiers.

    The noising-denoising arm uses the analytic temporal denoiser; the
    injection arm uses the tapped net (trained here unless weights are
    provided).  Points are (motion smoothness, fidelity-to-input) means.
    """
    out = _out_dir(out_dir)
    ds_manifest, videos = load_dataset(dataset_dir)
    if ds_manifest.get("style") is None:
        raise ConfigError("frontier requires a styled dataset (gen --styled)")
    style = np.asarray(ds_manifest["style"])
    lab = build_lab(cfg)
    mcfg = lab.metric_config

    if cfg["net"]["weights"]:
        net = evsio.read_net(cfg["net"]["weights"])
        net_file = cfg["net"]["weights"]
    else:
        net = train_toy_denoiser(lab.temporal_world, lab.sched_v, train_recipe(cfg))
        net_file = "net.evsnet"
        evsio.write_net(out / net_file, net)

    t_v = cfg["pipeline"]["t_V"]
    conds = {i: item_condition(cfg, i) for i, _ in videos}

    rows = []
    sdedit_pts = []
    for t_noise in range(0, lab.sched_v.total_steps + 1):
        ms_vals, ps_vals = [], []
        for index, video in videos:
            if t_noise == 0:
                refined = video
            else:
                rng = np.random.default_rng(np.random.SeedSequence([cfg["seed"], index, t_noise]))
                refined = sdedit_refine(
                    video, t_noise, 0, lab.models.temporal, conds[index], lab.sched_v, rng
                ).predicted_clean
            ms_vals.append(motion_smoothness(refined, mcfg.tau))
            ps_vals.append(psnr(refined, video, mcfg.psnr_peak))
        point = (float(np.mean(ms_vals)), float(np.mean(ps_vals)))
        sdedit_pts.append(point)
        rows.append({"method": "sdedit", "param": f"t={t_noise}", "ms": point[0], "psnr": point[1]})

    sfi_grid = [
        (name, layers, gamma, False)
        for name, layers in _FRONTIER_LAYER_SETS
        for gamma in _FRONTIER_GAMMAS
    ] + [("all", ALL_LAYERS, 1.0, True)]
    sfi_pts = []
    for name, layers, gamma, inject_f in sfi_grid:
        icfg = InjectionConfig(layers=layers, gamma=gamma, inject_f=inject_f)
        ms_vals, ps_vals = [], []
        for index, video in videos:
            z, cache, _ = invert_with_capture(video, t_v, net, conds[index], lab.sched_v)
            refined = denoise_with_injection(
                z, t_v, t_v, net, conds[index], lab.sched_v, cache, icfg
            ).predicted_clean
            ms_vals.append(motion_smoothness(refined, mcfg.tau))
            ps_vals.append(psnr(refined, video, mcfg.psnr_peak))
        point = (float(np.mean(ms_vals)), float(np.mean(ps_vals)))
        sfi_pts.append(point)
        label = f"{name},g={gamma}" + (",f" if inject_f else "")
        rows.append({"method": "sfi", "param": label, "ms": point[0], "psnr": point[1]})

    dominance = frontier_dominance(sfi_pts, sdedit_pts)
    manifest = _manifest_base(cfg, "frontier")
    manifest.update(
        {
            "dataset": {
                "path": str(Path(dataset_dir).resolve()),
                "manifest_sha256": evsio.file_sha256(Path(dataset_dir) / DATASET_MANIFEST),
            },
            "net_file": str(net_file),
            "rows": rows,
            "dominance": dominance,
            "csv": "frontier.csv",
        }
    )
    manifest_path = out / "frontier_manifest.json"
    evsio.write_json(manifest_path, manifest)
    mhash = evsio.file_sha256(manifest_path)

    import csv as _csv

    with open(out / "frontier.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(["method", "param", "ms", "psnr"])
        for row in rows:
            writer.writerow([row["method"], row["param"],
                             format(row["ms"], ".12g"), format(row["psnr"], ".12g")])
    evsio.svg_scatter(
        out / "frontier.svg",
        f"refinement frontier (dominance {dominance:.2f})",
        "motion smoothness",
        "psnr to input (dB)",
        {"sdedit": sdedit_pts, "sfi": sfi_pts},
        mhash,
    )
    return manifest_path


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(manifest_paths, out_dir) -> Path:
    """Aggregate run manifests into a per-pipeline summary with speedups."""
    if not manifest_paths:
        raise UsageError("report needs at least one run manifest")
    out = _out_dir(out_dir)
    runs = []
    for path in manifest_paths:
        manifest = evsio.check_manifest_version(evsio.read_json(path), path)
        if manifest.get("kind") != "run":
            raise ConfigError(f"{path} is not a run manifest")
        runs.append(manifest)

    summary = {}
    for manifest in runs:
        name = manifest["pipeline"]
        rows = manifest["rows"]
        entry = summary.setdefault(name, {m: [] for m in ("ms", "sc", "iq", "psnr", "overall", "wall_time")})
        entry.setdefault("nfe_total", [])
        for row in rows:
            for m in ("ms", "sc", "iq", "psnr", "overall", "wall_time"):
                entry[m].append(float(row[m]))
            entry["nfe_total"].append(int(row["nfe_t2i"]) + int(row["nfe_t2v"]))

    base_cfg = runs[0]["config"]
    p = base_cfg["pipeline"]
    if "iterated" in summary:
        baseline_nfe = float(np.mean(summary["iterated"]["nfe_total"]))
    else:
        baseline_nfe = float(p.get("rounds", 2) * (p["t_I"] + p["t_V"]))

    table = []
    for name in sorted(summary):
        entry = summary[name]
        nfe = float(np.mean(entry["nfe_total"]))
        table.append(
            {
                "pipeline": name,
                **{m: float(np.mean(entry[m])) for m in ("ms", "sc", "iq", "psnr", "overall")},
                "nfe_total": nfe,
                "wall_time": float(np.mean(entry["wall_time"])),
                "speedup": baseline_nfe / nfe if nfe else float("nan"),
            }
        )
    table.sort(key=lambda r: -r["overall"])

    manifest = _manifest_base(base_cfg, "report")
    manifest.update(
        {
            "inputs": [str(Path(p).resolve()) for p in manifest_paths],
            "baseline_nfe": baseline_nfe,
            "table": table,
            "csv": "summary.csv",
        }
    )
    manifest_path = out / "report_manifest.json"
    evsio.write_json(manifest_path, manifest)
    mhash = evsio.file_sha256(manifest_path)

    import csv as _csv

    cols = ["pipeline", "ms", "sc", "iq", "psnr", "overall", "nfe_total", "wall_time", "speedup"]
    with open(out / "summary.csv", "w", newline="") as fh:
        writer = _csv.writer(fh)
        writer.writerow(cols)
        for row in table:
            writer.writerow([row["pipeline"]] + [format(row[c], ".12g") for c in cols[1:]])
    evsio.svg_bar_chart(
        out / "summary.svg",
        "overall score by pipeline",
        "overall",
        [row["pipeline"] for row in table],
        [row["overall"] for row in table],
        mhash,
    )
    return manifest_path


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(cfg: dict, out_dir) -> Path:
    """Train the tapped temporal denoiser and save its weights."""
    out = _out_dir(out_dir)
    lab = build_lab(cfg)
    net = train_toy_denoiser(lab.temporal_world, lab.sched_v, train_recipe(cfg))
    evsio.write_net(out / "net.evsnet", net)
    manifest = _manifest_base(cfg, "train")
    manifest.update({"net_file": "net.evsnet", "train_report": net.train_report})
    path = out / "train_manifest.json"
    evsio.write_json(path, manifest)
    return path
