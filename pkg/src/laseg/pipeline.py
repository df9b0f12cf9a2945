"""File-level pipeline stages and the end-to-end driver.

Every stage reads its inputs from disk and writes its outputs to disk, so a
manual chain of CLI stage commands reproduces the pipeline byte for byte.
"""

from __future__ import annotations

import csv
import io
import logging
import platform
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .clic import ClicParams, clic_fit, probability_map
from .config import PipelineConfig, config_hash, config_text
from .fusion import (
    AtlasRecord,
    SimpleParams,
    SimpleResult,
    format_history,
    majority_vote,
    random_select,
    simple_select,
)
from .levelset import CvParams, cv_refine, format_trace
from .metrics import apd, dice
from .mhd import read_mhd, write_mhd
from .phantom import PhantomParams, generate_cohort
from .registration import RegParams, groupwise_register, propagate_label
from .transforms import read_group_transform, write_group_transform
from .volume import LabelVolume, Volume

log = logging.getLogger(__name__)


class PipelineInputError(ValueError):
    pass


# stages --------------------------------------------------------------------


def stage_normalize(in_path, out_path, params: ClicParams) -> Path:
    vol = read_mhd(in_path)
    return write_mhd(probability_map(clic_fit(vol, params)), out_path, "float32")


def stage_register(target_path, atlas_paths, out_path, params: RegParams, names=None) -> Path:
    target = read_mhd(target_path)
    atlases = [read_mhd(p) for p in atlas_paths]
    result = groupwise_register(target, atlases, params)
    gt = result.transform
    gt.names = list(names) if names is not None else [Path(p).stem for p in atlas_paths]
    return write_group_transform(gt, out_path)


def _propagated(target_path, transforms_path, label_paths) -> tuple[Volume, list[LabelVolume]]:
    target = read_mhd(target_path)
    gt = read_group_transform(transforms_path)
    if len(label_paths) != len(gt.atlases):
        raise PipelineInputError(
            f"{len(label_paths)} labels given for {len(gt.atlases)} registered atlases"
        )
    labels = [read_mhd(p, as_label=True) for p in label_paths]
    return target, [propagate_label(lab, t, target.grid) for lab, t in zip(labels, gt.atlases)]


def format_selection(mode: str, selected: list[int], result: SimpleResult | None) -> str:
    head = f"# mode = {mode}\n# selected = {' '.join(str(i) for i in selected)}\n"
    if result is None:
        return head + "iteration\tid\tperformance\talive\n"
    return head + format_history(result)


def read_selection(path) -> tuple[str, list[int]]:
    mode, selected = None, None
    for line in Path(path).read_text().splitlines():
        if line.startswith("# mode ="):
            mode = line.split("=", 1)[1].strip()
        elif line.startswith("# selected ="):
            selected = [int(v) for v in line.split("=", 1)[1].split()]
    if mode is None or selected is None:
        raise PipelineInputError(f"{path}: not a selection report")
    return mode, selected


def case_seed(seed: int, case_index: int) -> int:
    """Seed of the random-selection baseline for one target."""
    return seed * 1000 + case_index


def select_atlases(props: list[LabelVolume], mode: str, params: SimpleParams, seed: int):
    """Ids are 1-based positions in the group transform."""
    ids = list(range(1, len(props) + 1))
    if mode == "simple":
        records = [AtlasRecord(i, p) for i, p in zip(ids, props)]
        res = simple_select(records, params)
        return res.selected, res
    if mode == "random":
        return random_select(ids, min(params.final_count, len(ids)), seed), None
    raise PipelineInputError(f"unknown selection mode {mode!r}")


def stage_select(target_path, transforms_path, label_paths, out_path, mode: str,
                 params: SimpleParams, seed: int) -> tuple[Path, SimpleResult | None]:
    _, props = _propagated(target_path, transforms_path, label_paths)
    selected, result = select_atlases(props, mode, params, seed)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(format_selection(mode, selected, result))
    return out_path, result


def stage_fuse(target_path, transforms_path, label_paths, selection_path, out_path) -> Path:
    _, props = _propagated(target_path, transforms_path, label_paths)
    _, selected = read_selection(selection_path)
    if not selected or any(not 1 <= i <= len(props) for i in selected):
        raise PipelineInputError(f"{selection_path}: selected ids out of range")
    fused = majority_vote([props[i - 1] for i in selected])
    return write_mhd(fused, out_path, "uint8")


def stage_refine(image_path, mask_path, out_path, trace_path, params: CvParams):
    image = read_mhd(image_path)
    mask = read_mhd(mask_path, as_label=True)
    result = cv_refine(image, mask, params)
    write_mhd(result.mask, out_path, "uint8")
    Path(trace_path).write_text(format_trace(result))
    return result


EVAL_FIELDS = ("case_id", "dice", "apd_ssd_mm")


def evaluate_pairs(pred_paths, truth_paths, case_ids=None) -> list[dict]:
    if len(pred_paths) != len(truth_paths):
        raise PipelineInputError("need one truth label per prediction")
    rows = []
    for k, (pp, tp) in enumerate(zip(pred_paths, truth_paths)):
        pred = read_mhd(pp, as_label=True)
        truth = read_mhd(tp, as_label=True)
        case = case_ids[k] if case_ids else Path(pp).stem
        rows.append({"case_id": case, "dice": dice(pred, truth), "apd_ssd_mm": apd(pred, truth)})
    return rows


def write_csv(rows: list[dict], columns, path) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else (f"{r[c]:.6f}" if isinstance(r[c], float) else r[c])
                    for c in columns])
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(buf.getvalue())
    return path


def stage_phantom(params: PhantomParams, n: int, seed: int, out_dir) -> list[tuple[Path, Path]]:
    out_dir = Path(out_dir)
    pairs = []
    for i, (img, lab) in enumerate(generate_cohort(params, n, seed)):
        name = f"case{i:03d}"
        pairs.append((
            write_mhd(img, out_dir / "images" / f"{name}.mhd", "float32"),
            write_mhd(lab, out_dir / "labels" / f"{name}.mhd", "uint8"),
        ))
    return pairs


# driver --------------------------------------------------------------------


RESULT_FIELDS = (
    "case_id",
    "n_atlases",
    "n_selected",
    "dice_atlas",
    "apd_ssd_mm_atlas",
    "dice_refined",
    "apd_ssd_mm_refined",
)


@dataclass
class PipelineResult:
    out_dir: Path
    rows: dict[str, list[dict]]
    timings: dict[str, float] = field(default_factory=dict)


class _Timer:
    def __init__(self):
        self.totals: dict[str, float] = {}

    def run(self, stage, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.totals[stage] = self.totals.get(stage, 0.0) + time.perf_counter() - t0


def _atlas_pairs(image_dir, label_dir) -> list[tuple[str, Path, Path]]:
    image_dir, label_dir = Path(image_dir), Path(label_dir)
    images = sorted(image_dir.glob("*.mhd"))
    if not images:
        raise PipelineInputError(f"no .mhd images in {image_dir}")
    pairs = []
    for img in images:
        lab = label_dir / img.name
        if not lab.is_file():
            raise PipelineInputError(f"no label for atlas {img.name} in {label_dir}")
        pairs.append((img.stem, img, lab))
    return pairs


def _run_case(name, target_map, truth, atlases, maps, case_dir, cfg, timer, sel_seed):
    """Segment one target. ``atlases`` are (name, image, label); ``maps`` their probability maps."""
    case_dir.mkdir(parents=True, exist_ok=True)
    transforms = case_dir / "transforms.txt"
    timer.run("register", stage_register, target_map, maps, transforms, cfg.registration,
              names=[a[0] for a in atlases])
    labels = [a[2] for a in atlases]
    truth_lab = read_mhd(truth, as_label=True) if truth else None
    rows = {}
    extras = {}
    for mode in cfg.modes:
        sel_path, history = timer.run(
            "select", stage_select, target_map, transforms, labels,
            case_dir / f"selection_{mode}.txt", mode, cfg.simple, sel_seed)
        fused_path = timer.run("fuse", stage_fuse, target_map, transforms, labels, sel_path,
                               case_dir / f"fused_{mode}.mhd")
        refined = timer.run("refine", stage_refine, target_map, fused_path,
                            case_dir / f"refined_{mode}.mhd", case_dir / f"energy_{mode}.csv",
                            cfg.levelset)
        _, selected = read_selection(sel_path)
        row = {"case_id": name, "n_atlases": len(atlases), "n_selected": len(selected)}
        if truth_lab is not None:
            fused = read_mhd(fused_path, as_label=True)
            row.update(
                dice_atlas=dice(fused, truth_lab),
                apd_ssd_mm_atlas=apd(fused, truth_lab),
                dice_refined=dice(refined.mask, truth_lab),
                apd_ssd_mm_refined=apd(refined.mask, truth_lab),
            )
        rows[mode] = row
        extras[mode] = (history, refined)
    return rows, extras, truth_lab


def _summary_rows(rows_by_mode) -> list[dict]:
    out = []
    for mode, rows in rows_by_mode.items():
        rows = [r for r in rows if r.get("dice_atlas") is not None]
        if not rows:
            continue
        for stage in ("atlas", "refined"):
            d = np.array([r[f"dice_{stage}"] for r in rows])
            a = np.array([r[f"apd_ssd_mm_{stage}"] for r in rows])
            out.append({
                "mode": mode, "stage": stage, "n": len(rows),
                "dice_mean": float(d.mean()), "dice_std": float(d.std()),
                "apd_ssd_mm_mean": float(a.mean()), "apd_ssd_mm_std": float(a.std()),
            })
    return out


SUMMARY_FIELDS = ("mode", "stage", "n", "dice_mean", "dice_std", "apd_ssd_mm_mean", "apd_ssd_mm_std")


def write_manifest(cfg: PipelineConfig, out_dir: Path, timings: dict[str, float]) -> Path:
    lines = [
        f"toolkit = laseg {__version__}",
        f"config_sha256 = {config_hash(cfg)}",
        f"seed = {cfg.seed}",
        f"python = {platform.python_version()}",
        f"numpy = {np.__version__}",
    ]
    lines += [f"wall_seconds.{k} = {v:.3f}" for k, v in timings.items()]
    lines += ["", "# configuration", config_text(cfg)]
    path = out_dir / "manifest.txt"
    path.write_text("\n".join(lines))
    return path


def run_pipeline(cfg: PipelineConfig, figures: bool = True) -> PipelineResult:
    """normalize -> register -> propagate -> select -> fuse -> refine -> evaluate.

    With ``leave_one_out`` every atlas in turn is the target and the rest
    are its atlases; otherwise the configured target is segmented once.
    """
    from . import plotting

    out_dir = Path(cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    timer = _Timer()
    t_start = time.perf_counter()

    if not (cfg.paths.atlas_image_dir and cfg.paths.atlas_label_dir):
        raise PipelineInputError("atlas_image_dir and atlas_label_dir are required")
    atlases = _atlas_pairs(cfg.paths.atlas_image_dir, cfg.paths.atlas_label_dir)

    maps_dir = out_dir / "maps"
    maps = {}
    for name, img, _ in atlases:
        maps[name] = timer.run("normalize", stage_normalize, img, maps_dir / f"{name}.mhd", cfg.clic)

    cases = []
    if cfg.leave_one_out:
        if len(atlases) < 2:
            raise PipelineInputError("leave-one-out needs at least two atlases")
        for k, (name, _, lab) in enumerate(atlases):
            others = [a for a in atlases if a[0] != name]
            cases.append((name, maps[name], lab, others, k))
    else:
        if not cfg.paths.target_image:
            raise PipelineInputError("target_image is required unless leave_one_out is set")
        name = Path(cfg.paths.target_image).stem
        tmap = timer.run("normalize", stage_normalize, cfg.paths.target_image,
                         maps_dir / f"target_{name}.mhd", cfg.clic)
        cases.append((name, tmap, cfg.paths.target_label or None, atlases, 0))

    rows_by_mode: dict[str, list[dict]] = {m: [] for m in cfg.modes}
    traces: dict[str, list] = {}
    for name, tmap, truth, others, k in cases:
        log.info("case %s: %d atlases", name, len(others))
        rows, extras, truth_lab = _run_case(
            name, tmap, truth, others, [maps[a[0]] for a in others],
            out_dir / "cases" / name, cfg, timer, case_seed(cfg.seed, k))
        for mode, row in rows.items():
            rows_by_mode[mode].append(row)
        if figures:
            history, refined = extras[cfg.modes[0]]
            traces[name] = refined.trace
            fig_dir = out_dir / "figures"
            if history is not None:
                plotting.plot_selection_history(history.history, fig_dir / f"selection_{name}.png",
                                                title=name)
            plotting.plot_overlay(read_mhd(tmap), truth_lab, refined.mask,
                                  fig_dir / f"overlay_{name}.png")

    for mode, rows in rows_by_mode.items():
        write_csv(rows, RESULT_FIELDS, out_dir / f"results_{mode}.csv")
    summary = _summary_rows(rows_by_mode)
    if summary:
        write_csv(summary, SUMMARY_FIELDS, out_dir / "summary.csv")
    if figures:
        if summary:
            plotting.plot_case_metrics(rows_by_mode, out_dir / "figures" / "case_metrics.png")
        plotting.plot_energy_traces(traces, out_dir / "figures" / "energy_traces.png")

    timer.totals["total"] = time.perf_counter() - t_start
    write_manifest(cfg, out_dir, timer.totals)
    return PipelineResult(out_dir, rows_by_mode, timer.totals)
