"""Configuration, manifest ingestion, benchmarking and contact sheets."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import baselines, metrics
from .errors import ConfigError, ContractError, HarmoniDiffError, ManifestError
from .harmonize import CandidateSet, HarmonizeConfig, harmonize, select_best
from .imagecore import load_image, save_image, to_grayscale
from .tasks import CompositionTask, place_source, prompt_for

logger = logging.getLogger(__name__)

CONFIG_ENV = "HARMONIDIFF_CONFIG"
METHODS = ("copy_paste", "poisson", "harmonidiff")
ROW_FIELDS = ("task_id", "method", "status", "bgd", "harmony_score", "selected_depth", "reason")
AGGREGATE_FIELDS = ("method", "n_ok", "n_failed", "mean_bgd", "mean_hs", "frechet_distance")
REFERENCE_SET_NOTE = "Frechet distance: per-method composites vs the manifest's target images, global image descriptors"


# --- configuration ----------------------------------------------------------


@dataclass
class MetricsConfig:
    bgd_width: int = metrics.BGD_MARGIN
    mask_jitter: int = metrics.MASK_JITTER
    scorer_path: Optional[str] = None
    scorer_samples: int = 200


@dataclass
class RunConfig:
    harmonize: HarmonizeConfig = field(default_factory=HarmonizeConfig)
    poisson: baselines.PoissonConfig = field(default_factory=baselines.PoissonConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    seed: int = 0


def _section(doc, name):
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    return value


def _build(cls, values, section):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown key(s) in {section!r}: {', '.join(sorted(unknown))}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section!r} section: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    """Build a :class:`RunConfig`; every field has a default, so ``{}`` is valid.

    Sections: ``schedule``, ``codec``, ``predictor``, ``harmonize``,
    ``poisson``, ``metrics``, plus a top-level integer ``seed``.
    """
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    known = {"schedule", "codec", "predictor", "harmonize", "poisson", "metrics", "seed"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    defaults = HarmonizeConfig()
    hz_values = dict(_section(doc, "harmonize"))
    for key in ("schedule", "codec", "predictor"):
        if key in hz_values:
            raise ConfigError(f"{key!r} is a top-level section, not part of 'harmonize'")
    hz_values["schedule"] = {**defaults.schedule, **_section(doc, "schedule")}
    hz_values["codec"] = {**defaults.codec, **_section(doc, "codec")}
    predictor = _section(doc, "predictor")
    if "kind" in predictor and predictor["kind"] != defaults.predictor["kind"]:
        hz_values["predictor"] = dict(predictor)
    else:
        hz_values["predictor"] = {**defaults.predictor, **predictor}
    hz = _build(HarmonizeConfig, hz_values, "harmonize")
    try:
        hz.validate()
        hz.build_schedule()
        hz.build_codec()
    except ContractError as exc:
        raise ConfigError(str(exc)) from exc
    poisson = _build(baselines.PoissonConfig, _section(doc, "poisson"), "poisson")
    metrics_cfg = _build(MetricsConfig, _section(doc, "metrics"), "metrics")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")
    return RunConfig(hz, poisson, metrics_cfg, seed)


def load_config(path=None) -> RunConfig:
    """Read a JSON config; falls back to ``$HARMONIDIFF_CONFIG``, then to defaults."""
    path = path or os.environ.get(CONFIG_ENV)
    if not path:
        return RunConfig()
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return config_from_dict(doc)


def scorer_for(cfg: RunConfig) -> metrics.HarmonyScorer:
    if cfg.metrics.scorer_path:
        return metrics.HarmonyScorer.load(cfg.metrics.scorer_path)
    return metrics.default_scorer(cfg.seed, cfg.metrics.scorer_samples)


# --- manifest ---------------------------------------------------------------


@dataclass
class ManifestEntry:
    source_path: Path
    target_path: Path
    paste_x: int
    paste_y: int
    src_gsd: float
    tar_gsd: float
    mask_path: Optional[Path] = None
    source_label: Optional[str] = None
    target_country: Optional[str] = None
    task_id: str = ""

    @property
    def prompt(self) -> Optional[str]:
        return prompt_for(self.source_label, self.target_country)

    def load_task(self) -> CompositionTask:
        source = load_image(self.source_path)
        target = load_image(self.target_path)
        mask = load_mask(self.mask_path) if self.mask_path else None
        prompt = self.prompt
        return CompositionTask(
            source=source, target=target, paste_origin=(self.paste_x, self.paste_y),
            source_mask=mask, src_gsd=self.src_gsd, tar_gsd=self.tar_gsd,
            conditioning=prompt.encode("utf-8") if prompt else None)


@dataclass
class Manifest:
    entries: list
    path: Optional[Path] = None

    def __len__(self):
        return len(self.entries)


_REQUIRED = ("source_path", "target_path", "paste_x", "paste_y", "src_gsd", "tar_gsd")
_OPTIONAL = ("mask_path", "source_label", "target_country", "task_id")


def _number(entry, key, i, kind):
    value = entry[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ManifestError(f"entry {i}: {key!r} must be a number, got {value!r}", key, i)
    if kind is int:
        if int(value) != value or value < 0:
            raise ManifestError(f"entry {i}: {key!r} must be a non-negative integer, got {value!r}", key, i)
        return int(value)
    if not (math.isfinite(value) and value > 0):
        raise ManifestError(f"entry {i}: {key!r} must be positive, got {value!r}", key, i)
    return float(value)


def parse_manifest(doc, base_dir=Path(".")) -> Manifest:
    if not isinstance(doc, list):
        raise ManifestError("manifest must be a JSON array of entry objects")
    entries = []
    for i, raw in enumerate(doc):
        if not isinstance(raw, dict):
            raise ManifestError(f"entry {i} is not an object", None, i)
        for key in _REQUIRED:
            if key not in raw:
                raise ManifestError(f"entry {i}: missing required field {key!r}", key, i)
        unknown = set(raw) - set(_REQUIRED) - set(_OPTIONAL)
        if unknown:
            raise ManifestError(f"entry {i}: unknown field(s) {', '.join(sorted(unknown))}", sorted(unknown)[0], i)
        paths = {}
        for key in ("source_path", "target_path", "mask_path"):
            value = raw.get(key)
            if value is None:
                continue
            if not isinstance(value, str) or not value:
                raise ManifestError(f"entry {i}: {key!r} must be a non-empty string", key, i)
            paths[key] = base_dir / value
        labels = {}
        for key in ("source_label", "target_country", "task_id"):
            value = raw.get(key)
            if value is not None and not isinstance(value, str):
                raise ManifestError(f"entry {i}: {key!r} must be a string", key, i)
            labels[key] = value
        entries.append(ManifestEntry(
            source_path=paths["source_path"], target_path=paths["target_path"],
            mask_path=paths.get("mask_path"),
            paste_x=_number(raw, "paste_x", i, int), paste_y=_number(raw, "paste_y", i, int),
            src_gsd=_number(raw, "src_gsd", i, float), tar_gsd=_number(raw, "tar_gsd", i, float),
            source_label=labels["source_label"], target_country=labels["target_country"],
            task_id=labels["task_id"] or f"task{i:04d}"))
    ids = [e.task_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError("task_id values must be unique", "task_id")
    return Manifest(entries)


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest; relative paths resolve against its directory."""
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    manifest = parse_manifest(doc, path.parent)
    manifest.path = path
    return manifest


def load_mask(path) -> np.ndarray:
    """Binary mask from an image file: gray level above one half is inside."""
    return to_grayscale(load_image(path)) > 0.5


def save_mask(mask, path) -> None:
    save_image(np.asarray(mask, dtype=np.float64), path)


# --- benchmark --------------------------------------------------------------


@dataclass
class BenchRow:
    task_id: str
    method: str
    status: str = "ok"
    bgd: Optional[float] = None
    harmony_score: Optional[float] = None
    selected_depth: Optional[int] = None
    runtime_ms: Optional[float] = None
    reason: str = ""


@dataclass
class BenchReport:
    rows: list
    aggregates: list
    methods: tuple

    @property
    def all_failed(self) -> bool:
        return bool(self.rows) and all(r.status != "ok" for r in self.rows)

    def rows_csv(self, include_timing: bool = False) -> str:
        fields = ROW_FIELDS + (("runtime_ms",) if include_timing else ())
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(fields)
        for row in self.rows:
            writer.writerow([_fmt(getattr(row, f)) for f in fields])
        return buf.getvalue()

    def aggregates_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(AGGREGATE_FIELDS)
        for agg in self.aggregates:
            writer.writerow([_fmt(agg[f]) for f in AGGREGATE_FIELDS])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "header": {"methods": list(self.methods), "reference_set": REFERENCE_SET_NOTE,
                       "bgd_units": "grayscale intensity in [0, 1]"},
            "rows": [{f: getattr(r, f) for f in ROW_FIELDS} for r in self.rows],
            "aggregates": self.aggregates,
            "timings_ms": {f"{r.task_id}/{r.method}": r.runtime_ms for r in self.rows},
        }

    def write(self, out_dir) -> None:
        out_dir = Path(out_dir)
        (out_dir / "report.csv").write_text(self.rows_csv())
        (out_dir / "aggregates.csv").write_text(self.aggregates_csv())
        with open(out_dir / "report.json", "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return "nan" if math.isnan(value) else f"{value:.6g}"
    return str(value)


def _run_method(method: str, task: CompositionTask, cfg: RunConfig, scorer):
    if method == "copy_paste":
        return baselines.copy_paste(task), None
    if method == "poisson":
        return baselines.poisson_blend(task, cfg.poisson), None
    if method == "harmonidiff":
        depth, image, _ = harmonize(task, cfg.harmonize, scorer)
        return image, depth
    raise ContractError(f"unknown method {method!r}")


def _run_task(entry, methods, cfg, scorer, out_dir):
    rows, composites = [], {}
    try:
        task = entry.load_task() if isinstance(entry, ManifestEntry) else entry[1]
        omega = place_source(task).omega
    except (OSError, HarmoniDiffError, ValueError) as exc:
        reason = f"{type(exc).__name__}: {exc}"
        return [BenchRow(_task_id(entry), m, "failed", reason=reason) for m in methods], composites, None
    for method in methods:
        row = BenchRow(_task_id(entry), method)
        start = time.perf_counter()
        try:
            image, depth = _run_method(method, task, cfg, scorer)
            row.bgd = metrics.bgd_abs(image, omega, cfg.metrics.bgd_width)
            row.harmony_score = metrics.harmony_score(scorer, image, omega, cfg.metrics.mask_jitter)
            row.selected_depth = depth
            if out_dir is not None:
                save_image(image, out_dir / "composites" / f"{row.task_id}_{method}.png")
            composites[method] = image
        except (OSError, HarmoniDiffError, ValueError) as exc:
            row.status = "failed"
            row.reason = f"{type(exc).__name__}: {exc}"
        row.runtime_ms = (time.perf_counter() - start) * 1e3
        rows.append(row)
    return rows, composites, task.target


def _task_id(entry):
    return entry.task_id if isinstance(entry, ManifestEntry) else entry[0]


def _frechet_or_none(samples, reference):
    if len(samples) < 2 or len(reference) < 2:
        return None
    try:
        return metrics.frechet_distance(metrics.feature_stats(samples), metrics.feature_stats(reference))
    except HarmoniDiffError as exc:
        logger.warning("Frechet distance unavailable: %s", exc)
        return None


def run_benchmark(manifest, methods, cfg: Optional[RunConfig] = None, out_dir=None,
                  scorer=None, workers: int = 1) -> BenchReport:
    """Run every method on every task and collect metrics.

    ``manifest`` is a :class:`Manifest` or a list of ``(task_id, CompositionTask)``
    pairs. Per-task failures become failed rows; the run continues. Rows are
    ordered by manifest order, then by :data:`METHODS` order.
    """
    cfg = cfg or RunConfig()
    unknown = set(methods) - set(METHODS)
    if unknown or not methods:
        raise ContractError(f"methods must be a non-empty subset of {METHODS}, got {sorted(methods)}")
    methods = tuple(m for m in METHODS if m in set(methods))
    entries = manifest.entries if isinstance(manifest, Manifest) else list(manifest)
    scorer = scorer if scorer is not None else scorer_for(cfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "composites").mkdir(parents=True, exist_ok=True)

    def work(entry):
        return _run_task(entry, methods, cfg, scorer, out_dir)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(work, entries))
    else:
        results = [work(e) for e in entries]

    rows = [row for task_rows, _, _ in results for row in task_rows]
    reference = [metrics.image_descriptor(t) for _, _, t in results if t is not None]
    aggregates = []
    for method in methods:
        ok = [r for r in rows if r.method == method and r.status == "ok"]
        descriptors = [metrics.image_descriptor(c[method]) for _, c, _ in results if method in c]
        aggregates.append({
            "method": method,
            "n_ok": len(ok),
            "n_failed": sum(1 for r in rows if r.method == method and r.status != "ok"),
            "mean_bgd": float(np.mean([r.bgd for r in ok])) if ok else None,
            "mean_hs": float(np.mean([r.harmony_score for r in ok])) if ok else None,
            "frechet_distance": _frechet_or_none(descriptors, reference),
        })
    report = BenchReport(rows, aggregates, methods)
    if out_dir is not None:
        report.write(out_dir)
    return report


# --- candidate review -------------------------------------------------------


def sheet_layout(n: int) -> tuple[int, int]:
    """``(rows, cols)`` of the smallest near-square grid holding ``n`` tiles."""
    if n < 1:
        raise ContractError("need at least one tile")
    cols = math.ceil(math.sqrt(n))
    return math.ceil(n / cols), cols


def contact_sheet(cands: CandidateSet, out_path) -> dict:
    """Tile candidates by increasing depth into one image plus a JSON sidecar.

    The sidecar sits next to ``out_path`` with a ``.json`` suffix and flags
    the selected candidate. Returns the sidecar document.
    """
    entries = sorted(cands, key=lambda c: c.depth)
    if not entries:
        raise ContractError("cannot build a contact sheet from no candidates")
    selected_depth, _ = select_best(entries)
    th, tw, ch = entries[0].image.shape
    rows, cols = sheet_layout(len(entries))
    sheet = np.zeros((rows * th, cols * tw, ch))
    tiles = []
    for i, cand in enumerate(entries):
        r, c = divmod(i, cols)
        sheet[r * th:(r + 1) * th, c * tw:(c + 1) * tw] = cand.image
        tiles.append({"index": i, "row": r, "col": c, "depth": cand.depth,
                      "score": cand.score, "selected": cand.depth == selected_depth})
    out_path = Path(out_path)
    save_image(sheet, out_path)
    doc = {"rows": rows, "cols": cols, "tile_height": th, "tile_width": tw, "tiles": tiles}
    with open(out_path.with_suffix(".json"), "w") as fh:
        json.dump(doc, fh, indent=2)
    return doc


# --- scorer data ------------------------------------------------------------


def generate_negatives(manifest: Manifest, out_dir, cfg: Optional[RunConfig] = None) -> list:
    """Write copy-paste and Poisson composites with their masks for scorer training.

    Returns the written image paths; entries that fail are logged and skipped.
    """
    cfg = cfg or RunConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for entry in manifest.entries:
        try:
            task = entry.load_task()
            omega = place_source(task).omega
            images = {"copy_paste": baselines.copy_paste(task),
                      "poisson": baselines.poisson_blend(task, cfg.poisson)}
        except (OSError, HarmoniDiffError) as exc:
            logger.warning("skipping %s: %s", entry.task_id, exc)
            continue
        for method, image in images.items():
            path = out_dir / f"{entry.task_id}_{method}.png"
            save_image(image, path)
            save_mask(omega, out_dir / f"{entry.task_id}_{method}_mask.png")
            written.append(path)
    return written


_IMAGE_SUFFIXES = {".png", ".ppm", ".pgm", ".pnm"}


def load_labelled_dir(directory, rng: np.random.Generator) -> list:
    """``(image, mask)`` pairs from a directory.

    ``name.png`` pairs with ``name_mask.png`` when present; otherwise a random
    box mask is drawn (untouched background images need no mask on disk).
    """
    from .synthetic import box_mask, random_mask_box

    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES)
    pairs = []
    for path in files:
        if path.stem.endswith("_mask"):
            continue
        image = load_image(path)
        mask_path = next((path.with_name(f"{path.stem}_mask{s}") for s in _IMAGE_SUFFIXES
                          if path.with_name(f"{path.stem}_mask{s}").exists()), None)
        if mask_path is not None:
            mask = load_mask(mask_path)
        else:
            h, w = image.shape[:2]
            margin = max(1, min(h, w) // 8)
            size_hi = max(2, min(h, w) - 2 * margin)
            box = random_mask_box(rng, h, w, min(size_hi, max(2, min(h, w) // 5)), size_hi, margin)
            mask = box_mask((h, w), box)
        pairs.append((image, mask))
    return pairs
