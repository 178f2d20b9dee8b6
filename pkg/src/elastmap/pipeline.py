"""Config-driven workflows behind the CLI: generate, train, sweep, invert-fea, delentropy, report."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import adjoint, complexity, fem, fieldgen, net, pinn, report
from .config import config_hash
from .geometry import Mesh, build_crossed_mesh
from .materials import MaterialModel

log = logging.getLogger(__name__)

THRESHOLD_PCT = 5.0
SWEEP_COLUMNS = (
    "variant",
    "fcnn",
    "n_seeds",
    "e_l2_mean",
    "e_l2_std",
    "time_mean_s",
    "below_threshold",
    "initial_loss",
    "final_loss",
    "failures",
)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(outdir: Path, command: str, cfg: dict, seeds: dict, inputs=(), outputs=()) -> Path:
    """JSON provenance record; contents depend only on the inputs (no clock, no host)."""
    doc = {
        "command": command,
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seeds": seeds,
        "inputs": {Path(p).name: sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    path = outdir / f"manifest_{command}.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def mesh_from(cfg: dict) -> Mesh:
    return build_crossed_mesh(cfg["mesh"]["grid_n"])


def model_from(cfg: dict) -> MaterialModel:
    m = cfg["material"]
    return MaterialModel(kind=m["kind"], nu=m["nu"], mu2=m["mu2"], Jm=m["Jm"])


def load_from(cfg: dict) -> fem.BoundaryLoad:
    return fem.BoundaryLoad(d=cfg["load"]["d"], steps=cfg["load"]["steps"])


def modulus_from(cfg: dict, mesh: Mesh) -> tuple[np.ndarray, np.ndarray | None]:
    """Ground-truth element modulus plus the nodal intensity field when there is one."""
    f = cfg["field"]
    src = f["source"]
    if src == "grf":
        field = fieldgen.sample_grf(mesh, f["length_scale"], f["seed"])
        return fieldgen.elemental_modulus(field, mesh), field.values
    if src == "image":
        field = fieldgen.map_image_to_nodes(fieldgen.load_image(f["image_path"]), mesh)
        return fieldgen.elemental_modulus(field, mesh), field.values
    if src == "uniform":
        return np.full(mesh.n_elements, float(f["value"])), None
    return fieldgen.inclusion_modulus(mesh, f["inside"], f["outside"], tuple(f["centre"]), f["radius"]), None


def pinn_config_from(cfg: dict, variant=None, fcnn=None, seed=None, iterations=None) -> pinn.PinnConfig:
    p = cfg["pinn"]
    w = p["weights"]
    return pinn.PinnConfig(
        variant=variant or p["variant"],
        fcnn=fcnn or p["fcnn"],
        load=load_from(cfg),
        material=model_from(cfg),
        w_pde=w["pde"],
        w_const=w["const"],
        w_data=w["data"],
        lr=p["lr"],
        lr_decay=p["lr_decay"],
        iterations=p["iterations"] if iterations is None else iterations,
        seed=p["seed"] if seed is None else seed,
        log_stride=p["log_stride"],
        precision=p["precision"],
    )


def write_element_csv(path: Path, mesh: Mesh, values: np.ndarray) -> None:
    lines = ["element,x,y,E"]
    for k, ((x, y), v) in enumerate(zip(mesh.centroids().tolist(), np.asarray(values, float).tolist())):
        lines.append(f"{k},{x:.17g},{y:.17g},{v:.17g}")
    path.write_text("\n".join(lines) + "\n")


def read_element_csv(path: Path) -> np.ndarray:
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return raw[:, 3]


# ---------------------------------------------------------------- generate


@dataclass
class Reference:
    mesh: Mesh
    u: np.ndarray
    strain: np.ndarray  # (N, 3) exx, eyy, exy
    E_truth: np.ndarray


def simulate(cfg: dict) -> tuple[Mesh, fem.FemSolution, np.ndarray, np.ndarray | None]:
    mesh = mesh_from(cfg)
    E, nodal = modulus_from(cfg, mesh)
    sol = fem.solve_forward(mesh, model_from(cfg), E, load_from(cfg))
    return mesh, sol, E, nodal


def cmd_generate(cfg: dict, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    mesh, sol, E, nodal = simulate(cfg)
    outputs = [outdir / "reference.csv", outdir / "E_truth.csv"]
    fem.write_solution_csv(outputs[0], mesh, sol)
    write_element_csv(outputs[1], mesh, E)
    if nodal is not None:
        outputs.append(outdir / "intensity.csv")
        fieldgen.write_field_csv(outputs[-1], mesh, nodal)
    fem.write_solution_vtk(outdir / "reference.vtk", mesh, sol, modulus=E)
    outputs.append(outdir / "reference.vtk")
    inputs = [cfg["field"]["image_path"]] if cfg["field"]["source"] == "image" else []
    write_manifest(outdir, "generate", cfg, {"field": cfg["field"]["seed"]}, inputs, outputs)
    return {"nodes": mesh.n_nodes, "elements": mesh.n_elements, "newton_iterations": sol.newton_iterations}


def load_reference(cfg: dict, ref_dir: Path) -> Reference:
    mesh = mesh_from(cfg)
    data = fem.read_solution_csv(ref_dir / "reference.csv")
    if data.nodes.shape != mesh.nodes.shape or not np.allclose(data.nodes, mesh.nodes, atol=1e-12):
        raise ValueError(f"{ref_dir / 'reference.csv'} does not match a grid_n={cfg['mesh']['grid_n']} mesh")
    E = read_element_csv(ref_dir / "E_truth.csv")
    if E.shape[0] != mesh.n_elements:
        raise ValueError("E_truth.csv does not match the mesh")
    return Reference(mesh, data.u, data.strain, E)


def noisy_strain(cfg: dict, strain: np.ndarray) -> np.ndarray:
    return fieldgen.add_strain_noise(strain, cfg["noise"]["percent"], cfg["noise"]["seed"])


# ------------------------------------------------------------------- train


def run_training(cfg: dict, ref: Reference, pconf: pinn.PinnConfig):
    stats = pinn.TransformStats.from_displacements(ref.u)
    result = pinn.train(pconf, ref.mesh, noisy_strain(cfg, ref.strain), stats, ground_truth_E=ref.E_truth)
    rep = pinn.evaluate_fields(result.net, pconf, ref.mesh, stats, ref.E_truth, ref.u, ref.strain)
    return result, rep


def cmd_train(cfg: dict, ref_dir: Path, outdir: Path) -> dict:
    ref = load_reference(cfg, ref_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    pconf = pinn_config_from(cfg)
    seeds = {"pinn": pconf.seed, "noise": cfg["noise"]["seed"]}
    inputs = [ref_dir / "reference.csv", ref_dir / "E_truth.csv"]
    try:
        result, rep = run_training(cfg, ref, pconf)
    except pinn.TrainingDiverged as exc:
        diag = outdir / "diverged.json"
        diag.write_text(json.dumps({"iteration": exc.iteration, "losses": exc.losses}, indent=2) + "\n")
        write_manifest(outdir, "train", cfg, seeds, inputs, [diag])
        raise
    outputs = [outdir / "history.csv", outdir / "fields_nodes.csv", outdir / "fields_elements.csv"]
    result.history.write_csv(outputs[0])
    rep.write_csv(outputs[1], outputs[2], ref.mesh)
    outputs.append(outdir / "checkpoint.bin")
    net.save_checkpoint(outputs[-1], result.net, pconf.iterations)
    write_manifest(outdir, "train", cfg, seeds, inputs, outputs)
    return {"l2": rep.l2, "clamped": result.history.clamp_count}


# ------------------------------------------------------------------- sweep


def _sweep_job(args):
    cfg, ref, variant, fcnn, seed = args
    try:
        import torch

        torch.set_num_threads(1)
    except Exception:  # pragma: no cover
        pass
    pconf = pinn_config_from(cfg, variant=variant, fcnn=fcnn, seed=seed)
    t0 = time.perf_counter()
    try:
        result, rep = run_training(cfg, ref, pconf)
    except (pinn.TrainingDiverged, FloatingPointError) as exc:
        log.warning("sweep job %s/%s seed %d failed: %s", variant, fcnn, seed, exc)
        return (variant, fcnn, seed), {"e_l2": np.nan, "time": time.perf_counter() - t0, "l0": np.nan, "l1": np.nan}
    hist = result.history
    return (variant, fcnn, seed), {
        "e_l2": rep.l2["E"],
        "time": time.perf_counter() - t0,
        "l0": hist.total[0],
        "l1": hist.total[-1],
    }


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get("ELASTMAP_THREADS", "1")
    try:
        cap = max(1, int(raw))
    except ValueError:
        raise ValueError(f"ELASTMAP_THREADS must be a positive integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def sweep_rows(results: dict, combos, seeds) -> list[dict]:
    """Aggregate keyed job results into table rows, independent of completion order."""
    rows = []
    for variant, fcnn in combos:
        vals = [results[(variant, fcnn, s)] for s in seeds]
        errs = np.array([v["e_l2"] for v in vals])
        ok = np.isfinite(errs)
        mean = float(errs[ok].mean()) if ok.any() else float("nan")
        std = float(errs[ok].std()) if ok.any() else float("nan")
        rows.append(
            {
                "variant": variant,
                "fcnn": fcnn,
                "n_seeds": len(seeds),
                "e_l2_mean": mean,
                "e_l2_std": std,
                "time_mean_s": float(np.mean([v["time"] for v in vals])),
                "below_threshold": int(np.isfinite(mean) and mean < THRESHOLD_PCT),
                "initial_loss": float(np.mean([v["l0"] for v in vals])),
                "final_loss": float(np.mean([v["l1"] for v in vals])),
                "failures": int((~ok).sum()),
            }
        )
    return rows


def write_sweep_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in r.items()})


def cmd_sweep(cfg: dict, outdir: Path, variants, fcnns, k: int) -> list[dict]:
    if k < 1:
        raise ValueError("sweep needs k >= 1 seeds")
    outdir.mkdir(parents=True, exist_ok=True)
    mesh, sol, E, _ = simulate(cfg)
    ref = Reference(mesh, sol.u, fem_strain_columns(sol.strain_nodes), E)
    combos = [(v, f) for v in variants for f in fcnns]
    seeds = list(range(1, k + 1))
    jobs = [(cfg, ref, v, f, s) for v, f in combos for s in seeds]
    n_workers = worker_count(len(jobs))
    if n_workers == 1:
        results = dict(_sweep_job(j) for j in jobs)
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = dict(pool.map(_sweep_job, jobs))
    rows = sweep_rows(results, combos, seeds)
    table = outdir / "sweep.csv"
    write_sweep_csv(table, rows)
    write_manifest(outdir, "sweep", cfg, {"pinn": seeds, "field": cfg["field"]["seed"], "workers": n_workers}, (), [])
    return rows


def fem_strain_columns(strain_nodes: np.ndarray) -> np.ndarray:
    return np.column_stack([strain_nodes[:, 0, 0], strain_nodes[:, 1, 1], strain_nodes[:, 0, 1]])


# -------------------------------------------------------------- invert-fea


def cmd_invert_fea(cfg: dict, ref_dir: Path, outdir: Path, snapshot_stride: int = 1) -> adjoint.AdjointRun:
    ref = load_reference(cfg, ref_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    snapdir = outdir / "snapshots"
    snapdir.mkdir(exist_ok=True)
    a = cfg["adjoint"]
    run = adjoint.AdjointRun(E_init=a["E_init"], max_iter=a["max_iter"], tol=a["tol"])
    snaps = []

    def keep(it, E):
        if it % snapshot_stride == 0:
            p = snapdir / f"E_{it:05d}.csv"
            write_element_csv(p, ref.mesh, E)
            snaps.append(p)

    adjoint.inverse_fea(
        ref.mesh, model_from(cfg), load_from(cfg), noisy_strain(cfg, ref.strain), run, E_truth=ref.E_truth, callback=keep
    )
    outputs = [outdir / "adjoint_history.csv", outdir / "E_final.csv", outdir / "E_best.csv"]
    run.write_history_csv(outputs[0])
    write_element_csv(outputs[1], ref.mesh, run.E_final)
    write_element_csv(outputs[2], ref.mesh, run.E_best)
    (outdir / "adjoint_status.txt").write_text(run.status + "\n")
    inputs = [ref_dir / "reference.csv", ref_dir / "E_truth.csv"]
    write_manifest(outdir, "invert-fea", cfg, {"noise": cfg["noise"]["seed"]}, inputs, outputs + snaps)
    return run


# -------------------------------------------------------------- delentropy


def raster_from_field_csv(path: Path) -> np.ndarray:
    """Corner-node values of a crossed-mesh nodal field CSV as an image (top row = y=1)."""
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n_total = raw.shape[0]
    # (n+1)^2 + n^2 = N  ->  2n^2 + 2n + 1 - N = 0
    n = int(round((-2 + np.sqrt(4 - 8 * (1 - n_total))) / 4))
    if (n + 1) ** 2 + n * n != n_total:
        raise ValueError(f"{path}: {n_total} rows is not a crossed-mesh node count")
    corners = raw[: (n + 1) ** 2, 3].reshape(n + 1, n + 1)
    return corners[::-1]


def cmd_delentropy(path: Path, histogram_csv: Path | None = None) -> float:
    if path.suffix.lower() == ".csv":
        raster = complexity.normalise_raster(raster_from_field_csv(path))
    else:
        raster = fieldgen.load_image(path) / 255.0
    if histogram_csv is not None:
        complexity.deldensity(raster).write_csv(histogram_csv)
    return complexity.delentropy(raster)


# ------------------------------------------------------------------ report


def _read_columns(path: Path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return {k: np.array([float(r[k]) if r[k] not in ("", "nan") else np.nan for r in rows]) for k in rows[0]}


def cmd_report(run_dir: Path) -> list[Path]:
    """Render SVGs for whatever history and field CSVs the run directory holds."""
    written = []
    hist = run_dir / "history.csv"
    if hist.exists():
        h = _read_columns(hist)
        svg = report.convergence_svg(
            h["iteration"], {k: h[k] for k in ("l_pde", "l_const", "l_data", "total")}, title="PINN losses"
        )
        written.append(run_dir / "convergence.svg")
        report.write(written[-1], svg)
        if np.isfinite(h["e_l2_pct"]).any():
            written.append(run_dir / "e_error.svg")
            report.write(written[-1], report.convergence_svg(h["iteration"], {"E L2 %": h["e_l2_pct"]}, title="E error"))
    adj = run_dir / "adjoint_history.csv"
    if adj.exists():
        h = _read_columns(adj)
        series = {"strain %": h["strain_error_pct"], "modulus %": h["modulus_error_pct"]}
        written.append(run_dir / "adjoint_convergence.svg")
        report.write(written[-1], report.convergence_svg(h["iteration"], series, title="inverse FEA"))
    for name in ("fields_elements.csv", "E_truth.csv", "E_final.csv"):
        p = run_dir / name
        if p.exists():
            vals = read_element_csv(p)
            n = int(round(np.sqrt(vals.shape[0] / 4)))
            svg = report.field_svg(report.element_grid(vals, n), title=p.stem)
            written.append(run_dir / f"{p.stem}_map.svg")
            report.write(written[-1], svg)
    if not written:
        raise FileNotFoundError(f"{run_dir}: no history or field CSVs to report on")
    return written
