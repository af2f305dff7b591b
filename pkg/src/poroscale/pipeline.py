"""Pipeline stages over a run directory.

Each stage reads the artifacts of earlier stages from the run directory,
writes its own in documented formats, and records wall times under
``timing/``. Realizations 0 .. M-1 form the training corpus; the next
``n_test_realizations`` indices are held-out domains used for the solve
and report stages. All stages are deterministic given the configuration,
so reruns reproduce every artifact byte for byte (timing files excluded).

Layout inside the run directory:

    fields/real_<l>_{perm,young}.nhar     nodal property arrays
    tensors/real_<l>_{perm,stiff}.nhar    effective tensors (direct)
    predicted/real_<l>_{perm,stiff}.nhar  effective tensors (surrogate)
    datasets/{permeability,elasticity}.nhds
    models/{permeability,elasticity}.nhnn + loss_<target>.csv
    metrics/<target>.csv
    states/{fine,coarse_direct,coarse_predicted}_<l>_{p,u}.nhar
    timing/<stage>.json
    report/errors.csv, report/summary.txt
"""

import json
import time
from pathlib import Path

import numpy as np

from .arrayio import read_array, write_array
from .dataset import (
    TARGET_ELASTICITY,
    TARGET_PERMEABILITY,
    build_dataset,
    load_dataset,
    patch_input_array,
    save_dataset,
    split,
)
from .errors import ParameterError, PipelineError
from .grid import StructuredGrid
from .homogenize import (
    EffectiveTensors,
    extract_patches,
    homogenize_domain,
    patch_ratio,
)
from .poro import PoroState, error_norms, solve_coarse, solve_poroelasticity
from .random_field import PropertyFields, build_kl_basis, field_to_properties, sample_field
from .surrogate import (
    AdamConfig,
    TrainConfig,
    build_network,
    evaluate,
    load_network,
    predict_effective,
    save_network,
    train,
)

TARGETS = (TARGET_PERMEABILITY, TARGET_ELASTICITY)

DIRECT = "direct"
PREDICTED = "predicted"

REFERENCE_SPEEDUP_NOTE = (
    "full-scale reference range: x76 to x289 (not expected at desk scale)"
)


class RunLayout:
    """Path bookkeeping for one run directory."""

    def __init__(self, root):
        self.root = Path(root)

    def dir(self, name):
        path = self.root / name
        path.mkdir(parents=True, exist_ok=True)
        return path

    def field_path(self, index, prop):
        return self.root / "fields" / f"real_{index:04d}_{prop}.nhar"

    def tensor_path(self, index, kind, source=DIRECT):
        sub = "tensors" if source == DIRECT else "predicted"
        return self.root / sub / f"real_{index:04d}_{kind}.nhar"

    def dataset_path(self, target):
        return self.root / "datasets" / f"{target}.nhds"

    def model_path(self, target):
        return self.root / "models" / f"{target}.nhnn"

    def loss_path(self, target):
        return self.root / "models" / f"loss_{target}.csv"

    def metrics_path(self, target):
        return self.root / "metrics" / f"{target}.csv"

    def state_path(self, kind, index, part):
        return self.root / "states" / f"{kind}_{index:04d}_{part}.nhar"

    def timing_path(self, stage):
        return self.root / "timing" / f"{stage}.json"

    @property
    def errors_csv(self):
        return self.root / "report" / "errors.csv"

    @property
    def summary_txt(self):
        return self.root / "report" / "summary.txt"


def train_indices(config):
    return range(config.n_realizations)


def held_out_indices(config):
    start = config.n_realizations
    return range(start, start + config.n_test_realizations)


def all_indices(config):
    return range(config.n_realizations + config.n_test_realizations)


def _require(path, command):
    if not Path(path).exists():
        raise PipelineError(f"missing {path}; run `poroscale {command}` first")


def _write_timing(layout, stage, payload):
    layout.dir("timing")
    payload = dict(payload)
    payload["stage"] = stage
    with open(layout.timing_path(stage), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_timing(layout, stage):
    path = layout.timing_path(stage)
    if not path.exists():
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_fields(layout, config, index):
    for prop in ("perm", "young"):
        _require(layout.field_path(index, prop), "generate-fields")
    return PropertyFields(
        perm=read_array(layout.field_path(index, "perm")),
        young=read_array(layout.field_path(index, "young")),
        eta=config.props.eta,
    )


def load_tensors(layout, config, index, source=DIRECT):
    command = "homogenize" if source == DIRECT else "predict"
    for kind in ("perm", "stiff"):
        _require(layout.tensor_path(index, kind, source), command)
    return EffectiveTensors(
        coarse_cells=config.coarse_cells,
        perm=read_array(layout.tensor_path(index, "perm", source)),
        stiffness=read_array(layout.tensor_path(index, "stiff", source)),
    )


def generate_fields_stage(config, layout):
    """Sample every realization's property fields and store them."""
    t_start = time.perf_counter()
    grid = StructuredGrid(config.fine_cells)
    basis = build_kl_basis(grid, config.field)
    layout.dir("fields")
    for index in all_indices(config):
        values = sample_field(basis, config.realization_seed(index))
        fields = field_to_properties(values, config.props)
        write_array(layout.field_path(index, "perm"), fields.perm)
        write_array(layout.field_path(index, "young"), fields.young)
    total = time.perf_counter() - t_start
    _write_timing(
        layout,
        "generate-fields",
        {
            "total_s": total,
            "n_realizations": len(all_indices(config)),
            "kl_terms": basis.n_terms,
        },
    )
    return {
        "n_realizations": len(all_indices(config)),
        "kl_terms": basis.n_terms,
        "captured_energy": basis.captured_fraction,
        "total_s": total,
    }


def homogenize_stage(config, layout):
    """Direct local solves: effective tensors for every realization."""
    grid = StructuredGrid(config.fine_cells)
    layout.dir("tensors")
    per_realization = {}
    t_start = time.perf_counter()
    for index in all_indices(config):
        fields = load_fields(layout, config, index)
        t0 = time.perf_counter()
        eff = homogenize_domain(
            grid, config.coarse_cells, fields, threads=config.threads
        )
        per_realization[str(index)] = time.perf_counter() - t0
        write_array(layout.tensor_path(index, "perm"), eff.perm)
        write_array(layout.tensor_path(index, "stiff"), eff.stiffness)
    total = time.perf_counter() - t_start
    _write_timing(
        layout,
        "homogenize",
        {"total_s": total, "per_realization_s": per_realization},
    )
    return {"n_realizations": len(per_realization), "total_s": total}


def build_dataset_stage(config, layout):
    """Assemble, scale, and store both training datasets."""
    grid = StructuredGrid(config.fine_cells)
    realizations = [load_fields(layout, config, i) for i in train_indices(config)]
    tensors = [load_tensors(layout, config, i) for i in train_indices(config)]
    layout.dir("datasets")
    t_start = time.perf_counter()
    sizes = {}
    for target in TARGETS:
        ds = build_dataset(grid, config.coarse_cells, realizations, tensors, target)
        save_dataset(ds, layout.dataset_path(target))
        sizes[target] = len(ds)
    total = time.perf_counter() - t_start
    _write_timing(layout, "dataset", {"total_s": total, "sizes": sizes})
    return {"sizes": sizes, "total_s": total}


def _loss_csv(history, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,train_mse,val_mse\n")
        for epoch, train_mse, val_mse in history:
            fh.write(f"{epoch},{train_mse!r},{val_mse!r}\n")


def train_stage(config, layout):
    """Train one network per target; store weights and loss history."""
    layout.dir("models")
    times = {}
    summary = {}
    for target in TARGETS:
        _require(layout.dataset_path(target), "build-dataset")
        ds = load_dataset(layout.dataset_path(target))
        parts = split(ds, config.split)
        network = build_network(
            ds.dimension,
            ds.patch_size,
            ds.n_out,
            dropout=config.train.dropout,
            seed=config.train.seed,
        )
        run_cfg = TrainConfig(
            epochs=config.train.epochs,
            batch_size=config.batch_size(),
            adam=AdamConfig(learning_rate=config.train.learning_rate),
            seed=config.train.seed,
        )
        t0 = time.perf_counter()
        history = train(network, parts["train"], parts["val"], run_cfg)
        times[target] = time.perf_counter() - t0
        save_network(network, layout.model_path(target))
        _loss_csv(history, layout.loss_path(target))
        summary[target] = {
            "epochs": len(history),
            "final_train_mse": history[-1][1] if history else None,
            "final_val_mse": history[-1][2] if history else None,
            "train_s": times[target],
        }
    _write_timing(layout, "train", {"offline_train_s": times})
    return summary


def _metrics_rows(metrics):
    rows = [("all", metrics.mse, metrics.mae_pct, metrics.rmse_pct)]
    for j in range(metrics.component_mse.size):
        rows.append(
            (
                str(j),
                float(metrics.component_mse[j]),
                float(metrics.component_mae_pct[j]),
                float(metrics.component_rmse_pct[j]),
            )
        )
    return rows


def evaluate_stage(config, layout):
    """Per-split metrics of the trained networks, written as CSV."""
    layout.dir("metrics")
    summary = {}
    for target in TARGETS:
        _require(layout.dataset_path(target), "build-dataset")
        _require(layout.model_path(target), "train")
        ds = load_dataset(layout.dataset_path(target))
        parts = split(ds, config.split)
        network = load_network(layout.model_path(target))
        with open(
            layout.metrics_path(target), "w", encoding="utf-8", newline="\n"
        ) as fh:
            fh.write("split,component,mse,mae_pct,rmse_pct\n")
            for name in ("train", "val", "test"):
                metrics = evaluate(network, parts[name])
                for component, mse, mae, rmse in _metrics_rows(metrics):
                    fh.write(f"{name},{component},{mse!r},{mae!r},{rmse!r}\n")
                if name == "test":
                    summary[target] = {
                        "test_mse": metrics.mse,
                        "test_mae_pct": metrics.mae_pct,
                        "test_rmse_pct": metrics.rmse_pct,
                    }
    return summary


def _predict_one(config, grid, networks, scalers, fields):
    """Surrogate tensors for all cells of one realization."""
    _, patches = extract_patches(grid, config.coarse_cells, fields)
    d = grid.dimension
    n_l = patch_ratio(grid, config.coarse_cells)
    outputs = {}
    for target in TARGETS:
        raw = np.stack(
            [
                patch_input_array(
                    p.perm if target == TARGET_PERMEABILITY else p.young, d, n_l
                )
                for p in patches
            ]
        )
        scaled = scalers[target].scale_input(raw)
        outputs[target] = predict_effective(
            networks[target], scaled, scalers[target], target, d
        )
    return outputs


def predict_stage(config, layout):
    """Replace local solves by network prediction on held-out domains."""
    grid = StructuredGrid(config.fine_cells)
    layout.dir("predicted")
    networks, scalers = {}, {}
    t0 = time.perf_counter()
    for target in TARGETS:
        _require(layout.model_path(target), "train")
        _require(layout.dataset_path(target), "build-dataset")
        networks[target] = load_network(layout.model_path(target))
        scalers[target] = load_dataset(layout.dataset_path(target)).scaler
    online_load = time.perf_counter() - t0

    per_realization = {}
    for index in held_out_indices(config):
        fields = load_fields(layout, config, index)
        t0 = time.perf_counter()
        outputs = _predict_one(config, grid, networks, scalers, fields)
        per_realization[str(index)] = time.perf_counter() - t0
        write_array(
            layout.tensor_path(index, "perm", PREDICTED),
            outputs[TARGET_PERMEABILITY],
        )
        write_array(
            layout.tensor_path(index, "stiff", PREDICTED),
            outputs[TARGET_ELASTICITY],
        )
    _write_timing(
        layout,
        "predict",
        {"online_load_s": online_load, "per_realization_s": per_realization},
    )
    return {
        "online_load_s": online_load,
        "n_realizations": len(per_realization),
        "per_realization_s": per_realization,
    }


def _write_states(layout, kind, index, states):
    write_array(
        layout.state_path(kind, index, "p"), np.stack([s.p for s in states])
    )
    write_array(
        layout.state_path(kind, index, "u"), np.stack([s.u for s in states])
    )


def solve_fine_stage(config, layout):
    """Reference fine-grid solves on the held-out realizations."""
    grid = StructuredGrid(config.fine_cells)
    layout.dir("states")
    per_realization = {}
    for index in held_out_indices(config):
        fields = load_fields(layout, config, index)
        t0 = time.perf_counter()
        states = solve_poroelasticity(
            grid, fields, config.constants, config.stepping
        )
        per_realization[str(index)] = time.perf_counter() - t0
        _write_states(layout, "fine", index, states)
    _write_timing(layout, "solve-fine", {"per_realization_s": per_realization})
    return {"per_realization_s": per_realization}


def solve_coarse_stage(config, layout, source=DIRECT):
    """Coarse solves from direct or predicted effective tensors."""
    if source not in (DIRECT, PREDICTED):
        raise ParameterError(f"unknown tensor source {source!r}")
    layout.dir("states")
    per_realization = {}
    for index in held_out_indices(config):
        eff = load_tensors(layout, config, index, source)
        t0 = time.perf_counter()
        states = solve_coarse(
            config.coarse_cells, eff, config.constants, config.stepping
        )
        per_realization[str(index)] = time.perf_counter() - t0
        _write_states(layout, f"coarse_{source}", index, states)
    _write_timing(
        layout,
        f"solve-coarse-{source}",
        {"per_realization_s": per_realization},
    )
    return {"per_realization_s": per_realization}


def _final_state(layout, kind, index, command):
    p_path = layout.state_path(kind, index, "p")
    u_path = layout.state_path(kind, index, "u")
    _require(p_path, command)
    _require(u_path, command)
    p = read_array(p_path)
    u = read_array(u_path)
    return PoroState(p=p[-1], u=u[-1], time=0.0)


def _speedup_block(layout, config):
    """Measured per-domain times for both routes, from stage timings."""
    homog = _read_timing(layout, "homogenize")
    predict = _read_timing(layout, "predict")
    train_t = _read_timing(layout, "train")
    lines = []
    if train_t and train_t.get("offline_train_s"):
        for target, seconds in sorted(train_t["offline_train_s"].items()):
            lines.append(f"offline training ({target}): {seconds:.3f} s")
    if predict and predict.get("online_load_s") is not None:
        lines.append(f"online model load: {predict['online_load_s']:.3f} s")
    speedups = {}
    if homog and predict:
        direct_times = homog.get("per_realization_s", {})
        predict_times = predict.get("per_realization_s", {})
        for index in sorted(set(direct_times) & set(predict_times), key=int):
            direct_s = direct_times[index]
            online_s = predict_times[index]
            if online_s > 0:
                speedups[index] = direct_s / online_s
            lines.append(
                f"realization {index}: direct local solves {direct_s:.3f} s, "
                f"prediction {online_s:.3f} s, speedup x{direct_s / online_s:.1f}"
            )
    lines.append(REFERENCE_SPEEDUP_NOTE)
    return lines, speedups


def report_stage(config, layout):
    """Aggregate error norms and timings into errors.csv and summary.txt."""
    fine_grid = StructuredGrid(config.fine_cells)
    coarse_grid = StructuredGrid(config.coarse_cells)
    layout.dir("report")

    sources = [DIRECT]
    if all(
        layout.state_path(f"coarse_{PREDICTED}", i, part).exists()
        for i in held_out_indices(config)
        for part in ("p", "u")
    ):
        sources.append(PREDICTED)

    rows = []
    for source in sources:
        for index in held_out_indices(config):
            fields = load_fields(layout, config, index)
            fine_state = _final_state(layout, "fine", index, "solve-fine")
            coarse_state = _final_state(
                layout,
                f"coarse_{source}",
                index,
                f"solve-coarse --tensors {source}",
            )
            report = error_norms(
                fine_state, coarse_state, fine_grid, coarse_grid, fields
            )
            rows.append((config.name, source, index) + report.as_tuple())

    with open(layout.errors_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("test,case,realization,e_p_L2,e_p_en,e_u_L2,e_u_en\n")
        for row in rows:
            test, case, index = row[:3]
            values = ",".join(repr(v) for v in row[3:])
            fh.write(f"{test},{case},{index},{values}\n")

    lines = [
        f"run {config.name}: {config.dimension}D, "
        f"fine {'x'.join(str(c) for c in config.fine_cells)}, "
        f"coarse {'x'.join(str(c) for c in config.coarse_cells)}, "
        f"{config.n_realizations} training / "
        f"{config.n_test_realizations} held-out realizations",
        "",
        "relative errors of the coarse solution at final time (percent):",
        "case        realization   e_p_L2   e_p_en   e_u_L2   e_u_en",
    ]
    for row in rows:
        lines.append(
            f"{row[1]:<12}{row[2]:>10}   {row[3]:>7.3f} {row[4]:>8.3f} "
            f"{row[5]:>8.3f} {row[6]:>8.3f}"
        )
    for source in sources:
        block = np.array([row[3:] for row in rows if row[1] == source])
        mean = block.mean(axis=0)
        lines.append(
            f"{source + ' mean':<22}   {mean[0]:>7.3f} {mean[1]:>8.3f} "
            f"{mean[2]:>8.3f} {mean[3]:>8.3f}"
        )
    lines.append("")
    lines.append("timing:")
    timing_lines, speedups = _speedup_block(layout, config)
    lines.extend("  " + line for line in timing_lines)
    with open(layout.summary_txt, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return {
        "rows": len(rows),
        "sources": sources,
        "speedups": speedups,
        "errors_csv": str(layout.errors_csv),
        "summary_txt": str(layout.summary_txt),
    }
