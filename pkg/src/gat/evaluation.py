"""Cross-attack robustness evaluation and report export.

Builds the defended-model x attack accuracy grid with a mean-over-unseen
column: for each model the mean skips the attack kind it was trained
against (and the clean column), which is the number the whole exercise is
about — robustness to threat models never seen in training.  Latent attack
cells evaluate on generated images; pixel attack cells on dataset images.
"""

import csv
import dataclasses
import json
from pathlib import Path

import numpy as np

from .attacks import latent, pixel
from .errors import ConfigError
from .manifest import canonical_json, config_hash
from .rng import stream
from .tensor import as_tensor

LATENT_KINDS = ("gat",)
PIXEL_KINDS = pixel.KINDS  # pgd | ifgsm | spatial | recolor


def clean_accuracy(model, images, labels, batch=256):
    images = np.asarray(images)
    labels = np.asarray(labels)
    hits = 0
    for at in range(0, images.shape[0], batch):
        preds = model.predict(as_tensor(images[at:at + batch]))
        hits += int((preds == labels[at:at + batch]).sum())
    return hits / images.shape[0]


@dataclasses.dataclass
class CellResult:
    accuracy: float
    records: list  # per-sample dicts, auditable


def _latent_cell(model, config, generators, n, seed):
    per_class = n // len(generators)
    outcomes = []
    for c, gen in enumerate(generators):
        seeds = [(seed, "cell", c, i) for i in range(per_class)]
        outcomes += latent.batch_attack(seeds, config, model, gen)
    records = [{"label": int(o.label), "pred": int(o.final_prediction),
                "fooled": bool(o.fooled), "iterations": int(o.iterations_used)}
               for o in outcomes]
    acc = 1.0 - latent.attack_stats(outcomes)["fooling_rate"]
    return CellResult(acc, records)


def _pixel_cell(model, config, dataset, n, seed):
    rows = stream(seed, "cell-rows").permutation(dataset.images.shape[0])[:n]
    images, labels = dataset.images[rows], dataset.labels[rows]
    adv = pixel.run_pixel_attack(images, labels, model, config)
    preds = model.predict(as_tensor(adv))
    records = [{"index": int(r), "label": int(l), "pred": int(p),
                "correct": bool(p == l)}
               for r, l, p in zip(rows, labels, preds)]
    return CellResult(float((preds == labels).mean()), records)


def attack_accuracy(model, attack_name, config, dataset=None, generators=None,
                    n=500, seed=0):
    """Accuracy of `model` on attacked inputs.

    Latent kinds need `generators` (evaluation set is generated); pixel
    kinds need `dataset`.  Returns (accuracy, per-sample records).
    """
    if attack_name in LATENT_KINDS:
        if not generators:
            raise ConfigError("latent attack evaluation needs generators")
        cell = _latent_cell(model, config, generators, n, seed)
    elif attack_name in PIXEL_KINDS:
        if dataset is None:
            raise ConfigError("pixel attack evaluation needs a dataset")
        cell = _pixel_cell(model, config, dataset, n, seed)
    else:
        raise ConfigError(f"unknown attack kind {attack_name!r}")
    return cell.accuracy, cell.records


@dataclasses.dataclass
class RobustnessMatrix:
    model_names: list
    attack_names: list
    cells: dict            # (model, attack) -> accuracy
    clean: dict            # model -> accuracy
    mean_unseen: dict      # model -> mean over unseen attack cells
    trained_against: dict  # model -> attack name or None
    attack_hashes: dict    # attack -> config hash
    seed: int
    n_per_cell: int

    def unseen_attacks(self, model):
        skip = self.trained_against.get(model)
        return [a for a in self.attack_names if a != skip]

    def to_dict(self):
        return {
            "model_names": list(self.model_names),
            "attack_names": list(self.attack_names),
            "cells": {f"{m}/{a}": self.cells[(m, a)]
                      for m in self.model_names for a in self.attack_names},
            "clean": dict(self.clean),
            "mean_unseen": dict(self.mean_unseen),
            "trained_against": {m: self.trained_against.get(m)
                                for m in self.model_names},
            "attack_hashes": dict(self.attack_hashes),
            "seed": self.seed,
            "n_per_cell": self.n_per_cell,
        }


def robustness_matrix(models, attacks, dataset, generators, n_per_cell=500,
                      seed=0, record_sink=None):
    """models: {name: (classifier, trained_against)}; attacks: {name: config}.

    Every model faces every attack with the identical config; per-cell
    sampling comes from a stream keyed by (seed, model, attack) so cells are
    order-independent.  record_sink, if given, receives
    (model, attack, records) per cell.
    """
    model_names = list(models)
    attack_names = list(attacks)
    cells, clean, mean_unseen, trained = {}, {}, {}, {}
    for m in model_names:
        clf, against = models[m]
        trained[m] = against
        clean[m] = clean_accuracy(clf, dataset.images, dataset.labels)
        for a in attack_names:
            cell_seed = int(stream(seed, "cell", m, a).integers(0, 2 ** 31))
            acc, records = attack_accuracy(
                clf, a, attacks[a], dataset=dataset, generators=generators,
                n=n_per_cell, seed=cell_seed)
            cells[(m, a)] = acc
            if record_sink is not None:
                record_sink(m, a, records)
    matrix = RobustnessMatrix(
        model_names, attack_names, cells, clean, {}, trained,
        {a: attacks[a].hash() for a in attack_names}, seed, n_per_cell)
    for m in model_names:
        unseen = matrix.unseen_attacks(m)
        mean_unseen[m] = float(np.mean([cells[(m, a)] for a in unseen]))
    matrix.mean_unseen = mean_unseen
    return matrix


def ood_eval(model, test_dataset, ood_dataset):
    """(in-domain accuracy, out-of-domain accuracy)."""
    return (clean_accuracy(model, test_dataset.images, test_dataset.labels),
            clean_accuracy(model, ood_dataset.images, ood_dataset.labels))


# -- export -----------------------------------------------------------------

REPORT_VERSION = 1


def matrix_csv_rows(matrix):
    header = ["model", "clean"] + list(matrix.attack_names) + ["mean_unseen"]
    rows = [header]
    for m in matrix.model_names:
        rows.append([m, f"{matrix.clean[m]:.6f}"]
                    + [f"{matrix.cells[(m, a)]:.6f}" for a in matrix.attack_names]
                    + [f"{matrix.mean_unseen[m]:.6f}"])
    return rows


def export_report(out_dir, name, matrix=None, runs=None, stats=None,
                  plots=None, validate=True):
    """Write <name>.csv (when a matrix is given) and <name>.report.json.

    runs: {label: TrainRun summary dict}; stats: {label: attack_stats dict};
    plots: {label: {"x": [...], "y": [...], "x_label": str, "y_label": str}}.
    Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    report = {"version": REPORT_VERSION, "name": name}
    if matrix is not None:
        csv_path = out / f"{name}.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh).writerows(matrix_csv_rows(matrix))
        paths.append(csv_path)
        report["matrix"] = matrix.to_dict()
    if runs is not None:
        report["runs"] = runs
    if stats is not None:
        report["stats"] = stats
    if plots is not None:
        report["plots"] = plots
    report["report_hash"] = config_hash(report)
    if validate:
        validate_report(report)
    json_path = out / f"{name}.report.json"
    json_path.write_text(canonical_json(report) + "\n", encoding="utf-8")
    paths.append(json_path)
    return paths


def validate_report(report):
    import jsonschema
    from importlib import resources
    schema = json.loads((resources.files("gat") / "schemas" /
                         "report.schema.json").read_text())
    jsonschema.validate(report, schema)


def accuracy_vs_iteration_series(trajectory_summary):
    """Seg-attack trajectory summary -> plot-data series."""
    return {"x": [int(r["iteration"]) for r in trajectory_summary],
            "y": [float(r["pixel_accuracy"]) for r in trajectory_summary],
            "x_label": "iteration", "y_label": "pixel_accuracy"}


def acceptance_vs_epoch_series(run_summary):
    rates = run_summary["acceptance_rate"]
    return {"x": list(range(len(rates))),
            "y": [None if v is None else float(v) for v in rates],
            "x_label": "epoch", "y_label": "acceptance_rate"}
