"""Command-line entry point.

Every subcommand reads an optional JSON config, applies targeted flag
overrides, runs one pipeline stage, and writes its outputs plus a manifest
(fully resolved config, seed, code hash) under the out directory.  Exit
codes: 0 success, 1 config/validation error, 2 runtime failure.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .attacks import latent, pixel, seg
from .config import apply_overrides, load_config, section, validate_config
from .data import (SynthSpec, load_dataset, ood_spec, save_dataset,
                   synth_dataset, synth_ood_dataset)
from .data.pretrain import (pretrain_classifier, pretrain_generator,
                            pretrain_segmenter, pretrain_spade)
from .errors import ConfigError, GatError
from .inversion import InversionConfig, reconstruction_experiment
from .manifest import resolve_out_dir, write_manifest
from .models import (SHAPE_NAMES, generator_family, load_model,
                     one_hot_layout, save_model, z_from_params)
from .rng import stream
from .training import (TrainConfig, adversarial_train, seg_adversarial_train)


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit(2); usage errors are 1
        raise ConfigError(message)


def _build_parser():
    p = _Parser(prog="gat", description="Latent-space adversarial "
                "attack/training toolkit")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads; 1 guarantees bit-reproducibility")
    sub = p.add_subparsers(dest="command", required=True)
    names = ("datagen", "pretrain-gan", "pretrain-clf", "pretrain-seg",
             "attack", "invert", "seg-attack", "advtrain", "eval-matrix",
             "ood-eval", "report")
    for name in names:
        sp = sub.add_parser(name)
        sp.add_argument("--config", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out-dir", default=None)
        sp.add_argument("--max-iters", type=int, default=None)
        sp.add_argument("--epsilon", type=float, default=None)
        sp.add_argument("--delta", type=float, default=None)
        sp.add_argument("--layers", default=None, metavar="LO:HI")
        sp.add_argument("--mode", choices=("style", "noise", "both"),
                        default=None)
        sp.add_argument("--target", type=int, default=None)
    return p


def _resolve(args):
    doc = load_config(args.config) if args.config else {}
    overrides = {
        "seed": args.seed,
        "out_dir": args.out_dir,
        "attack.max_iters": args.max_iters,
        "attack.epsilon": args.epsilon,
        "attack.delta": args.delta,
        "attack.variables": args.mode,
        "attack.target": args.target,
    }
    if args.layers is not None:
        overrides["attack.style_layers"] = args.layers
        overrides["attack.noise_layers"] = args.layers
    if args.target is not None:
        overrides["attack.mode"] = "targeted"
    doc = apply_overrides(doc, overrides)
    out_dir = resolve_out_dir(args.out_dir, doc.get("out_dir"))
    return doc, out_dir


def _seed(doc, default=0):
    return int(doc.get("seed", default))


def _synth_spec(doc):
    data = section(doc, "data")
    fields = {k: data[k] for k in
              ("num_classes", "image_size", "hue_center", "hue_half",
               "texture", "seed") if k in data}
    fields.setdefault("seed", _seed(doc))
    return SynthSpec(**fields), data


def _attack_config(doc):
    a = section(doc, "attack")
    kwargs = {}
    for key in ("mode", "target", "variables", "epsilon", "delta",
                "max_iters", "seed"):
        if key in a:
            kwargs[key] = a[key]
    for key in ("style_layers", "noise_layers"):
        if key in a:
            kwargs[key] = latent.LayerGroup.parse(a[key])
    kwargs.setdefault("seed", _seed(doc))
    return latent.AttackConfig(**kwargs), a


def _train_config(doc):
    t = section(doc, "train")
    fields = {f.name for f in dataclasses.fields(TrainConfig)}
    kwargs = {k: v for k, v in t.items() if k in fields}
    kwargs.setdefault("seed", _seed(doc))
    return TrainConfig(**kwargs), t


def _generators(doc):
    spec, _ = _synth_spec(doc)
    return generator_family(spec.num_classes, spec.hue_center, spec.hue_half,
                            spec.texture)


def _load_clf(doc):
    models = section(doc, "models")
    if "classifier" not in models:
        raise ConfigError("config needs models/classifier checkpoint path")
    model, _ = load_model(models["classifier"])
    return model


# -- subcommands -------------------------------------------------------------

def cmd_datagen(doc, out_dir):
    spec, data = _synth_spec(doc)
    n_train = int(data.get("n_train", 1024))
    n_test = int(data.get("n_test", 512))
    train = synth_dataset(spec, n_train)
    test = synth_dataset(dataclasses.replace(spec, seed=spec.seed + 1), n_test)
    ood = synth_ood_dataset(dataclasses.replace(spec, seed=spec.seed + 2),
                            n_test)
    paths = {}
    for name, ds in (("train", train), ("test", test), ("ood", ood)):
        path = Path(out_dir) / f"{name}.gatd"
        save_dataset(path, ds)
        paths[name] = str(path)
    payload = {"command": "datagen", "config": doc, "outputs": paths,
               "spec": spec.to_dict(),
               "sizes": {"train": n_train, "test": n_test, "ood": n_test}}
    write_manifest(out_dir, "datagen", payload)
    return 0


def cmd_pretrain_clf(doc, out_dir):
    spec, data = _synth_spec(doc)
    train = load_dataset(data["train_path"]) if "train_path" in data \
        else synth_dataset(spec, int(data.get("n_train", 1024)))
    test = load_dataset(data["test_path"]) if "test_path" in data \
        else synth_dataset(dataclasses.replace(spec, seed=spec.seed + 1),
                           int(data.get("n_test", 512)))
    tcfg, _ = _train_config(doc)
    tcfg = dataclasses.replace(tcfg, ratio="1:0")
    model, run = pretrain_classifier(
        train, test, epochs=tcfg.epochs, seed=tcfg.seed, lr=tcfg.lr,
        momentum=tcfg.momentum, batch_size=tcfg.batch_size)
    ckpt = Path(out_dir) / "classifier.ckpt"
    save_model(ckpt, model, meta={"stage": "pretrain-clf"})
    run.checkpoint_path = str(ckpt)
    write_manifest(out_dir, "pretrain-clf",
                   {"command": "pretrain-clf", "config": doc,
                    "run": run.summary(), "checkpoint": str(ckpt)})
    return 0


def cmd_pretrain_seg(doc, out_dir):
    spec, data = _synth_spec(doc)
    train = load_dataset(data["train_path"]) if "train_path" in data \
        else synth_dataset(spec, int(data.get("n_train", 1024)))
    test = load_dataset(data["test_path"]) if "test_path" in data \
        else synth_dataset(dataclasses.replace(spec, seed=spec.seed + 1),
                           int(data.get("n_test", 256)))
    tcfg, _ = _train_config(doc)
    spade, curve = pretrain_spade(train, seed=tcfg.seed)
    seg_model, run = pretrain_segmenter(train, test, epochs=tcfg.epochs,
                                        seed=tcfg.seed, lr=tcfg.lr,
                                        momentum=tcfg.momentum,
                                        batch_size=tcfg.batch_size)
    spade_path = Path(out_dir) / "spade.ckpt"
    seg_path = Path(out_dir) / "segmenter.ckpt"
    save_model(spade_path, spade, meta={"stage": "pretrain-seg"})
    save_model(seg_path, seg_model, meta={"stage": "pretrain-seg"})
    run.checkpoint_path = str(seg_path)
    write_manifest(out_dir, "pretrain-seg",
                   {"command": "pretrain-seg", "config": doc,
                    "run": run.summary(),
                    "spade_final_mse": curve[-1],
                    "checkpoints": {"spade": str(spade_path),
                                    "segmenter": str(seg_path)}})
    return 0


def cmd_pretrain_gan(doc, out_dir):
    spec, data = _synth_spec(doc)
    train = load_dataset(data["train_path"]) if "train_path" in data \
        else synth_dataset(spec, int(data.get("n_train", 1024)))
    classifier = _load_clf(doc)
    seed = _seed(doc)
    outputs, gates = {}, {}
    for c in range(spec.num_classes):
        gen, curves = pretrain_generator(c, train, classifier, seed=seed)
        path = Path(out_dir) / f"generator_c{c}.ckpt"
        save_model(path, gen, meta={"stage": "pretrain-gan", "class": c})
        outputs[str(c)] = str(path)
        gates[str(c)] = {
            "disc_holdout_accuracy": curves["disc_holdout_accuracy"],
            "class_consistency": curves["class_consistency"],
            "final_loss_g": curves["loss_g"][-1],
            "final_loss_d": curves["loss_d"][-1]}
    write_manifest(out_dir, "pretrain-gan",
                   {"command": "pretrain-gan", "config": doc,
                    "checkpoints": outputs, "gates": gates})
    return 0


def cmd_attack(doc, out_dir):
    cfg, a = _attack_config(doc)
    classifier = _load_clf(doc)
    gens = _generators(doc)
    n = int(a.get("n", 100))
    per_class = max(1, n // len(gens))
    outcomes = []
    for c, gen in enumerate(gens):
        seeds = [(cfg.seed, "attack", c, i) for i in range(per_class)]
        outcomes += latent.batch_attack(seeds, cfg, classifier, gen)
    stats = latent.attack_stats(outcomes)
    jsonl = Path(out_dir) / "attack_outcomes.jsonl"
    latent.export_outcomes(jsonl, outcomes, cfg)
    write_manifest(out_dir, "attack",
                   {"command": "attack", "config": doc,
                    "attack_config": cfg.to_dict(), "stats": stats,
                    "outcomes_path": str(jsonl)})
    return 0


def cmd_invert(doc, out_dir):
    inv = section(doc, "invert")
    fields = {f.name for f in dataclasses.fields(InversionConfig)}
    cfg = InversionConfig(**{k: v for k, v in inv.items() if k in fields})
    trials = int(inv.get("trials", 50))
    classifier = _load_clf(doc)
    gens = _generators(doc)
    gen = gens[int(inv.get("seed", _seed(doc))) % len(gens)]
    results, rate = reconstruction_experiment(gen, classifier, trials=trials,
                                              config=cfg, seed=_seed(doc))
    write_manifest(out_dir, "invert",
                   {"command": "invert", "config": doc,
                    "inversion_config": cfg.to_dict(),
                    "success_rate": rate,
                    "rmse": [round(r.rmse, 6) for r in results]})
    return 0


def cmd_seg_attack(doc, out_dir):
    a = section(doc, "attack")
    models = section(doc, "models")
    for key in ("segmenter", "spade"):
        if key not in models:
            raise ConfigError(f"config needs models/{key} checkpoint path")
    segmenter, _ = load_model(models["segmenter"])
    spade, _ = load_model(models["spade"])
    cfg = seg.SegAttackConfig(
        step=a.get("step", 0.001),
        iterations=a.get("iterations", 10),
        variables=a.get("seg_variables", "both"),
        record_every=a.get("record_every", 1), seed=_seed(doc))
    spec, data = _synth_spec(doc)
    ds = load_dataset(data["test_path"]) if "test_path" in data \
        else synth_dataset(spec, int(data.get("n_test", 128)))
    n_layouts = min(int(a.get("layouts", 20)), ds.n)
    rows = stream(_seed(doc), "layouts").permutation(ds.n)[:n_layouts]
    zs = z_from_params(ds.params)
    summaries = []
    for r in rows:
        layout = one_hot_layout(ds.label_maps[r:r + 1], ds.num_seg_classes)
        traj = seg.run_seg_attack(layout, ds.label_maps[r:r + 1], zs[r:r + 1],
                                  cfg, segmenter, spade)
        summaries.append(seg.trajectory_summary(traj))
    first = [s[0]["pixel_accuracy"] for s in summaries]
    last = [s[-1]["pixel_accuracy"] for s in summaries]
    payload = {"command": "seg-attack", "config": doc,
               "attack_config": cfg.to_dict(),
               "layouts": int(n_layouts),
               "mean_initial_accuracy": float(np.mean(first)),
               "mean_final_accuracy": float(np.mean(last)),
               "trajectories": summaries}
    write_manifest(out_dir, "seg-attack", payload)
    return 0


def cmd_advtrain(doc, out_dir):
    tcfg, t = _train_config(doc)
    spec, data = _synth_spec(doc)
    train = load_dataset(data["train_path"]) if "train_path" in data \
        else synth_dataset(spec, int(data.get("n_train", 1024)))
    test = load_dataset(data["test_path"]) if "test_path" in data \
        else synth_dataset(dataclasses.replace(spec, seed=spec.seed + 1),
                           int(data.get("n_test", 512)))
    task = t.get("task", "classification")
    if task == "segmentation":
        models = section(doc, "models")
        if "spade" not in models:
            raise ConfigError("segmentation advtrain needs models/spade")
        spade, _ = load_model(models["spade"])
        if "init_from" in t:
            model, _ = load_model(t["init_from"])
        else:
            from .models import Segmenter
            model = Segmenter(num_seg_classes=train.num_seg_classes,
                              seed=tcfg.seed)
        run = seg_adversarial_train(model, train, tcfg, spade,
                                    test_dataset=test)
        name = "segmenter_advtrained.ckpt"
    else:
        if "init_from" in t:
            model, _ = load_model(t["init_from"])
        else:
            from .models import Classifier
            model = Classifier(num_classes=spec.num_classes,
                               image_size=spec.image_size, seed=tcfg.seed)
        gens = _generators(doc) if tcfg.parts()[1] > 0 and \
            tcfg.attack == "gat" else None
        run = adversarial_train(model, train, tcfg, generators=gens,
                                test_dataset=test)
        name = "classifier_advtrained.ckpt"
    ckpt = Path(out_dir) / name
    save_model(ckpt, model, meta={"stage": "advtrain",
                                  "attack": tcfg.attack})
    run.checkpoint_path = str(ckpt)
    write_manifest(out_dir, "advtrain",
                   {"command": "advtrain", "config": doc,
                    "run": run.summary(), "checkpoint": str(ckpt)})
    return 0


def cmd_eval_matrix(doc, out_dir):
    ev = section(doc, "eval")
    models_cfg = section(doc, "models")
    spec, data = _synth_spec(doc)
    test = load_dataset(data["test_path"]) if "test_path" in data \
        else synth_dataset(dataclasses.replace(spec, seed=spec.seed + 1),
                           int(data.get("n_test", 512)))
    gens = _generators(doc)
    models = {}
    if "classifier" in models_cfg:
        clf, _ = load_model(models_cfg["classifier"])
        models["original"] = (clf, None)
    for name, entry in models_cfg.get("defended", {}).items():
        clf, _ = load_model(entry["checkpoint"])
        models[name] = (clf, entry.get("trained_against"))
    if not models:
        raise ConfigError("eval-matrix needs at least one model")
    attack_names = ev.get("attacks", ["gat", "pgd", "spatial", "recolor"])
    lat_cfg, _ = _attack_config(doc)
    attacks = {}
    for a in attack_names:
        if a == "gat":
            attacks[a] = dataclasses.replace(lat_cfg, variables="both")
        else:
            attacks[a] = pixel.PixelAttackConfig(kind=a, seed=_seed(doc))
    sink_path = Path(out_dir) / "matrix_cells.jsonl"
    with open(sink_path, "w", encoding="utf-8") as fh:
        def sink(m, a, records):
            for r in records:
                fh.write(json.dumps({"model": m, "attack": a, **r},
                                    sort_keys=True) + "\n")
        matrix = evaluation.robustness_matrix(
            models, attacks, test, gens,
            n_per_cell=int(ev.get("n_per_cell", 500)),
            seed=int(ev.get("seed", _seed(doc))), record_sink=sink)
    evaluation.export_report(out_dir, "matrix", matrix=matrix)
    write_manifest(out_dir, "eval-matrix",
                   {"command": "eval-matrix", "config": doc,
                    "matrix": matrix.to_dict(),
                    "cells_path": str(sink_path)})
    return 0


def cmd_ood_eval(doc, out_dir):
    spec, data = _synth_spec(doc)
    test = load_dataset(data["test_path"]) if "test_path" in data \
        else synth_dataset(dataclasses.replace(spec, seed=spec.seed + 1),
                           int(data.get("n_test", 512)))
    ood = load_dataset(data["ood_path"]) if "ood_path" in data \
        else synth_ood_dataset(dataclasses.replace(spec, seed=spec.seed + 2),
                               int(data.get("n_test", 512)))
    results = {}
    classifier = _load_clf(doc)
    results["original"] = evaluation.ood_eval(classifier, test, ood)
    for name, entry in section(doc, "models").get("defended", {}).items():
        clf, _ = load_model(entry["checkpoint"])
        results[name] = evaluation.ood_eval(clf, test, ood)
    write_manifest(out_dir, "ood-eval",
                   {"command": "ood-eval", "config": doc,
                    "results": {k: {"in_domain": v[0], "ood": v[1]}
                                for k, v in results.items()}})
    return 0


def cmd_report(doc, out_dir):
    """Bundle every manifest under out_dir into one validated report."""
    out = Path(out_dir)
    runs, stats, plots = {}, {}, {}
    matrix_payload = None
    for path in sorted(out.glob("*.manifest.json")):
        payload = json.loads(path.read_text(encoding="utf-8"))
        name = payload.get("command", path.stem)
        if name == "report":
            continue
        if "run" in payload:
            runs[name] = payload["run"]
            series = evaluation.acceptance_vs_epoch_series(payload["run"])
            if any(v is not None for v in series["y"]):
                plots[f"{name}-acceptance"] = series
        if "stats" in payload:
            stats[name] = payload["stats"]
        if "matrix" in payload:
            matrix_payload = payload["matrix"]
        if "trajectories" in payload:
            mean_by_iter = {}
            for summary in payload["trajectories"]:
                for rec in summary:
                    mean_by_iter.setdefault(rec["iteration"], []).append(
                        rec["pixel_accuracy"])
            plots[f"{name}-accuracy"] = {
                "x": sorted(mean_by_iter),
                "y": [float(np.mean(mean_by_iter[i]))
                      for i in sorted(mean_by_iter)],
                "x_label": "iteration", "y_label": "pixel_accuracy"}
    report = {"version": evaluation.REPORT_VERSION, "name": "report"}
    if matrix_payload is not None:
        report["matrix"] = matrix_payload
    if runs:
        report["runs"] = runs
    if stats:
        report["stats"] = stats
    if plots:
        report["plots"] = plots
    from .manifest import config_hash, canonical_json
    report["report_hash"] = config_hash(report)
    evaluation.validate_report(report)
    path = out / "report.report.json"
    path.write_text(canonical_json(report) + "\n", encoding="utf-8")
    write_manifest(out_dir, "report",
                   {"command": "report", "config": doc, "report": str(path)})
    return 0


_COMMANDS = {
    "datagen": cmd_datagen,
    "pretrain-gan": cmd_pretrain_gan,
    "pretrain-clf": cmd_pretrain_clf,
    "pretrain-seg": cmd_pretrain_seg,
    "attack": cmd_attack,
    "invert": cmd_invert,
    "seg-attack": cmd_seg_attack,
    "advtrain": cmd_advtrain,
    "eval-matrix": cmd_eval_matrix,
    "ood-eval": cmd_ood_eval,
    "report": cmd_report,
}


def main(argv=None):
    try:
        args = _build_parser().parse_args(argv)
        doc, out_dir = _resolve(args)
        return _COMMANDS[args.command](doc, out_dir)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except GatError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
