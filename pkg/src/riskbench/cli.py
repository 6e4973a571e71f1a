"""Command-line entry point: one subcommand per pipeline stage, plus ``run`` for all of them.

Every stage writes into ``<out>/run-<config hash>/`` and records a stamp in
``stages/<stage>.json``. A stage refuses to start when an upstream stamp is
missing or was written under a different configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import plots
from .experiment import cross_validate, sample_rows
from .explain import (
    AttributionRun,
    IGConfig,
    aggregate_ranks,
    code_ranking,
    integrated_gradients,
    mean_abs_attribution,
    one_nn_accuracy,
    patient_heatmap,
    pick_heatmap_patient,
    project_embeddings,
)
from .features import REGRESSION_TASKS, TASKS, task_rows, transform_rows, write_features
from .models import TabularRiskModel
from .network import NETWORK_FEATURES, ward_centralities, write_edge_lists
from .pipeline import prepare, task_matrices
from .records import parse_records
from .runconfig import STAGES, RunConfig, atomic_write_text
from .synthgen import GeneratorConfig, generate
from .training.metrics import METRIC_COLUMNS

log = logging.getLogger("riskbench")

UPSTREAM = {
    "generate": (),
    "cohort": ("generate",),
    "network": ("cohort",),
    "featurize": ("network",),
    "train": ("featurize",),
    "explain": ("train",),
    "report": ("train", "explain"),
}


class StageError(RuntimeError):
    pass


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(x):
    return "nan" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


class Run:
    def __init__(self, cfg: RunConfig, out):
        self.cfg = cfg.validate()
        self.dir = cfg.run_dir(out)
        self.hash = cfg.digest()
        self._prepared = None

    # -- bookkeeping -------------------------------------------------------

    def path(self, *parts) -> Path:
        return self.dir.joinpath(*parts)

    def stamp_path(self, stage):
        return self.path("stages", f"{stage}.json")

    def check_upstream(self, stage):
        for up in UPSTREAM[stage]:
            if up == "generate" and self.cfg.input:
                for name in ("episodes.csv", "beddays.csv"):
                    if not (Path(self.cfg.input) / name).exists():
                        raise StageError(f"missing input file {Path(self.cfg.input) / name}")
                continue
            stamp = self.stamp_path(up)
            if not stamp.exists():
                raise StageError(f"missing upstream artifact {stamp} (run `riskbench {up}` first)")
            recorded = json.loads(stamp.read_text()).get("config_hash")
            if recorded != self.hash:
                raise StageError(f"{stamp} was written under config {recorded}, not {self.hash}; refusing to mix")

    def finish(self, stage, outputs):
        atomic_write_text(
            self.stamp_path(stage),
            json.dumps({"stage": stage, "config_hash": self.hash, "outputs": sorted(map(str, outputs))},
                       indent=1, sort_keys=True) + "\n",
        )

    def write_config(self):
        atomic_write_text(self.path("run_config.json"), self.cfg.to_json() + "\n")

    @property
    def data_dir(self) -> Path:
        return Path(self.cfg.input) if self.cfg.input else self.path("data")

    def prepared(self):
        if self._prepared is None:
            episodes, beddays = parse_records(self.data_dir)
            self._prepared = prepare(episodes, beddays, self.cfg.train_fraction, self.cfg.damping)
        return self._prepared

    def model_dir(self, task, model, run_id):
        return self.path("models", task, model, run_id)

    def model_runs(self):
        for task in self.cfg.tasks:
            for model in self.cfg.models:
                for seed in self.cfg.seeds:
                    for fold in range(self.cfg.folds):
                        yield task, model, seed, fold, f"s{seed}-f{fold}"


# ---------------------------------------------------------------------------
# stages


def stage_generate(run: Run):
    if run.cfg.input:
        log.info("using input records from %s; nothing to generate", run.cfg.input)
        run.finish("generate", [])
        return
    paths = generate(GeneratorConfig.from_dict(run.cfg.generator), run.path("data"))
    run.finish("generate", paths.values())


def stage_cohort(run: Run):
    data = run.prepared()
    c = data.cohort
    rows = []
    for le in c.episodes:
        split = "train" if le.episode_id in c.train_ids else "test"
        rows.append([
            le.episode_id, le.patient_id, le.admission_date.isoformat(), split, int(le.readmit_30d),
            int(le.mortality), "" if le.next_los is None else le.next_los, int(le.cpe_positive_ever),
        ])
    path = run.path("cohort", "cohort.csv")
    atomic_write_text(path, _csv_text(
        ["episode_id", "patient_id", "admission_date", "split", "readmit_30d", "mortality", "next_los",
         "cpe_positive_ever"], rows))
    summary = {"n_episodes": len(c.episodes), "n_train": len(c.train_ids), "n_test": len(c.test_ids),
               "split_date": c.split_date.isoformat()}
    atomic_write_text(run.path("cohort", "summary.json"), json.dumps(summary, indent=1, sort_keys=True) + "\n")
    run.finish("cohort", [path])


def stage_network(run: Run):
    data = run.prepared()
    rows = [[eid, *(_num(v) for v in f.as_dict().values())] for eid, f in sorted(data.network.items())]
    feats = run.path("network", "network_features.csv")
    atomic_write_text(feats, _csv_text(["episode_id", *NETWORK_FEATURES], rows))
    g = data.ward_graph
    edges = run.path("network", "ward_graph.csv")
    atomic_write_text(edges, _csv_text(["src", "dst", "weight"], sorted([a, b, w] for (a, b), w in g.weights.items())))
    cent = ward_centralities(g, damping=run.cfg.damping)
    cpath = run.path("network", "ward_centrality.csv")
    atomic_write_text(cpath, _csv_text(
        ["ward_id", "pagerank", "degree_centrality", "closeness_centrality"],
        [[w, _num(c["pagerank"]), _num(c["degree_centrality"]), _num(c["closeness_centrality"])]
         for w, c in sorted(cent.items())]))
    outputs = [feats, edges, cpath]
    if run.cfg.emit_graphs:
        outputs += write_edge_lists(run.path("network", "edges"), data.graphs)
    run.finish("network", outputs)


def stage_featurize(run: Run):
    data = run.prepared()
    outputs = []
    for task in run.cfg.tasks:
        tr, te, _ = task_matrices(data, task)
        d = run.path("features", task)
        write_features(d, tr, name="train")
        write_features(d, te, name="test")
        outputs += [d / "train.csv", d / "test.csv", d / "schema.json"]
    run.finish("featurize", outputs)


def _threads():
    try:
        return max(1, int(os.environ.get("RISKBENCH_THREADS", "1")))
    except ValueError:
        return 1


def stage_train(run: Run):
    data = run.prepared()
    metric_rows, cv_rows, pred_rows = [], [], []
    for task in run.cfg.tasks:
        for model in run.cfg.models:
            for seed in run.cfg.seeds:
                params = dict(run.cfg.model_params, backbone=model, seed=seed)
                log.info("training %s / %s / seed %d", task, model, seed)
                result = cross_validate(data.train_rows, data.test_rows, task, params, k=run.cfg.folds, seed=seed,
                                        n_jobs=min(_threads(), run.cfg.folds))
                for f in result.folds:
                    run_id = f"s{seed}-f{f.fold}"
                    f.model.save(run.model_dir(task, model, run_id))
                    metric_rows.append([task, model, run_id, *(_num(f.test_metrics[k]) for k in METRIC_COLUMNS)])
                    cv_rows.append([task, model, run_id, *(_num(f.val_metrics[k]) for k in METRIC_COLUMNS)])
                    pred_rows += [[e, task, model, run_id, _num(s)] for e, s in zip(f.test_ids, f.test_scores)]
    header = ["task", "model", "fold", *METRIC_COLUMNS]
    paths = [run.path("metrics.csv"), run.path("cv_metrics.csv"), run.path("predictions.csv")]
    atomic_write_text(paths[0], _csv_text(header, metric_rows))
    atomic_write_text(paths[1], _csv_text(header, cv_rows))
    atomic_write_text(paths[2], _csv_text(["episode_id", "task", "model", "fold", "score"], pred_rows))
    run.finish("train", paths)


def _load_model(run, task, model, run_id):
    d = run.model_dir(task, model, run_id)
    if not d.exists():
        raise StageError(f"missing upstream artifact {d}")
    return TabularRiskModel.load(d)


def stage_explain(run: Run):
    data = run.prepared()
    cfg = run.cfg
    attr_rows, agg_rows, code_rows = [], [], []
    summary = {"ig_steps": cfg.ig_steps, "residuals": {}}
    for task in cfg.tasks:
        test = task_rows(data.test_rows, task)
        sample = [test[i] for i in sample_rows(len(test), cfg.ig_samples, 0)]
        runs = []
        for t, model, seed, fold, run_id in run.model_runs():
            if t != task:
                continue
            est = _load_model(run, task, model, run_id)
            X = transform_rows(sample, est.schema_)
            ig = integrated_gradients(est, X, IGConfig(steps=cfg.ig_steps))
            r = AttributionRun(task, model, run_id, ig.feature_names, mean_abs_attribution(ig.attributions))
            runs.append(r)
            for name, score, rank in zip(r.feature_names, r.mean_abs, r.ranks):
                attr_rows.append([task, model, run_id, name, _num(score), int(rank)])
            summary["residuals"][f"{task}/{model}/{run_id}"] = float(ig.relative_residual.max())
            for field, vocab in est.schema_.code_vocabularies.items():
                non_code = [i for i, n in enumerate(ig.feature_names) if n not in est.schema_.code_fields]
                names, scores, ranks = code_ranking(
                    ig.code_attributions[field], vocab,
                    feature_scores=r.mean_abs[non_code] if cfg.joint_code_ranking else None,
                    feature_names=[ig.feature_names[i] for i in non_code] if cfg.joint_code_ranking else None,
                )
                code_rows += [[task, model, run_id, field, n, _num(s), int(k)] for n, s, k in zip(names, scores, ranks)]
        report = aggregate_ranks(runs)
        for i in report.order():
            agg_rows.append([task, report.feature_names[i], _num(report.median_rank[i]),
                             _num(report.iqr_lo[i]), _num(report.iqr_hi[i])])
    paths = [run.path("attributions.csv"), run.path("agg_ranks.csv"), run.path("code_ranks.csv")]
    atomic_write_text(paths[0], _csv_text(["task", "model", "fold", "feature", "mean_abs_attr", "rank"], attr_rows))
    atomic_write_text(paths[1], _csv_text(["task", "feature", "median_rank", "iqr_lo", "iqr_hi"], agg_rows))
    atomic_write_text(paths[2], _csv_text(
        ["task", "model", "fold", "code_field", "name", "mean_abs_attr", "rank"], code_rows))
    first = f"s{cfg.seeds[0]}-f0"
    if "readmit30" in cfg.tasks:
        paths += _emit_heatmap(run, data, cfg.models[0], first)
    if "cpe" in cfg.tasks:
        model = "tabtransformer" if "tabtransformer" in cfg.models else cfg.models[0]
        extra, acc = _emit_projection(run, data, model, first)
        paths += extra
        summary["tsne_1nn_accuracy"] = acc
    spath = run.path("explain", "summary.json")
    atomic_write_text(spath, json.dumps(summary, indent=1, sort_keys=True) + "\n")
    run.finish("explain", paths + [spath])


def _emit_heatmap(run, data, model, run_id):
    est = _load_model(run, "readmit30", model, run_id)
    rows = data.train_rows + data.test_rows
    X = transform_rows(rows, est.schema_)
    patient = pick_heatmap_patient(X)
    hm = patient_heatmap(est, X, patient, steps=run.cfg.ig_steps)
    csv_path = run.path("explain", "heatmap.csv")
    svg_path = run.path("explain", "heatmap.svg")
    atomic_write_text(csv_path, hm.to_csv())
    cols = [f"t{j}" for j in range(len(hm.episode_ids))]
    atomic_write_text(svg_path, plots.heatmap(hm.groups, cols, hm.values, title=f"IG by ICD chapter, patient {patient}"))
    return [csv_path, svg_path]


def projection_sample(y, max_per_class, seed=0):
    """All positives (capped) plus an equal-sized random sample of negatives."""
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(y == 1)
    neg = np.flatnonzero(y == 0)
    if pos.size > max_per_class:
        pos = np.sort(rng.choice(pos, size=max_per_class, replace=False))
    neg = np.sort(rng.choice(neg, size=min(pos.size, neg.size), replace=False))
    return np.concatenate([pos, neg])


def _emit_projection(run, data, model, run_id):
    est = _load_model(run, "cpe", model, run_id)
    rows = task_rows(data.train_rows, "cpe")
    X = transform_rows(rows, est.schema_)
    idx = projection_sample(X.target, run.cfg.tsne_max_per_class)
    Xs = X.take(idx)
    perplexity = min(run.cfg.tsne_perplexity, (len(idx) - 1) / 3.0 - 1e-9)
    coords, kl, _ = project_embeddings(est.transform(Xs), perplexity=perplexity, n_iter=run.cfg.tsne_iters, seed=0)
    acc = one_nn_accuracy(coords, Xs.target)
    csv_path = run.path("explain", "tsne_coords.csv")
    svg_path = run.path("explain", "tsne.svg")
    atomic_write_text(csv_path, _csv_text(
        ["episode_id", "x", "y", "cpe_positive"],
        [[e, _num(a), _num(b), int(t)] for e, (a, b), t in zip(Xs.episode_ids, coords, Xs.target)]))
    atomic_write_text(svg_path, plots.scatter(coords, Xs.target.astype(int), title=f"t-SNE (KL {kl:.3f})",
                                              label_names={0: "negative", 1: "CPE positive"}))
    return [csv_path, svg_path], acc


def _read_csv(path):
    if not Path(path).exists():
        raise StageError(f"missing upstream artifact {path}")
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _cell(values):
    vals = np.array([float(v) for v in values])
    vals = vals[np.isfinite(vals)]
    return f"{vals.mean():.3f} ({vals.std():.3f})" if vals.size else "nan"


def stage_report(run: Run):
    metrics = _read_csv(run.path("metrics.csv"))
    cfg = run.cfg
    outputs = []
    outcome_tasks = [t for t in cfg.tasks if t != "cpe"]
    if outcome_tasks:
        header = ["model"] + [f"{t} {'rmse' if t in REGRESSION_TASKS else 'auroc'}" for t in outcome_tasks]
        rows = []
        for m in cfg.models:
            row = [m]
            for t in outcome_tasks:
                key = "rmse" if t in REGRESSION_TASKS else "auroc"
                row.append(_cell(r[key] for r in metrics if r["task"] == t and r["model"] == m))
            rows.append(row)
        p = run.path("report", "table_outcomes.csv")
        atomic_write_text(p, _csv_text(header, rows))
        outputs.append(p)
    if "cpe" in cfg.tasks:
        keys = ("auroc", "auprc", "sensitivity", "specificity")
        rows = [[m, *(_cell(r[k] for r in metrics if r["task"] == "cpe" and r["model"] == m) for k in keys)]
                for m in cfg.models]
        p = run.path("report", "table_cpe.csv")
        atomic_write_text(p, _csv_text(["model", *keys], rows))
        outputs.append(p)
    attributions = _read_csv(run.path("attributions.csv"))
    for task in cfg.tasks:
        rows = [r for r in attributions if r["task"] == task]
        runs = sorted({(r["model"], r["fold"]) for r in rows})
        names = sorted({r["feature"] for r in rows})
        lookup = {(r["model"], r["fold"], r["feature"]): int(r["rank"]) for r in rows}
        matrix = np.array([[lookup[(m, f, n)] for n in names] for m, f in runs])
        p = run.path("report", f"ranks_{task}.svg")
        atomic_write_text(p, plots.rank_boxplot(names, matrix, title=f"IG feature ranks: {task}"))
        outputs.append(p)
    run.finish("report", outputs)


STAGE_FUNCS = {
    "generate": stage_generate,
    "cohort": stage_cohort,
    "network": stage_network,
    "featurize": stage_featurize,
    "train": stage_train,
    "explain": stage_explain,
    "report": stage_report,
}


def run_stage(run: Run, stage):
    run.check_upstream(stage)
    run.dir.mkdir(parents=True, exist_ok=True)
    run.write_config()
    with threadpool_limits(limits=1):
        STAGE_FUNCS[stage](run)


def run_all(cfg: RunConfig, out) -> Run:
    run = Run(cfg, out)
    for stage in STAGES:
        log.info("stage %s", stage)
        run_stage(run, stage)
    return run


# ---------------------------------------------------------------------------
# argument handling


def _split(value, cast=str):
    return [cast(v) for v in value.split(",") if v]


def build_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.input:
        cfg.input = str(Path(args.input).resolve())
    if args.task:
        cfg.tasks = _split(args.task)
    if args.model:
        cfg.models = _split(args.model)
    if args.seed:
        cfg.seeds = _split(args.seed, int)
        cfg.generator["seed"] = cfg.seeds[0]
    if args.folds:
        cfg.folds = args.folds
    if args.ig_steps:
        cfg.ig_steps = args.ig_steps
    if args.emit_graphs:
        cfg.emit_graphs = True
    return cfg.validate()


def make_parser():
    parser = argparse.ArgumentParser(prog="riskbench", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "run"):
        p = sub.add_parser(name, help="all stages in order" if name == "run" else f"{name} stage")
        p.add_argument("--input", help="directory with episodes.csv and beddays.csv (skips generation)")
        p.add_argument("--out", default="runs", help="base output directory (default: runs)")
        p.add_argument("--task", help=f"comma-separated tasks from {','.join(TASKS)}")
        p.add_argument("--model", help="comma-separated models from resnet,tabtransformer,tabnet")
        p.add_argument("--seed", help="comma-separated seeds; the first also seeds the generator")
        p.add_argument("--folds", type=int, help="cross-validation folds")
        p.add_argument("--ig-steps", type=int, help="Riemann steps for Integrated Gradients")
        p.add_argument("--emit-graphs", action="store_true", help="write daily contact edge lists")
        p.add_argument("--config", help="run_config.json to start from")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        cfg = build_config(args)
        if args.command == "run":
            run = run_all(cfg, args.out)
        else:
            run = Run(cfg, args.out)
            run_stage(run, args.command)
    except (StageError, FileNotFoundError, ValueError) as exc:
        print(f"riskbench: error: {exc}", file=sys.stderr)
        return 2
    print(run.dir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
