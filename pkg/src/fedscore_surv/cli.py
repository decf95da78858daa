"""Command-line interface: each pipeline stage reads and writes files in a run directory.

Stages and the artifacts they produce (relative to the run directory):

gen-data       data/site{j}_{train,test}.csv, site_summary.csv, km_site{j}.csv,
               km_curves.svg, heterogeneity.json
rank           ranking_site{j}.csv, global_ranking.csv, collinearity.csv
cutoffs        cutoffs.csv
parsimony      parsimony.csv, parsimony.svg
select         selection.json, parsimony.svg
fit-federated  scoring_table.csv/.txt, cutoffs_final.csv, coefficients.csv,
               transcript.bin, transcript.json
fit-local      local/site{j}/{parsimony.csv,parsimony.svg,selection.json,
               cutoffs_final.csv,coefficients.csv,scoring_table.csv,scoring_table.txt}
score          scores/site{j}.csv, local/site{j}/scores.csv
evaluate       auc_t_site{j}.csv, auc_t_site{j}.svg, local/site{j}/auc_t.csv,
               evaluation.csv
run-all        all of the above

Every stage records its outputs, with SHA-256 digests, in manifest.json.
"""
from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import json
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import plots
from .config import RunConfig, build_config
from .dataio import ingest_csv, write_dataset_csv
from .errors import MissingArtifactError
from .evaluation import ParsimonyCurve, parsimony_curve, select_model
from .federation import SiteHandle, evaluate_site_scores, generate_sites, make_handles
from .odach import encode_transcript, transcript_to_json
from .pipeline import build_model, build_scheme, rank_variables, run_pipeline, site_weights
from .ranking import VariableRanking, multicollinearity_screen
from .scoring import ScoringTable
from .survival import kaplan_meier, logrank_test
from .transform import CutoffScheme, column_name

log = logging.getLogger("fedscore_surv")

MANIFEST = "manifest.json"
STAGES = ("gen-data", "rank", "cutoffs", "parsimony", "select", "fit-federated", "fit-local",
          "score", "evaluate")


class Run:
    """A run directory plus the effective configuration."""

    def __init__(self, root, config: RunConfig):
        self.root = Path(root)
        self.config = config
        self.root.mkdir(parents=True, exist_ok=True)
        self._written: list[str] = []

    def path(self, rel: str) -> Path:
        p = self.root / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def require(self, rel: str, stage: str) -> Path:
        p = self.root / rel
        if not p.exists():
            raise MissingArtifactError(rel, stage)
        return p

    def wrote(self, rel: str) -> None:
        if rel not in self._written:
            self._written.append(rel)

    def write_text(self, rel: str, text: str) -> None:
        with open(self.path(rel), "w", newline="\n") as fh:
            fh.write(text)
        self.wrote(rel)

    def write_json(self, rel: str, obj) -> None:
        self.write_text(rel, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def commit(self, stage: str) -> None:
        """Merge this stage's outputs into the manifest."""
        mp = self.root / MANIFEST
        manifest = json.loads(mp.read_text()) if mp.exists() else {}
        stages = manifest.get("stages", {})
        stages[stage] = sorted(self._written)
        artifacts = {}
        for rel in sorted({r for rs in stages.values() for r in rs}):
            p = self.root / rel
            if p.exists():
                artifacts[rel] = hashlib.sha256(p.read_bytes()).hexdigest()
        manifest = {"seed": self.config.seed, "config": self.config.to_dict(),
                    "stages": {k: stages[k] for k in sorted(stages)}, "artifacts": artifacts}
        mp.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        self._written = []

    # loading helpers -------------------------------------------------------

    def handles(self) -> list[SiteHandle]:
        files = sorted(glob.glob(str(self.root / "data" / "site*_train.csv")))
        if not files:
            raise MissingArtifactError("data/site{j}_train.csv", "gen-data")
        out = []
        for f in files:
            sid = int(re.search(r"site(\d+)_train\.csv$", f).group(1))
            test = self.require(f"data/site{sid}_test.csv", "gen-data")
            out.append(SiteHandle(sid, ingest_csv(f, site_id=sid), ingest_csv(test, site_id=sid)))
        out.sort(key=lambda h: h.site_id)
        w = site_weights([h.train for h in out], self.config.pipeline).weights
        for h, wj in zip(out, w):
            h.weight = float(wj)
        return out


def _csv(run: Run, rel: str, header, rows) -> None:
    with open(run.path(rel), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    run.wrote(rel)


def _r(x) -> str:
    return "" if x is None or not np.isfinite(x) else repr(float(x))


# stages ---------------------------------------------------------------------

def stage_gen_data(run: Run, data_files=None, categorical=()) -> None:
    cfg = run.config
    if data_files:
        datasets = [ingest_csv(f, site_id=j + 1, categorical=categorical)
                    for j, f in enumerate(data_files)]
    else:
        datasets = generate_sites(cfg.generator)
    handles = make_handles(datasets, cfg.test_fraction, cfg.seed)
    for old in glob.glob(str(run.root / "data" / "site*_*.csv")):
        os.remove(old)
    rows = []
    for h in handles:
        write_dataset_csv(h.train, run.path(f"data/site{h.site_id}_train.csv"))
        write_dataset_csv(h.test, run.path(f"data/site{h.site_id}_test.csv"))
        run.wrote(f"data/site{h.site_id}_train.csv")
        run.wrote(f"data/site{h.site_id}_test.csv")
        rows.append([h.site_id, h.train.n, h.test.n, h.train.n_events, h.test.n_events,
                     _r(h.weight)] + [_r(float(np.mean(np.concatenate([h.train.column(v),
                                                                        h.test.column(v)]))))
                                      for v in h.train.variable_names])
    _csv(run, "site_summary.csv", ["site", "n_train", "n_test", "events_train", "events_test",
                                   "weight"] + [f"mean_{v}" for v in handles[0].train.variable_names],
         rows)
    full = [(np.concatenate([h.train.time, h.test.time]),
             np.concatenate([h.train.event, h.test.event])) for h in handles]
    curves = []
    for h, te in zip(handles, full):
        km = kaplan_meier(te)
        km.to_csv(run.path(f"km_site{h.site_id}.csv"))
        run.wrote(f"km_site{h.site_id}.csv")
        curves.append((f"site {h.site_id}", km, float(te[0].max())))
    run.write_text("km_curves.svg", plots.km_svg(curves))
    if len(handles) > 1:
        lr = logrank_test(full)
        het = {"chi_square": lr["chi_square"], "df": lr["df"], "p_value": lr["p_value"],
               "observed": np.asarray(lr["observed"]).tolist(),
               "expected": np.asarray(lr["expected"]).tolist()}
    else:
        het = {"note": "single site; no heterogeneity test"}
    run.write_json("heterogeneity.json", het)


def stage_rank(run: Run) -> None:
    handles = run.handles()
    trains = [h.train for h in handles]
    cfg = run.config.pipeline
    weights = site_weights(trains, cfg)
    local, global_ranks = rank_variables(trains, cfg, weights)
    for r in local:
        r.to_csv(run.path(f"ranking_site{r.site_id}.csv"))
        run.wrote(f"ranking_site{r.site_id}.csv")
    names = local[0].variables
    q = np.array([[dict(zip(r.variables, r.ranks))[v] for v in names] for r in local], float)
    wsum = weights.weights @ q
    _csv(run, "global_ranking.csv", ["variable", "weighted_rank", "global_rank"],
         [[v, repr(float(s)), int(g)] for v, s, g in zip(names, wsum, global_ranks)])
    rows = []
    if len(names) >= 2:
        for d in trains:
            rep = multicollinearity_screen(d, cfg.collinearity_threshold)
            rows += [[d.site_id, a, b, repr(r)] for a, b, r in rep.pairs]
            rows += [[d.site_id, v, "", "degenerate"] for v in rep.degenerate]
    _csv(run, "collinearity.csv", ["site", "variable_a", "variable_b", "r"], rows)


def _global_ranks(run: Run):
    p = run.require("global_ranking.csv", "rank")
    with open(p, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [r["variable"] for r in rows], np.array([int(r["global_rank"]) for r in rows])


def stage_cutoffs(run: Run) -> None:
    handles = run.handles()
    trains = [h.train for h in handles]
    cfg = run.config.pipeline
    scheme = build_scheme(trains, trains[0].variable_names, site_weights(trains, cfg), cfg)
    scheme.to_csv(run.path("cutoffs.csv"))
    run.wrote("cutoffs.csv")


def _parsimony_outputs(run: Run, prefix: str, curve: ParsimonyCurve, selected=None) -> None:
    curve.to_csv(run.path(prefix + "parsimony.csv"))
    run.wrote(prefix + "parsimony.csv")
    labels = [vs[-1] for vs in curve.variables]
    run.write_text(prefix + "parsimony.svg", plots.parsimony_svg(curve.psi, labels, selected))


def stage_parsimony(run: Run) -> None:
    handles = run.handles()
    trains = [h.train for h in handles]
    cfg = run.config.pipeline
    names, ranks = _global_ranks(run)
    curve = parsimony_curve(ranks, trains, site_weights(trains, cfg), cfg.cv_folds, cfg, names)
    _parsimony_outputs(run, "", curve)


def _selection(curve: ParsimonyCurve, cfg) -> dict:
    d, chosen = select_model(curve, cfg.D, cfg.delta)
    return {"d": d, "variables": list(chosen), "D": cfg.D, "delta": cfg.delta}


def stage_select(run: Run) -> None:
    curve = ParsimonyCurve.from_csv(run.require("parsimony.csv", "parsimony"))
    sel = _selection(curve, run.config.pipeline)
    run.write_json("selection.json", sel)
    _parsimony_outputs(run, "", curve, sel["d"])


def _model_outputs(run: Run, prefix: str, model, n_train: int) -> None:
    model.table.to_csv(run.path(prefix + "scoring_table.csv"))
    run.wrote(prefix + "scoring_table.csv")
    run.write_text(prefix + "scoring_table.txt", model.table.to_text())
    model.scheme.to_csv(run.path(prefix + "cutoffs_final.csv"))
    run.wrote(prefix + "cutoffs_final.csv")
    fit = model.fit
    cov = getattr(fit, "covariance_final", None)
    if cov is None:
        cov = fit.sampling_covariance(n_train)
    se = np.sqrt(np.diag(cov))
    _csv(run, prefix + "coefficients.csv", ["column", "beta", "se"],
         [[column_name(v, c), repr(float(b)), _r(s)]
          for (v, c), b, s in zip(model.columns, model.beta, se)])


def stage_fit_federated(run: Run) -> None:
    handles = run.handles()
    trains = [h.train for h in handles]
    cfg = run.config.pipeline.with_(method="odach")
    sel = json.loads(run.require("selection.json", "select").read_text())
    scheme = CutoffScheme.from_csv(run.require("cutoffs.csv", "cutoffs"))
    model = build_model(trains, sel["variables"], cfg, scheme=scheme)
    _model_outputs(run, "", model, sum(d.n for d in trains))
    transcript = model.fit.transcript
    with open(run.path("transcript.bin"), "wb") as fh:
        fh.write(encode_transcript(transcript))
    run.wrote("transcript.bin")
    run.write_text("transcript.json", transcript_to_json(transcript))


def stage_fit_local(run: Run, sites=None) -> None:
    handles = run.handles()
    cfg = run.config.pipeline.with_(method="local", weights=None)
    for h in handles:
        if sites and h.site_id not in sites:
            continue
        ranking = VariableRanking.from_csv(
            run.require(f"ranking_site{h.site_id}.csv", "rank"), site_id=h.site_id)
        res = run_pipeline([h.train], cfg, local_rankings=[ranking])
        prefix = f"local/site{h.site_id}/"
        _parsimony_outputs(run, prefix, res.parsimony, len(res.selected))
        run.write_json(prefix + "selection.json", _selection(res.parsimony, cfg))
        _model_outputs(run, prefix, res.model, h.train.n)


def _load_table(run: Run, prefix: str, stage: str) -> ScoringTable:
    scheme = CutoffScheme.from_csv(run.require(prefix + "cutoffs_final.csv", stage))
    return ScoringTable.from_csv(run.require(prefix + "scoring_table.csv", stage), scheme,
                                 run.config.pipeline.s_max)


def _write_scores(run: Run, rel: str, table: ScoringTable, data) -> None:
    s = table.score_dataset(data)
    _csv(run, rel, ["row", "time", "event", "score"],
         [[i + 1, repr(float(t)), int(e), int(v)]
          for i, (t, e, v) in enumerate(zip(data.time, data.event, s))])


def _has_local(run: Run, site_id: int) -> bool:
    return (run.root / f"local/site{site_id}/scoring_table.csv").exists()


def stage_score(run: Run) -> None:
    handles = run.handles()
    fed = _load_table(run, "", "fit-federated")
    for h in handles:
        _write_scores(run, f"scores/site{h.site_id}.csv", fed, h.test)
        if _has_local(run, h.site_id):
            loc = _load_table(run, f"local/site{h.site_id}/", "fit-local")
            _write_scores(run, f"local/site{h.site_id}/scores.csv", loc, h.test)


def _read_scores(run: Run, rel: str, stage: str) -> np.ndarray:
    with open(run.require(rel, stage), newline="") as fh:
        return np.array([float(r["score"]) for r in csv.DictReader(fh)])


def stage_evaluate(run: Run) -> None:
    handles = run.handles()
    cfg = run.config.pipeline
    rows = []
    for h in handles:
        fed = evaluate_site_scores(_read_scores(run, f"scores/site{h.site_id}.csv", "score"),
                                   h, cfg)
        fed.to_csv(run.path(f"auc_t_site{h.site_id}.csv"))
        run.wrote(f"auc_t_site{h.site_id}.csv")
        curves = [("federated", fed.times, fed.auc, fed.ci_low, fed.ci_high)]
        row = {"site": h.site_id, "n_test": h.test.n, "events_test": h.test.n_events,
               "federated_iauc": fed.iauc, "federated_ci_low": fed.iauc_ci[0],
               "federated_ci_high": fed.iauc_ci[1]}
        local_rel = f"local/site{h.site_id}/scores.csv"
        if (run.root / local_rel).exists():
            loc = evaluate_site_scores(_read_scores(run, local_rel, "score"), h, cfg)
            loc.to_csv(run.path(f"local/site{h.site_id}/auc_t.csv"))
            run.wrote(f"local/site{h.site_id}/auc_t.csv")
            curves.append(("local", loc.times, loc.auc, loc.ci_low, loc.ci_high))
            both = np.isfinite(fed.ci_high - fed.ci_low) & np.isfinite(loc.ci_high - loc.ci_low)
            row.update({"local_iauc": loc.iauc, "local_ci_low": loc.iauc_ci[0],
                        "local_ci_high": loc.iauc_ci[1],
                        "federated_mean_ci_width": fed.mean_ci_width(both),
                        "local_mean_ci_width": loc.mean_ci_width(both)})
        run.write_text(f"auc_t_site{h.site_id}.svg",
                       plots.auc_curves_svg(curves, f"AUC(t), site {h.site_id} test set"))
        rows.append(row)
    cols = ["site", "n_test", "events_test", "federated_iauc", "federated_ci_low",
            "federated_ci_high", "local_iauc", "local_ci_low", "local_ci_high",
            "federated_mean_ci_width", "local_mean_ci_width"]
    _csv(run, "evaluation.csv", cols,
         [[r["site"], r["n_test"], r["events_test"]] + [_r(r.get(c)) for c in cols[3:]]
          for r in rows])


def run_all(run: Run, data_files=None, categorical=()) -> None:
    steps = [("gen-data", lambda: stage_gen_data(run, data_files, categorical)),
             ("rank", lambda: stage_rank(run)), ("cutoffs", lambda: stage_cutoffs(run)),
             ("parsimony", lambda: stage_parsimony(run)), ("select", lambda: stage_select(run)),
             ("fit-federated", lambda: stage_fit_federated(run)),
             ("fit-local", lambda: stage_fit_local(run)), ("score", lambda: stage_score(run)),
             ("evaluate", lambda: stage_evaluate(run))]
    for name, fn in steps:
        log.info("stage %s", name)
        fn()
        run.commit(name)


# argument handling ------------------------------------------------------------

def _csv_list(conv):
    def parse(s):
        return [conv(x) for x in s.split(",") if x.strip()]
    return parse


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-dir", default="run", help="directory holding all artifacts")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("-v", "--verbose", action="store_true")
    g = p.add_argument_group("pipeline overrides")
    g.add_argument("--weights", help="'sample-size' or comma-separated site weights")
    g.add_argument("--percentiles", help="comma-separated cutoff percentiles")
    g.add_argument("--s-max", type=int, dest="s_max")
    g.add_argument("--D", type=int, dest="D", help="maximum number of variables")
    g.add_argument("--delta", type=float)
    g.add_argument("--cv-folds", type=int, dest="cv_folds")
    g.add_argument("--n-bootstrap", type=int, dest="n_bootstrap")
    g.add_argument("--n-trees", type=int, dest="n_trees")
    g.add_argument("--merge-epsilon", dest="merge_epsilon",
                   help="merge neighbouring categories closer than this ('none' to disable)")
    g.add_argument("--min-category-events", type=int, dest="min_category_events")
    g.add_argument("--iauc-weighting", choices=("event", "uniform"), dest="iauc_weighting")
    g = p.add_argument_group("generator overrides")
    g.add_argument("--sites", dest="gen_n", help="comma-separated site sizes")
    g.add_argument("--censoring", dest="gen_censoring",
                   help="target censored fraction (one value or one per site)")
    g.add_argument("--test-fraction", type=float, dest="test_fraction")


_PIPE_FLAGS = ("weights", "percentiles", "s_max", "D", "delta", "cv_folds", "n_bootstrap",
               "n_trees", "merge_epsilon", "min_category_events", "iauc_weighting")


def _overrides(args) -> dict:
    out = {f"pipeline.{k}": getattr(args, k) for k in _PIPE_FLAGS}
    out["run.seed"] = args.seed
    out["run.test_fraction"] = args.test_fraction
    out["generator.n"] = args.gen_n
    out["generator.censoring"] = args.gen_censoring
    return {k: v for k, v in out.items() if v is not None}


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedscore-surv",
        description="Federated integer survival scores from multi-site data.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen-data": "generate (or ingest) site data and split it 40:60 test:train",
        "rank": "per-site forest importance and the weighted global ranking",
        "cutoffs": "unified category cutoffs for every variable",
        "parsimony": "cross-validated Psi_m as variables are added by rank",
        "select": "pick the model size from the parsimony curve",
        "fit-federated": "fit the selected model across sites and derive the score",
        "fit-local": "the single-site pipeline at each site",
        "score": "apply the scoring tables to the test sets",
        "evaluate": "AUC(t), iAUC and bootstrap intervals per site",
        "run-all": "every stage in order",
    }
    for name, h in helps.items():
        p = sub.add_parser(name, help=h, description=h)
        _add_common(p)
        if name in ("gen-data", "run-all"):
            p.add_argument("--data", nargs="+", metavar="CSV",
                           help="ingest these site files (site ids 1..K) instead of generating")
            p.add_argument("--categorical", type=_csv_list(str), default=[],
                           help="variables to treat as categorical when a file has no #kinds line")
        if name == "fit-local":
            p.add_argument("--site", type=_csv_list(int), help="only these site ids")
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = build_config(args.config, _overrides(args))
        run = Run(args.run_dir, config)
        cmd = args.command
        if cmd == "run-all":
            run_all(run, args.data, args.categorical)
        else:
            fn = {
                "gen-data": lambda: stage_gen_data(run, args.data, args.categorical),
                "rank": lambda: stage_rank(run), "cutoffs": lambda: stage_cutoffs(run),
                "parsimony": lambda: stage_parsimony(run), "select": lambda: stage_select(run),
                "fit-federated": lambda: stage_fit_federated(run),
                "fit-local": lambda: stage_fit_local(run, args.site),
                "score": lambda: stage_score(run), "evaluate": lambda: stage_evaluate(run),
            }[cmd]
            fn()
            run.commit(cmd)
    except Exception as exc:  # noqa: BLE001 - reported as JSON below
        report = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        if isinstance(exc, MissingArtifactError):
            report["required_stage"] = exc.stage
            report["path"] = exc.path
        if args.verbose:
            log.exception("command failed")
        print(json.dumps(report, sort_keys=True), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
