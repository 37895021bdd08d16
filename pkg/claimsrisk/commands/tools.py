"""
Pipeline commands: one function per CLI subcommand, each returning a JSON-able summary
"""
import json
import logging
import shutil
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from claimsrisk.commands.artifacts import (
    MODEL,
    RunContext,
    load_model,
    read_csv,
    read_json,
    read_predictions,
    save_model,
    sha256_json,
)
from claimsrisk.data.cohort import (
    Cohort,
    describe_by_outcome,
    impute_reference_incidence,
    load_cohort,
    load_incidence_series,
    write_cohort,
)
from claimsrisk.data.models import FeatureConfig, GeneratorSpec, ModelArtifact
from claimsrisk.data.taxonomy import Taxonomy, load_taxonomy, write_taxonomy
from claimsrisk.errors import ArtifactError, ClaimsRiskError, FeatureError
from claimsrisk.model import aggregate, metrics, riskindex
from claimsrisk.model.cv import CvResult, cv_select_lambda, make_folds, refit_selected
from claimsrisk.model.featurize import (
    FeatureSpace,
    SparseDesignMatrix,
    apply_space,
    build_design,
    column_prevalence,
    save_design,
)
from claimsrisk.model.solver import fit_path, lambda_grid, lambda_max, predict_logit
from claimsrisk.settings import settings
from claimsrisk.synth.generator import (
    generate_cohort,
    generate_incidence_series,
    generate_taxonomy,
)

logger = logging.getLogger(__name__)


# Command input
class CommandInput(BaseModel):
    """Options shared by all commands; each command reads the ones it needs"""
    command: str = ""
    argv: List[str] = Field(default_factory=list)
    taxonomy: Optional[str] = Field(None, description="Taxonomy TSV")
    cohort: Optional[str] = Field(None, description="Cohort JSONL")
    incidence: Optional[str] = Field(None, description="Incidence series CSV (region,date,incidence)")
    outcome: str = Field(default_factory=lambda: settings.outcome, pattern="^y[123]$")
    config: Optional[str] = Field(None, description="Feature config JSON")
    configs: List[str] = Field(default_factory=list, description="Feature configs to benchmark")
    seed: int = Field(default_factory=lambda: settings.seed)
    folds: int = Field(default_factory=lambda: settings.folds, ge=2)
    lambda_grid: Optional[str] = Field(None, description="N, N:ratio or a comma list")
    lam: Optional[float] = Field(None, ge=0)
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)
    out_dir: str = Field(default_factory=lambda: settings.out_dir)
    verbose: bool = False
    # Command-specific
    model: Optional[str] = None
    predictions: Optional[str] = None
    target_prevalence: Optional[float] = Field(None, gt=0, lt=1)
    external: List[str] = Field(default_factory=list, description="name=path files with id,logit")
    outcomes: List[str] = Field(default_factory=list)
    cancel: List[str] = Field(default_factory=list, description="Column or categorical feature names")
    condition: List[str] = Field(default_factory=list, description="feature=category profile covariates")
    age_feature: str = "age_group"
    gender_feature: str = "gender"
    exclude: Optional[str] = Field(None, description="File with one person id per line")
    runs: List[str] = Field(default_factory=list, description="name=run directory")
    generator: Optional[str] = Field(None, description="Generator spec JSON")
    n_persons: Optional[int] = Field(None, ge=1)
    wave_seed: Optional[int] = None
    full_scale: bool = False
    drop_excluded_ops: bool = False
    min_group_size: int = Field(0, ge=0)
    bins: int = Field(20, ge=1)
    top_fraction: float = Field(0.05, gt=0, le=1)
    bits: bool = False


@dataclass
class Prepared:
    taxonomy: Taxonomy
    cohort: Cohort
    config: FeatureConfig
    space: FeatureSpace
    design: SparseDesignMatrix


# Helpers
def _require(opts: CommandInput, *names: str) -> None:
    missing = [n for n in names if getattr(opts, n) in (None, [], "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ArtifactError(f"{opts.command} needs {flags}")


def _context(opts: CommandInput) -> RunContext:
    return RunContext(opts.command, Path(opts.out_dir) / opts.command, opts.argv)


def load_config(path: Optional[str]) -> FeatureConfig:
    """Feature config from JSON, or the default config"""
    if path is None:
        return FeatureConfig()
    with open(path, "r", encoding="utf-8") as f:
        return FeatureConfig.model_validate_json(f.read())


def parse_lambda_grid(text: Optional[str]) -> Tuple[Optional[List[float]], int, float]:
    """
    Grid flag: 'N', 'N:ratio' or an explicit comma-separated list.

    Returns (explicit values or None, n, ratio).
    """
    if not text:
        return None, 50, 1e-4
    if "," in text:
        values = sorted((float(v) for v in text.split(",") if v.strip()), reverse=True)
        return values, len(values), 0.0
    if ":" in text:
        n, ratio = text.split(":", 1)
        return None, int(n), float(ratio)
    return None, int(text), 1e-4


def _load_cohort(opts: CommandInput, ctx: RunContext, config: FeatureConfig, path: Optional[str] = None) -> Cohort:
    path = path or opts.cohort
    ctx.record_input(path)
    cohort = load_cohort(path, config.defaults)
    if opts.incidence:
        ctx.record_input(opts.incidence)
        cohort = impute_reference_incidence(
            cohort, load_incidence_series(opts.incidence), opts.seed, opts.outcome
        )
    return cohort


def _load_taxonomy(opts: CommandInput, ctx: RunContext) -> Taxonomy:
    ctx.record_input(opts.taxonomy)
    return load_taxonomy(opts.taxonomy, drop_excluded_ops=opts.drop_excluded_ops)


def _prepare(opts: CommandInput, ctx: RunContext, config_path: Optional[str] = None) -> Prepared:
    _require(opts, "taxonomy", "cohort")
    config = load_config(config_path or opts.config)
    if config_path or opts.config:
        ctx.record_input(config_path or opts.config)
    ctx.record_config(config)
    with ctx.timed("load"):
        taxonomy = _load_taxonomy(opts, ctx)
        cohort = _load_cohort(opts, ctx, config)
    with ctx.timed(f"featurize:{config.name}"):
        space, design = build_design(cohort, taxonomy, config)
    return Prepared(taxonomy, cohort, config, space, design)


def _lambdas(opts: CommandInput, design, y, penalty_factors) -> np.ndarray:
    explicit, n, ratio = parse_lambda_grid(opts.lambda_grid)
    if explicit is not None:
        return np.asarray(explicit)
    return lambda_grid(lambda_max(design, y, penalty_factors), n, ratio)


def _trace(opts: CommandInput, ctx: RunContext) -> Optional[Callable[[dict], None]]:
    if not opts.verbose:
        return None
    target = ctx.path("convergence.jsonl")
    target.write_text("", encoding="utf-8")

    def append(entry: dict) -> None:
        with open(target, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    return append


def _cross_validate(opts: CommandInput, ctx: RunContext, prepared: Prepared, outcome: str) -> CvResult:
    y = prepared.cohort.outcome(outcome)
    pf = prepared.space.penalty_factors
    with ctx.timed(f"cv:{prepared.config.name}:{outcome}"):
        lambdas = _lambdas(opts, prepared.design, y, pf)
        folds = make_folds(y, opts.folds, opts.seed)
        result = cv_select_lambda(prepared.design, y, pf, lambdas, folds, n_jobs=opts.threads)
    ctx.manifest.selected_lambda = result.selected_lambda
    return result


def _cancel_columns(space: FeatureSpace, names: Sequence[str]) -> List[str]:
    """Expand categorical feature names to their dummies; column names pass through"""
    columns = []
    for name in names:
        dummies = space.columns_for_feature(name)
        columns.extend(dummies if dummies else [name])
    return columns


def _columns_frame(space: FeatureSpace, prevalence: np.ndarray) -> pd.DataFrame:
    frame = pd.DataFrame([c.model_dump(mode="json") for c in space.columns])
    frame["prevalence"] = prevalence
    return frame


def _index_frame(cohort: Cohort, index: riskindex.RiskIndex) -> pd.DataFrame:
    return pd.DataFrame({
        "id": cohort.ids,
        "fold": index.folds.fold_of,
        "score_logit": index.scores,
    })


# Commands
def validate_taxonomy(opts: CommandInput) -> Dict:
    """Validate a taxonomy file and report node counts per level"""
    _require(opts, "taxonomy")
    ctx = _context(opts)
    taxonomy = _load_taxonomy(opts, ctx)
    counts = {f"{s.value}:{level}": n for (s, level), n in taxonomy.level_counts().items()}
    ctx.write_json("levels.json", counts)
    ctx.finish()
    return {"message": f"Taxonomy valid: {len(taxonomy)} nodes", "nodes": len(taxonomy), "levels": counts}


def simulate(opts: CommandInput) -> Dict:
    """Write a synthetic taxonomy, cohort, truth sidecar and incidence series"""
    ctx = _context(opts)
    overrides = {"seed": opts.seed}
    if opts.n_persons is not None:
        overrides["n_persons"] = opts.n_persons
    if opts.generator:
        ctx.record_input(opts.generator)
        base = read_json(opts.generator)
        base.update(overrides)
        spec = GeneratorSpec.full_scale(**base) if opts.full_scale else GeneratorSpec(**base)
    else:
        spec = GeneratorSpec.full_scale(**overrides) if opts.full_scale else GeneratorSpec(**overrides)
    ctx.manifest.seed = spec.seed
    ctx.manifest.config_digest = sha256_json(spec)
    ctx.write_json("generator.json", spec)

    with ctx.timed("taxonomy"):
        taxonomy = generate_taxonomy(spec, spec.seed)
        write_taxonomy(taxonomy, ctx.path("taxonomy.tsv"))
    with ctx.timed("cohort"):
        cohort, truth = generate_cohort(taxonomy, spec, spec.seed, n_jobs=opts.threads)
        write_cohort(cohort, ctx.path("cohort.jsonl"))
        ctx.write_csv("truth.csv", truth)
    ctx.write_csv("incidence.csv", generate_incidence_series(spec, spec.seed))
    summary = {
        "message": f"Simulated {len(cohort)} persons",
        "persons": len(cohort),
        "nodes": len(taxonomy),
        "outcomes": {o: int(cohort.outcome(o).sum()) for o in ("y1", "y2", "y3")},
    }
    if opts.wave_seed is not None:
        with ctx.timed("wave"):
            wave, wave_truth = generate_cohort(taxonomy, spec, opts.wave_seed, n_jobs=opts.threads)
            write_cohort(wave, ctx.path("wave_cohort.jsonl"))
            ctx.write_csv("wave_truth.csv", wave_truth)
        summary["wave_outcomes"] = {o: int(wave.outcome(o).sum()) for o in ("y1", "y2", "y3")}
    ctx.finish()
    return summary


def featurize(opts: CommandInput) -> Dict:
    """Build the design matrix and write it as a cache with its column table"""
    ctx = _context(opts)
    prepared = _prepare(opts, ctx)
    save_design(ctx.path("design.npz"), prepared.space, prepared.design)
    prevalence = column_prevalence(prepared.design, prepared.space)
    ctx.write_csv("columns.csv", _columns_frame(prepared.space, prevalence))
    ctx.finish()
    return {
        "message": f"Built {prepared.design.n_rows} x {len(prepared.space)} design",
        "rows": prepared.design.n_rows,
        "columns": len(prepared.space),
        "stored_entries": int(prepared.design.binary.nnz),
    }


def _cv_frame(result) -> pd.DataFrame:
    """Long table: one row per lambda and fold, then a 'mean' row per lambda"""
    rows = []
    for i, lam in enumerate(result.lambdas):
        for fold in range(result.folds.k):
            rows.append({"lambda": lam, "fold": str(fold), "auc": result.per_fold_auc[fold, i]})
        rows.append({"lambda": lam, "fold": "mean", "auc": result.mean_auc[i]})
    return pd.DataFrame(rows, columns=["lambda", "fold", "auc"])


def cv_fit(opts: CommandInput) -> Dict:
    """Cross-validate the lambda path, refit on all data and export the effects"""
    ctx = _context(opts)
    prepared = _prepare(opts, ctx)
    ctx.manifest.seed = opts.seed
    y = prepared.cohort.outcome(opts.outcome)
    result = _cross_validate(opts, ctx, prepared, opts.outcome)

    ctx.write_csv("cv.csv", _cv_frame(result))
    ctx.write_csv("oof.csv", pd.DataFrame({
        "id": prepared.cohort.ids,
        "fold": result.folds.fold_of,
        "logit": result.oof_logit,
        "y": y.astype(int),
    }))

    with ctx.timed("refit"):
        fit = refit_selected(
            prepared.design, y, prepared.space.penalty_factors, result, trace=_trace(opts, ctx)
        )
    save_model(ModelArtifact(
        outcome=opts.outcome,
        config=prepared.config,
        columns=list(prepared.space.columns),
        fit=fit,
        selected_index=result.selected_index,
    ), ctx.path(MODEL))
    ctx.outputs.append(MODEL)
    effects = aggregate.export_coefficients(
        fit, prepared.space, prepared.taxonomy, prepared.design, opts.min_group_size
    )
    ctx.write_csv("effects.csv", effects)
    report = metrics.evaluate(result.oof_logit, y, bits=opts.bits)
    ctx.write_json("evaluation.json", report)
    ctx.finish()
    return {
        "message": f"Selected lambda {result.selected_lambda:.6g}",
        "selected_lambda": result.selected_lambda,
        "selected_index": result.selected_index,
        "mean_auc": float(result.mean_auc[result.selected_index]),
        "nonzero": fit.n_nonzero,
        "evaluation": report.model_dump(),
    }


def fit(opts: CommandInput) -> Dict:
    """Full-data lambda path; stores the fit at --lam or the last grid value"""
    ctx = _context(opts)
    prepared = _prepare(opts, ctx)
    y = prepared.cohort.outcome(opts.outcome)
    pf = prepared.space.penalty_factors
    lambdas = _lambdas(opts, prepared.design, y, pf)
    if opts.lam is not None:
        lambdas = np.append(lambdas[lambdas > opts.lam], opts.lam)
    with ctx.timed("path"):
        path = fit_path(prepared.design, y, pf, lambdas, trace=_trace(opts, ctx))
    ctx.write_csv("path.csv", pd.DataFrame({
        "lambda": path.lambdas,
        "n_nonzero": [f.n_nonzero for f in path.fits],
        "objective": [f.objective for f in path.fits],
        "max_kkt": [f.max_kkt for f in path.fits],
        "converged": [f.converged for f in path.fits],
    }))
    final = path.fits[-1]
    ctx.manifest.selected_lambda = final.lam
    save_model(ModelArtifact(
        outcome=opts.outcome, config=prepared.config, columns=list(prepared.space.columns), fit=final,
    ), ctx.path(MODEL))
    ctx.outputs.append(MODEL)
    ctx.finish()
    return {
        "message": f"Fitted {len(path.fits)} lambdas",
        "lambda": final.lam,
        "nonzero": final.n_nonzero,
        "converged": all(f.converged for f in path.fits),
    }


def _score(opts: CommandInput, ctx: RunContext, artifact: ModelArtifact, cohort_path: Optional[str] = None):
    ctx.record_input(opts.model)
    taxonomy = _load_taxonomy(opts, ctx)
    cohort = _load_cohort(opts, ctx, artifact.config, cohort_path)
    if opts.exclude:
        ctx.record_input(opts.exclude)
        excluded = [line.strip() for line in Path(opts.exclude).read_text(encoding="utf-8").splitlines() if line.strip()]
        cohort = cohort.without(excluded)
        logger.info("Excluded %d listed ids, %d persons remain", len(excluded), len(cohort))
    space = FeatureSpace(artifact.columns)
    design = apply_space(cohort, taxonomy, space, artifact.config)
    return cohort, taxonomy, space, design, predict_logit(artifact.fit, design)


def predict(opts: CommandInput) -> Dict:
    """Score a cohort with a frozen model"""
    _require(opts, "model", "taxonomy", "cohort")
    ctx = _context(opts)
    artifact = load_model(opts.model)
    cohort, _, _, _, logits = _score(opts, ctx, artifact)
    ctx.write_csv("predictions.csv", pd.DataFrame({"id": cohort.ids, "logit": logits}))
    ctx.finish()
    return {"message": f"Scored {len(cohort)} persons", "persons": len(cohort)}


def evaluate_predictions(opts: CommandInput) -> Dict:
    """AUC, expected weight of evidence and log-likelihood of a prediction file"""
    _require(opts, "predictions", "cohort")
    ctx = _context(opts)
    config = load_config(opts.config)
    ctx.record_input(opts.predictions)
    cohort = _load_cohort(opts, ctx, config)
    logits = read_predictions(opts.predictions, cohort.ids)
    report = metrics.evaluate(
        logits, cohort.outcome(opts.outcome), prior=opts.target_prevalence, bits=opts.bits
    )
    ctx.write_json("evaluation.json", report)
    ctx.finish()
    return report.model_dump()


def aggregate_effects(opts: CommandInput) -> Dict:
    """Effects, group ranking and nonzero summary of a frozen model on its training cohort"""
    _require(opts, "model", "taxonomy", "cohort")
    ctx = _context(opts)
    artifact = load_model(opts.model)
    _, taxonomy, space, design, _ = _score(opts, ctx, artifact)
    effects = aggregate.export_coefficients(artifact.fit, space, taxonomy, design, opts.min_group_size)
    groups = aggregate.group_summaries(artifact.fit, space, taxonomy, design)
    ctx.write_csv("effects.csv", effects)
    ctx.write_csv("groups.csv", aggregate.groups_frame(groups))
    ctx.write_csv("top_factors.csv", aggregate.top_risk_factors(effects, opts.min_group_size))
    summary = {
        "intercept": artifact.fit.intercept,
        "lambda": artifact.fit.lam,
        "nonzero": aggregate.nonzero_summary(artifact.fit, space),
        "groups": len(groups),
    }
    ctx.write_json("aggregate.json", summary)
    ctx.finish()
    return {"message": f"Exported {len(effects)} effects and {len(groups)} groups", **summary}


def _risk_index(opts: CommandInput, ctx: RunContext, cancel: Sequence[str], if_present: Sequence[str] = ()):
    prepared = _prepare(opts, ctx)
    ctx.manifest.seed = opts.seed
    result = _cross_validate(opts, ctx, prepared, opts.outcome)
    # Features the config does not encode have nothing to cancel
    present = [name for name in if_present if prepared.space.columns_for_feature(name)]
    columns = _cancel_columns(prepared.space, [*cancel, *present])
    index = riskindex.build_risk_index(result, prepared.design, prepared.space, columns)
    ctx.write_csv("index.csv", _index_frame(prepared.cohort, index))
    return prepared, index


def risk_index(opts: CommandInput) -> Dict:
    """Cross-fitted risk index with cancelled columns, score histogram and top scorers"""
    ctx = _context(opts)
    prepared, index = _risk_index(opts, ctx, opts.cancel)
    cohort = prepared.cohort
    labels = [r.categorical.get(opts.age_feature, "all") for r in cohort]
    ctx.write_csv("histogram.csv", riskindex.score_distribution(index.scores, labels, opts.bins))
    condition = None
    if opts.condition:
        pairs = [c.split("=", 1) for c in opts.condition]
        condition = [any(r.categorical.get(f) == v for f, v in pairs) for r in cohort]
    top = riskindex.top_scorer_share(index.scores, condition, opts.top_fraction)
    ctx.write_json("top_scorers.json", top)
    ctx.finish()
    return {
        "message": f"Risk index over {len(cohort)} persons",
        "cancelled": sorted(index.cancelled),
        "lambda": index.lam,
        "top_scorers": top,
    }


def profile(opts: CommandInput) -> Dict:
    """Age profiles per gender with and without the age/gender-free risk index"""
    ctx = _context(opts)
    prepared, index = _risk_index(opts, ctx, opts.cancel, [opts.age_feature, opts.gender_feature])
    covariates: Dict[str, List[str]] = {}
    for item in opts.condition:
        feature, category = item.split("=", 1)
        covariates.setdefault(feature, []).append(category)
    with ctx.timed("profile"):
        profiles = riskindex.fit_conditional_profile(
            prepared.cohort, index, opts.outcome, opts.age_feature, opts.gender_feature,
            covariates=covariates, n_jobs=opts.threads,
        )
    ctx.write_csv("profile.csv", riskindex.profile_table(profiles))
    ctx.write_json("profiles.json", {
        g: {"conditional": p.conditional.model_dump(), "unconditional": p.unconditional.model_dump()}
        for g, p in profiles.items()
    })
    ctx.finish()
    return {
        "message": f"Fitted profiles for {len(profiles)} gender(s)",
        "index_coef": {g: p.conditional.index_coef for g, p in profiles.items()},
    }


def benchmark(opts: CommandInput) -> Dict:
    """
    Out-of-fold comparison of feature configs and external predictions.

    All logits are shifted to the observed prevalence before the metrics.
    """
    _require(opts, "taxonomy", "cohort")
    ctx = _context(opts)
    ctx.manifest.seed = opts.seed
    outcomes = opts.outcomes or [opts.outcome]
    config_paths = opts.configs or ([opts.config] if opts.config else [None])
    rows = []
    cohort = None
    for path in config_paths:
        try:
            prepared = _prepare(opts, ctx, path)
        except ClaimsRiskError as e:
            raise FeatureError(f"config '{path}': {e}") from e
        cohort = prepared.cohort
        for outcome in outcomes:
            y = cohort.outcome(outcome)
            try:
                result = _cross_validate(opts, ctx, prepared, outcome)
            except ClaimsRiskError as e:
                raise FeatureError(f"config '{prepared.config.name}', outcome {outcome}: {e}") from e
            ctx.write_csv(
                f"oof_{prepared.config.name}_{outcome}.csv",
                pd.DataFrame({"id": cohort.ids, "logit": result.oof_logit, "y": y.astype(int)}),
            )
            report = metrics.evaluate(result.oof_logit, y, bits=opts.bits)
            rows.append({
                "model": prepared.config.name, "outcome": outcome,
                "auc": report.auc, "lambda_woe": report.lambda_woe, "log_lik": report.log_lik,
                "n": report.n, "n_pos": report.n_pos, "selected_lambda": result.selected_lambda,
            })

    for item in opts.external:
        name, path = item.split("=", 1)
        ctx.record_input(path)
        logits = read_predictions(path, cohort.ids)
        for outcome in outcomes:
            report = metrics.evaluate(logits, cohort.outcome(outcome), bits=opts.bits)
            rows.append({
                "model": name, "outcome": outcome,
                "auc": report.auc, "lambda_woe": report.lambda_woe, "log_lik": report.log_lik,
                "n": report.n, "n_pos": report.n_pos, "selected_lambda": None,
            })

    table = pd.DataFrame(rows)
    best = table.groupby("outcome")["log_lik"].transform("max")
    table["loglik_diff_vs_best"] = best - table["log_lik"]
    ctx.write_csv("benchmark.csv", table)
    ctx.manifest.selected_lambda = None
    ctx.finish()
    return {"message": f"Benchmarked {len(table)} model/outcome pairs", "rows": table.to_dict(orient="records")}


def holdout_eval(opts: CommandInput) -> Dict:
    """Frozen full-data model scored on a later cohort, metrics at its prevalence"""
    _require(opts, "model", "taxonomy", "cohort")
    ctx = _context(opts)
    artifact = load_model(opts.model)
    cohort, _, _, _, logits = _score(opts, ctx, artifact)
    report = metrics.evaluate(logits, cohort.outcome(opts.outcome), bits=opts.bits)
    ctx.write_csv("holdout_predictions.csv", pd.DataFrame({"id": cohort.ids, "logit": logits}))
    ctx.write_json("evaluation.json", report)
    ctx.finish()
    return report.model_dump()


def report(opts: CommandInput) -> Dict:
    """
    Plot data from finished runs: ROC curves, logOR scatter across runs,
    and copies of profile and histogram tables.
    """
    _require(opts, "runs")
    ctx = _context(opts)
    runs: List[Tuple[str, Path]] = []
    for item in opts.runs:
        if "=" not in item:
            raise ArtifactError(f"run '{item}' must be given as name=directory")
        name, directory = item.split("=", 1)
        if not Path(directory).is_dir():
            raise ArtifactError(f"missing run directory {directory}")
        runs.append((name, Path(directory)))

    aucs = {}
    effects = []
    for name, directory in runs:
        sources = [(name, directory / "oof.csv")] + [
            (f"{name}_{path.stem[len('oof_'):]}", path) for path in sorted(directory.glob("oof_*.csv"))
        ]
        for label, oof in sources:
            if not oof.exists():
                continue
            frame = read_csv(oof, ["logit"])
            if "y" not in frame.columns:
                logger.warning("Skipping %s: no outcome column for a ROC curve", oof)
                continue
            points = metrics.roc_curve(frame["logit"].to_numpy(), frame["y"].to_numpy())
            ctx.write_csv(f"roc_{label}.csv", pd.DataFrame(points, columns=["threshold", "fpr", "tpr"]))
            aucs[label] = metrics.roc_area(points)
        if (directory / "effects.csv").exists():
            frame = read_csv(directory / "effects.csv", ["system", "code", "total_logor"])
            codes = frame[frame["system"].notna()][["system", "code", "total_logor"]]
            effects.append(codes.rename(columns={"total_logor": f"logor_{name}"}))
        for table in ("profile.csv", "histogram.csv", "index.csv"):
            if (directory / table).exists():
                target = ctx.path(f"{Path(table).stem}_{name}.csv")
                shutil.copyfile(directory / table, target)
                ctx.outputs.append(target.name)
        reportable = ("oof.csv", "effects.csv", "profile.csv", "histogram.csv", "index.csv")
        if not any((directory / t).exists() for t in reportable) and not any(directory.glob("oof_*.csv")):
            raise ArtifactError(f"run directory {directory} holds no reportable artifact")

    if len(effects) >= 2:
        scatter = effects[0]
        for frame in effects[1:]:
            scatter = scatter.merge(frame, on=["system", "code"], how="inner")
        ctx.write_csv("scatter.csv", scatter.sort_values(["system", "code"]).reset_index(drop=True))
    ctx.finish()
    return {"message": f"Report over {len(runs)} run(s)", "outputs": ctx.outputs, "roc_auc": aucs}


def describe(opts: CommandInput) -> Dict:
    """Descriptive statistics by outcome group"""
    _require(opts, "taxonomy", "cohort")
    ctx = _context(opts)
    config = load_config(opts.config)
    taxonomy = _load_taxonomy(opts, ctx)
    cohort = _load_cohort(opts, ctx, config)
    table = describe_by_outcome(cohort, taxonomy, opts.age_feature, opts.gender_feature)
    target = ctx.path("describe.csv")
    table.to_csv(target, index_label="statistic", float_format="%.10g", lineterminator="\n")
    ctx.outputs.append(target.name)
    ctx.finish()
    return {"message": f"Described {len(cohort)} persons", "groups": table.loc["N"].to_dict()}


# All commands by subcommand name
ALL_COMMANDS: Dict[str, Callable[[CommandInput], Dict]] = {
    "validate-taxonomy": validate_taxonomy,
    "simulate": simulate,
    "featurize": featurize,
    "cv-fit": cv_fit,
    "fit": fit,
    "predict": predict,
    "metrics": evaluate_predictions,
    "aggregate": aggregate_effects,
    "risk-index": risk_index,
    "profile": profile,
    "benchmark": benchmark,
    "holdout-eval": holdout_eval,
    "report": report,
    "describe": describe,
}


def run_command(name: str, opts: CommandInput) -> Dict:
    if name not in ALL_COMMANDS:
        raise ArtifactError(f"unknown command '{name}'")
    return ALL_COMMANDS[name](opts.model_copy(update={"command": name}))
