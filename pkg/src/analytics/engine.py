"""
Classification Engine
=====================

Main orchestration engine that ties together:
- Trajectory loading and preprocessing
- Semi-metric distance matrices (with an on-disk cache)
- Weak learner tuning and evaluation under one nested fold plan
- Selection gate and stacked ensembles (LC, RF, GB; type I and II)
- The run report

Every stage failure is re-raised as StageError so callers see which stage
broke. Reports depend only on the inputs, the configuration and the seed.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .config import RunConfig
from .cvharness import (
    EnsembleResult,
    FoldPlan,
    ProtocolAudit,
    WeakResult,
    evaluate_ensembles,
    evaluate_weak,
    make_folds,
)
from .dataset import (
    PreprocessedDataset,
    load_external_measures,
    load_labels,
    load_partition,
    load_trajectories,
    preprocess_frames,
    save_preprocessed,
)
from .distance_cache import DistanceCache, export_csv
from .ensemble import MeasureType
from .errors import InvariantViolation, StageError
from .funcdata import AOIPartition
from .report import BaseReport, RunReport, ensemble_report, weak_report, write_outputs
from .semimetrics import DistanceMatrix, SemiMetricFamily
from .weak_learners import LearnerBase, WeakLearnerSpec

logger = logging.getLogger(__name__)

PREPROCESSED_FILE = "preprocessed.json"


@dataclass
class BaseOutcome:
    """Weak learners and ensembles of one learner base."""

    base: LearnerBase
    weak: List[WeakResult]
    ensembles: List[EnsembleResult] = field(default_factory=list)
    candidates: List[str] = field(default_factory=list)


class ClassificationEngine:
    """
    Runs the full classification protocol for one RunConfig.

    Stages:
    1. Preprocess trajectories into labeled samples
    2. Compute (or load) one distance matrix per roster semi-metric
    3. Build the shared fold plan
    4. Tune and evaluate weak learners, per learner base
    5. Gate the weak learners and build the ensembles
    6. Assemble and write the report
    """

    def __init__(self, config: RunConfig, gate: Optional[str] = None):
        self.config = config
        self.gate = gate or config.ensemble.gate.value
        self.output_dir = Path(config.output_dir)

        self.dataset: Optional[PreprocessedDataset] = None
        self.partition: Optional[AOIPartition] = None
        self.matrices: Dict[str, DistanceMatrix] = {}
        self.plan: Optional[FoldPlan] = None
        self.audit: Optional[ProtocolAudit] = None
        self.cache: Optional[DistanceCache] = None

    def _stage(self, name: str, func, *args, **kwargs):
        try:
            return func(*args, **kwargs)
        except StageError:
            raise
        except Exception as e:
            logger.error(f"Stage '{name}' failed: {e}")
            raise StageError(name, e) from e

    # =========================================================================
    # STAGES
    # =========================================================================

    def preprocess(self) -> PreprocessedDataset:
        """Load the data files and preprocess every trajectory."""
        def run():
            paths = self.config.data
            logger.info(f"Loading trajectories from {paths.trajectories}")
            trajectories = load_trajectories(paths.trajectories)
            labels = load_labels(paths.labels)
            external = load_external_measures(paths.measures) if paths.measures else None
            if paths.aois:
                self.partition = load_partition(paths.aois)
            return preprocess_frames(trajectories, labels, self.config.preprocess, self.config.question, external)

        self.dataset = self._stage("preprocess", run)
        if not self.dataset.samples:
            raise StageError("preprocess", InvariantViolation("No labeled trajectories left after preprocessing"))
        return self.dataset

    def save_dataset(self) -> Path:
        path = self.output_dir / PREPROCESSED_FILE
        self._stage("preprocess", save_preprocessed, self.dataset, path, self.config.preprocess)
        logger.info(f"Preprocessed dataset written to {path}")
        return path

    def compute_distances(self, export_dir: Optional[Path] = None) -> Dict[str, DistanceMatrix]:
        """One matrix per roster spec, read from the cache when valid."""
        def run():
            self.cache = DistanceCache(self.config.cache_path, self.dataset.fingerprint())
            for spec in self.config.roster():
                needs_partition = spec.family in (SemiMetricFamily.COMPOSITION, SemiMetricFamily.SYMBOL_SEQUENCE)
                matrix, _ = self.cache.get_or_compute(
                    spec,
                    self.dataset.samples,
                    partition=self.partition if needs_partition else None,
                    n_jobs=self.config.jobs,
                )
                self.matrices[spec.label] = matrix
                if export_dir is not None:
                    export_csv(matrix, Path(export_dir) / f"{spec.label}.csv")
            logger.info(f"Distance cache: {self.cache.hits} hits, {self.cache.misses} misses")
            return self.matrices

        return self._stage("distances", run)

    def make_plan(self) -> FoldPlan:
        folds = self.config.folds
        self.plan = self._stage(
            "weak", make_folds, self.dataset.ids, self.dataset.labels, folds.k_out, folds.k_in, self.config.seed
        )
        self.audit = ProtocolAudit(self.plan)
        return self.plan

    def evaluate_base(self, base: LearnerBase) -> BaseOutcome:
        specs = [WeakLearnerSpec(base, spec, kernel=self.config.weak.kernel) for spec in self.config.roster()]
        weak = self._stage(
            "weak",
            evaluate_weak,
            specs,
            self.matrices,
            self.dataset.labels,
            self.plan,
            grids=self.config.weak.grids(),
            seed=self.config.seed,
            n_jobs=self.config.jobs,
            audit=self.audit,
        )

        setup = self._stage("gate", self.config.ensemble.setup, self.gate)
        covariates, names = None, ()
        if any(mtype == MeasureType.II for _, mtype in setup.kinds) and self.config.ensemble.covariate_measures:
            names = tuple(self.config.ensemble.covariate_measures)
            covariates = self._stage("ensembles", self.dataset.covariates, list(names))

        ensembles, candidates = self._stage(
            "ensembles",
            evaluate_ensembles,
            weak,
            self.dataset.labels,
            self.plan,
            setup=setup,
            covariates=covariates,
            covariate_names=names,
            seed=self.config.seed,
            n_jobs=self.config.jobs,
            audit=self.audit,
        )
        return BaseOutcome(base=base, weak=weak, ensembles=ensembles, candidates=candidates)

    def build_report(self, outcomes: List[BaseOutcome]) -> RunReport:
        def run():
            self.audit.check()
            bases = []
            for outcome in outcomes:
                notes = []
                if not outcome.candidates:
                    notes.append(f"No weak learner reached the {self.config.ensemble.threshold} gate")
                if self.gate == "outer":
                    notes.append("Gate uses mean outer-fold accuracy, so ensemble composition sees test folds")
                bases.append(BaseReport(
                    base=outcome.base.value,
                    gate=self.gate,
                    threshold=self.config.ensemble.threshold,
                    candidates=outcome.candidates,
                    weak=[weak_report(w, outcome.candidates) for w in outcome.weak],
                    ensembles=[ensemble_report(e) for e in outcome.ensembles],
                    notes=notes,
                ))
            dropped = self.dataset.dropped
            return RunReport(
                seed=self.config.seed,
                config_fingerprint=self.config.fingerprint(),
                dataset_fingerprint=self.dataset.fingerprint(),
                fold_plan_fingerprint=self.plan.fingerprint(),
                n_samples=len(self.dataset.samples),
                classes=sorted({int(l) for l in self.dataset.labels}),
                preprocessing={
                    "questions": self.dataset.questions,
                    "dropped": dropped,
                    "n_dropped": len(dropped),
                },
                audit=self.audit.summary(),
                bases=bases,
            )

        return self._stage("report", run)

    def save_models(self, outcomes: List[BaseOutcome]) -> None:
        model_dir = self.output_dir / "models"
        model_dir.mkdir(parents=True, exist_ok=True)
        for outcome in outcomes:
            for result in outcome.ensembles:
                for o, fold in enumerate(result.folds):
                    if fold is None:
                        continue
                    path = model_dir / f"{outcome.base.value}_{result.name}_fold{o}.json"
                    path.write_text(json.dumps(fold.model.to_dict(), sort_keys=True, indent=2), encoding="utf-8")
        logger.info(f"Ensemble models written to {model_dir}")

    # =========================================================================
    # PIPELINE
    # =========================================================================

    def run(self, dataset: Optional[PreprocessedDataset] = None, write: bool = True) -> RunReport:
        """Run every stage; an already preprocessed dataset skips step 1."""
        logger.info("Starting classification pipeline...")

        if dataset is None:
            logger.info("Step 1: Preprocessing trajectories...")
            self.preprocess()
        else:
            logger.info("Step 1: Using preprocessed dataset")
            self.dataset = dataset
        logger.info(f"  {len(self.dataset.samples)} samples, {len(self.dataset.dropped)} dropped")

        logger.info(f"Step 2: Computing {len(self.config.roster())} distance matrices...")
        self.compute_distances()

        logger.info(f"Step 3: Building {self.config.folds.k_out}x{self.config.folds.k_in} fold plan...")
        self.make_plan()

        outcomes = []
        for base in self.config.weak.bases:
            logger.info(f"Step 4: Evaluating {base.value} weak learners and ensembles...")
            outcomes.append(self.evaluate_base(base))

        logger.info("Step 5: Assembling report...")
        report = self.build_report(outcomes)
        if write:
            self._stage("report", write_outputs, report, self.output_dir)
            if self.config.ensemble.save_models:
                self._stage("report", self.save_models, outcomes)

        logger.info("Classification pipeline complete!")
        self._log_summary(report)
        return report

    def _log_summary(self, report: RunReport) -> None:
        logger.info("=" * 60)
        logger.info("CLASSIFICATION SUMMARY")
        logger.info("=" * 60)
        logger.info(f"Samples: {report.n_samples:,} ({len(report.classes)} classes)")
        logger.info(f"Dropped in preprocessing: {report.preprocessing.get('n_dropped', 0)}")
        for base in report.bases:
            logger.info("-" * 60)
            best = max(base.weak, key=lambda w: w.mean_outer, default=None)
            if best is not None:
                logger.info(f"[{base.base}] Best weak learner: {best.name} ({best.mean_outer:.4f})")
            logger.info(f"[{base.base}] Passed gate: {len(base.candidates)}/{len(base.weak)}")
            for ensemble in base.ensembles:
                if ensemble.folds:
                    logger.info(f"[{base.base}] {ensemble.name}: outer {ensemble.mean_outer:.4f}")
        logger.info("=" * 60)


def run_pipeline(
    config: RunConfig,
    gate: Optional[str] = None,
    dataset: Optional[PreprocessedDataset] = None,
    write: bool = True,
) -> RunReport:
    """Convenience wrapper: build an engine and run every stage."""
    return ClassificationEngine(config, gate=gate).run(dataset=dataset, write=write)
