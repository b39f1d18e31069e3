from objectextensions import Extension

import numpy as np

from ..harness import MethodScores, OodExperiment, SeedRun
from ..baselines import (
    GaussianClassModel, classical_ensemble, credal_ensemble, energy_score, gnnsafe_score, knn_score, knnlj_score,
    mahalanobis_score, member_probabilities, msp_score, odin_score
)
from ..credal import interval_uncertainty, point_prediction
from ..constants import Constants
from ..enums import Bound, ModelKind, UncertaintyKind
from ..types import MethodEntry
from .enums import Scorer, ScorerKey


class PresetScorers(Extension):
    @staticmethod
    def can_extend(target_cls):
        return issubclass(target_cls, OodExperiment)

    @staticmethod
    def extend(target_cls):
        scorers = {
            Scorer.VANILLA: PresetScorers.__score_vanilla,
            Scorer.MSP: PresetScorers.__score_msp,
            Scorer.ENERGY: PresetScorers.__score_energy,
            Scorer.ODIN: PresetScorers.__score_odin,
            Scorer.MAHALANOBIS: PresetScorers.__score_mahalanobis,
            Scorer.KNN: PresetScorers.__score_knn,
            Scorer.KNNLJ: PresetScorers.__score_knnlj,
            Scorer.GNNSAFE: PresetScorers.__score_gnnsafe,
            Scorer.CLASSICAL_ENSEMBLE: PresetScorers.__score_classical_ensemble,
            Scorer.CREDAL_ENSEMBLE: PresetScorers.__score_credal_ensemble,
            Scorer.CREDAL_FINAL: PresetScorers.__score_credal_final,
            Scorer.CREDAL_LJ: PresetScorers.__score_credal_lj
        }

        # To prevent mutating the dict on the base class
        target_cls.SCORERS = {**target_cls.SCORERS}

        for scorer_key, scorer in scorers.items():
            if scorer_key in target_cls.SCORERS:
                raise ValueError(f"a scorer already exists under the provided key: {scorer_key}")
            target_cls.SCORERS[scorer_key] = scorer

    @staticmethod
    def __vanilla_f1(run: SeedRun) -> float:
        return run.test_f1(np.argmax(run.evaluation(ModelKind.VANILLA).logits, axis=1))

    @staticmethod
    def __single(run: SeedRun, scores: np.ndarray) -> list[MethodScores]:
        """
        A post-hoc score on the best-validation-F1 vanilla model, which also supplies the F1 columns
        """

        f1 = PresetScorers.__vanilla_f1(run)
        return [MethodScores(kind=UncertaintyKind.SINGLE, scores=scores, f1_lower=f1, f1_upper=f1)]

    @staticmethod
    def __neighbours(run: SeedRun, entry: MethodEntry) -> int:
        k = entry.get(ScorerKey.K.value, Constants.KNN_K)
        if k > run.train_index.size:
            run.logger.warning(f"k={k} exceeds the training set; using k={run.train_index.size}.")

        return min(k, run.train_index.size)

    @staticmethod
    def __score_vanilla(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        logits = run.evaluation(ModelKind.VANILLA).logits
        f1 = PresetScorers.__vanilla_f1(run)

        return [MethodScores(kind=UncertaintyKind.AU, scores=msp_score(logits), f1_lower=f1, f1_upper=f1)]

    @staticmethod
    def __score_msp(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        temperature = entry.get(ScorerKey.TEMPERATURE.value, 1.0)
        return PresetScorers.__single(run, msp_score(run.evaluation(ModelKind.VANILLA).logits, temperature))

    @staticmethod
    def __score_energy(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        temperature = entry.get(ScorerKey.TEMPERATURE.value, Constants.ENERGY_T)
        return PresetScorers.__single(run, energy_score(run.evaluation(ModelKind.VANILLA).logits, temperature))

    @staticmethod
    def __score_odin(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        temperature = entry.get(ScorerKey.TEMPERATURE.value, Constants.ODIN_T)
        epsilons = entry.get(ScorerKey.EPSILONS.value, [entry.get(ScorerKey.EPSILON.value, Constants.ODIN_EPSILON)])
        model = run.model(ModelKind.VANILLA)

        best_scores, best_auroc, best_epsilon = None, -np.inf, None
        for epsilon in epsilons:
            scores = odin_score(run.dataset, model, temperature, epsilon)
            if len(epsilons) == 1:
                best_scores, best_epsilon = scores, epsilon
                break

            # Validation ID/OOD separation picks epsilon; earlier candidates win ties
            val_auroc = run.val_auroc(scores)
            if val_auroc > best_auroc:
                best_scores, best_auroc, best_epsilon = scores, val_auroc, epsilon

        run.logger.info(f"ODIN using epsilon={best_epsilon} (temperature={temperature}).")
        return PresetScorers.__single(run, best_scores)

    @staticmethod
    def __score_mahalanobis(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        embeddings = run.evaluation(ModelKind.VANILLA).final_embedding
        model = GaussianClassModel.fit(
            embeddings[run.train_index], run.labels[run.train_index], run.partition.num_id_classes
        )

        return PresetScorers.__single(run, mahalanobis_score(embeddings, model))

    @staticmethod
    def __score_knn(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        embeddings = run.evaluation(ModelKind.VANILLA).final_embedding
        k = PresetScorers.__neighbours(run, entry)

        return PresetScorers.__single(run, knn_score(embeddings, embeddings[run.train_index], k))

    @staticmethod
    def __score_knnlj(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        k = PresetScorers.__neighbours(run, entry)
        return PresetScorers.__single(run, knnlj_score(run.dataset, run.model(ModelKind.VANILLA), run.train_index, k))

    @staticmethod
    def __score_gnnsafe(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        temperature = entry.get(ScorerKey.TEMPERATURE.value, Constants.ENERGY_T)
        alpha = entry.get(ScorerKey.ALPHA.value, Constants.GNNSAFE_ALPHA)
        propagation_steps = entry.get(ScorerKey.PROPAGATION_STEPS.value, Constants.GNNSAFE_K)

        energy = energy_score(run.evaluation(ModelKind.VANILLA).logits, temperature)
        return PresetScorers.__single(run, gnnsafe_score(energy, run.dataset, alpha, propagation_steps))

    @staticmethod
    def __ensemble_probabilities(run: SeedRun, entry: MethodEntry) -> np.ndarray:
        size = entry.get(ScorerKey.SIZE.value, Constants.ENSEMBLE_SIZE)
        pool_size = entry.get(ScorerKey.POOL_SIZE.value, size)

        return member_probabilities(run.dataset, run.ensemble(size, pool_size))

    @staticmethod
    def __ensemble_outputs(run: SeedRun, probabilities: np.ndarray, uncertainty) -> list[MethodScores]:
        f1 = run.test_f1(np.argmax(probabilities.mean(axis=0), axis=1))

        return [
            MethodScores(kind=UncertaintyKind.AU, scores=uncertainty.au, f1_lower=f1, f1_upper=f1),
            MethodScores(kind=UncertaintyKind.EU, scores=uncertainty.eu, f1_lower=f1, f1_upper=f1)
        ]

    @staticmethod
    def __score_classical_ensemble(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        probabilities = PresetScorers.__ensemble_probabilities(run, entry)
        return PresetScorers.__ensemble_outputs(run, probabilities, classical_ensemble(probabilities))

    @staticmethod
    def __score_credal_ensemble(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        members_only = entry.get(ScorerKey.MEMBERS_ONLY.value, False)
        probabilities = PresetScorers.__ensemble_probabilities(run, entry)

        return PresetScorers.__ensemble_outputs(run, probabilities, credal_ensemble(probabilities, members_only))

    @staticmethod
    def __credal_outputs(run: SeedRun, kind: ModelKind) -> list[MethodScores]:
        prediction = run.evaluation(kind).prediction
        uncertainty = interval_uncertainty(prediction, logger=run.logger)
        f1_lower = run.test_f1(point_prediction(prediction, Bound.LOWER))
        f1_upper = run.test_f1(point_prediction(prediction, Bound.UPPER))

        return [
            MethodScores(
                kind=UncertaintyKind.AU, scores=uncertainty.au, f1_lower=f1_lower, f1_upper=f1_upper,
                prediction=prediction, uncertainty=uncertainty
            ),
            MethodScores(kind=UncertaintyKind.EU, scores=uncertainty.eu, f1_lower=f1_lower, f1_upper=f1_upper)
        ]

    @staticmethod
    def __score_credal_final(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        return PresetScorers.__credal_outputs(run, ModelKind.CREDAL_FINAL)

    @staticmethod
    def __score_credal_lj(run: SeedRun, entry: MethodEntry) -> list[MethodScores]:
        return PresetScorers.__credal_outputs(run, ModelKind.CREDAL_LJ)
