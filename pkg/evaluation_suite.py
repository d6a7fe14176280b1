"""
Evaluation Suite - Reportes de separación de distancias y de precisión de
inferencia de localidad, generados solo a partir de artefactos persistidos
"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from classifier import (AccuracyReport, MlpModel, Preprocessing, evaluate, fit_preprocess,
                        nearest_centroid, train_mlp)
from fingerprint import Fingerprint, FingerprintDataset, build_dataset, distance_distributions
from result_exporter import ResultExporter
from run_config import RunConfig, TRAINING, derive_seed
from topology import EmbeddingResolver, Fleet, PATTERN_NAMES


# Escenarios de entrenamiento para la jerarquía de semillas
SCENARIO_TRAIN = 0
SCENARIO_GROWTH = 1
SCENARIO_DEGRADATION = 2


def train_classifier(dataset: FingerprintDataset, train_batches: Sequence[int], config: RunConfig,
                     seed: int) -> Tuple[MlpModel, Preprocessing]:
    """Ajusta preprocesamiento y MLP con los lotes de entrenamiento indicados"""

    train = dataset.filter_batches(train_batches)
    prep = fit_preprocess(train, config.variance_target)
    model = train_mlp(train, prep, config.training, seed)
    return model, prep


class EvaluationSuite:
    """Genera los reportes de distancias y precisión a partir de las huellas enroladas"""

    def __init__(self, config: RunConfig, exporter: ResultExporter, fleet: Fleet):
        self.config = config
        self.exporter = exporter
        self.fleet = fleet
        self.resolver = EmbeddingResolver()
        self.logger = logging.getLogger(__name__)
        self._fingerprints: Optional[List[Fingerprint]] = None
        self._datasets: Dict[str, FingerprintDataset] = {}

    @property
    def fingerprints(self) -> List[Fingerprint]:
        if self._fingerprints is None:
            self._fingerprints = self.exporter.load_enrolled(self.fleet, range(self.config.batches))
        return self._fingerprints

    def dataset(self, pattern: str) -> FingerprintDataset:
        if pattern not in self._datasets:
            self._datasets[pattern] = build_dataset(self.fingerprints, pattern, self.fleet, self.resolver)
        return self._datasets[pattern]

    def training_seed(self, pattern: str, scenario: int, step: int = 0) -> int:
        return derive_seed(self.config.seed, TRAINING, PATTERN_NAMES.index(pattern), scenario, step)

    def _scenario(self, pattern: str, train_batches: Sequence[int], test_batches: Sequence[int],
                  seed: int) -> Tuple[AccuracyReport, AccuracyReport]:
        dataset = self.dataset(pattern)
        model, prep = train_classifier(dataset, train_batches, self.config, seed)
        test = dataset.filter_batches(test_batches)
        mlp_report = evaluate(model, prep, test, train_batches)
        centroid_report = nearest_centroid(dataset.filter_batches(train_batches), test)
        return mlp_report, centroid_report

    @staticmethod
    def _row(mlp: AccuracyReport, centroid: AccuracyReport, **extra) -> Dict[str, object]:
        row = dict(extra)
        row.update({
            "pattern": mlp.pattern,
            "train_batches": " ".join(str(b) for b in mlp.train_batches),
            "test_batches": " ".join(str(b) for b in mlp.test_batches),
            "device_accuracy": mlp.device_accuracy,
            "embedding_accuracy": mlp.embedding_accuracy,
            "centroid_device_accuracy": centroid.device_accuracy,
            "centroid_embedding_accuracy": centroid.embedding_accuracy,
        })
        return row

    def distance_report(self, patterns: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Distancias inter/intra por patrón y su resumen de medianas"""

        summary = []
        for pattern in patterns or self.config.patterns:
            inter, intra = distance_distributions(self.fingerprints, pattern, self.fleet, self.resolver)
            frame = pd.DataFrame({
                "kind": ["inter"] * len(inter) + ["intra"] * len(intra),
                "distance": np.concatenate([inter, intra]),
            })
            self.exporter.write_report(f"distances_{pattern}", frame)

            median_inter = float(np.median(inter)) if inter.size else float("nan")
            median_intra = float(np.median(intra)) if intra.size else float("nan")
            ratio = median_inter / median_intra if intra.size and median_intra > 0 else float("nan")
            summary.append({"pattern": pattern, "median_inter": median_inter,
                            "median_intra": median_intra, "ratio": ratio,
                            "inter_count": int(inter.size), "intra_count": int(intra.size)})
            self.logger.info(f"Distancias {pattern}: razón de medianas {ratio:.2f}")

        frame = pd.DataFrame(summary)
        self.exporter.write_report("distance_summary", frame)
        return frame

    def accuracy_vs_batches(self, patterns: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Entrena con los primeros n lotes (n = 1 .. lotes-1) y prueba con los últimos 3"""

        batches = self.config.batches
        test_batches = list(range(max(0, batches - 3), batches))
        rows = []
        for pattern in patterns or self.config.patterns:
            for n in range(1, batches):
                mlp, centroid = self._scenario(pattern, range(n), test_batches,
                                               self.training_seed(pattern, SCENARIO_GROWTH, n))
                rows.append(self._row(mlp, centroid, training_batches=n))
        frame = pd.DataFrame(rows)
        self.exporter.write_report("accuracy_vs_batches", frame)
        return frame

    def accuracy_per_pattern(self, patterns: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Lotes de entrenamiento y prueba configurados, un renglón por patrón"""

        rows = []
        for pattern in patterns or self.config.patterns:
            mlp, centroid = self._scenario(pattern, self.config.train_batches, self.config.test_batches,
                                           self.training_seed(pattern, SCENARIO_TRAIN))
            rows.append(self._row(mlp, centroid))
            self.logger.info(f"{pattern}: dispositivo {mlp.device_accuracy:.3f}, "
                             f"embebimiento {mlp.embedding_accuracy:.3f}")
        frame = pd.DataFrame(rows)
        self.exporter.write_report("accuracy_per_pattern", frame)
        return frame

    def degradation(self, patterns: Optional[Sequence[str]] = None) -> pd.DataFrame:
        """Entrena solo con el lote 0 y prueba cada lote posterior por separado"""

        rows = []
        for pattern in patterns or self.config.patterns:
            dataset = self.dataset(pattern)
            model, prep = train_classifier(dataset, [0], self.config,
                                           self.training_seed(pattern, SCENARIO_DEGRADATION))
            train = dataset.filter_batches([0])
            for batch_index in range(1, self.config.batches):
                test = dataset.filter_batches([batch_index])
                rows.append(self._row(evaluate(model, prep, test, [0]), nearest_centroid(train, test),
                                      test_batch=batch_index))
        frame = pd.DataFrame(rows)
        self.exporter.write_report("degradation", frame)
        return frame

    def run_all(self) -> Dict[str, pd.DataFrame]:
        """Genera los cuatro reportes"""

        self.logger.info("Generando reportes de evaluación")
        reports = {"distance_summary": self.distance_report(),
                   "accuracy_per_pattern": self.accuracy_per_pattern()}
        if self.config.batches >= 2:
            reports["accuracy_vs_batches"] = self.accuracy_vs_batches()
            reports["degradation"] = self.degradation()
        return reports
