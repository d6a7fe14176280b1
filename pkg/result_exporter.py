"""
Result Exporter - Persistencia de todos los artefactos de una corrida
Flota y modelos (JSON), conteos (JSONL), estimaciones y huellas (CSV/JSON),
datasets por patrón, clasificadores y reportes
"""

import json
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from classifier import MODEL_FORMAT_VERSION, MlpModel, PcaModel, Preprocessing, Standardizer
from fingerprint import FeatureDescriptor, Fingerprint, FingerprintDataset, device_layout
from idle_tomography import IdtCircuitSpec, RateEstimate
from noise_simulator import MODEL_FORMAT_VERSION as ERROR_MODEL_FORMAT_VERSION, CountRecord, ErrorModel
from topology import DeviceTopology, Fleet


DATASET_FORMAT_VERSION = 1
ESTIMATE_COLUMNS = ["device", "batch", "drive", "target", "source", "value", "std_err", "clamped"]


class MissingArtifactError(ValueError):
    """Faltan artefactos persistidos requeridos por un comando"""

    def __init__(self, message: str, missing: Sequence[str] = ()):
        super().__init__(message)
        self.missing = list(missing)


class ResultExporter:
    """Lee y escribe los artefactos bajo el directorio de salida"""

    def __init__(self, output_dir):
        self.root = Path(output_dir)
        self.logger = logging.getLogger(__name__)

    # Rutas
    @property
    def fleet_path(self) -> Path:
        return self.root / "fleet.json"

    @property
    def models_path(self) -> Path:
        return self.root / "models.json"

    def cell_dir(self, device_id: str, batch_index: int) -> Path:
        return self.root / "enroll" / device_id / f"batch_{batch_index}"

    def dataset_dir(self, pattern: str) -> Path:
        return self.root / "datasets" / pattern

    def classifier_path(self, pattern: str) -> Path:
        return self.root / "classifiers" / f"{pattern}.json"

    def report_path(self, name: str) -> Path:
        return self.root / "reports" / f"{name}.csv"

    # Escritura genérica
    def _write_json(self, path: Path, data) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
            f.write("\n")
        self.logger.debug(f"JSON escrito: {path}")
        return path

    def _read_json(self, path: Path):
        if not path.is_file():
            raise MissingArtifactError(f"Artefacto no encontrado: {path}", [str(path)])
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    def _write_csv(self, path: Path, frame: pd.DataFrame) -> Path:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
        self.logger.debug(f"CSV escrito: {path}")
        return path

    # Flota y modelos de error
    def write_fleet(self, fleet: Fleet) -> Path:
        return self._write_json(self.fleet_path, fleet.to_dict())

    def read_fleet(self) -> Fleet:
        return Fleet.from_dict(self._read_json(self.fleet_path))

    def write_models(self, models: Sequence[ErrorModel], seed: int) -> Path:
        return self._write_json(self.models_path, {
            "format_version": ERROR_MODEL_FORMAT_VERSION,
            "seed": seed,
            "models": [m.to_dict() for m in models],
        })

    def read_models(self) -> Dict[str, ErrorModel]:
        data = self._read_json(self.models_path)
        return {entry["device_id"]: ErrorModel.from_dict(entry) for entry in data["models"]}

    # Celdas de enrolamiento (dispositivo, lote)
    def write_circuits(self, device_id: str, batch_index: int, specs: Iterable[IdtCircuitSpec]) -> Path:
        """Programa de circuitos de la celda; resuelve los circuit_id de counts.jsonl"""
        path = self.cell_dir(device_id, batch_index) / "circuits.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for spec in specs:
                f.write(json.dumps(spec.to_dict(), ensure_ascii=False) + "\n")
        return path

    def write_counts(self, device_id: str, batch_index: int, records: Iterable[CountRecord]) -> Path:
        path = self.cell_dir(device_id, batch_index) / "counts.jsonl"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            for record in records:
                f.write(json.dumps(record.to_dict(), ensure_ascii=False) + "\n")
        return path

    def write_estimates(self, device_id: str, batch_index: int, estimates: Sequence[RateEstimate]) -> Path:
        frame = pd.DataFrame([{
            "device": device_id,
            "batch": batch_index,
            "drive": e.drive,
            "target": "-".join(str(q) for q in e.target),
            "source": e.source,
            "value": float(e.value),
            "std_err": float(e.std_err),
            "clamped": bool(e.clamped),
        } for e in estimates], columns=ESTIMATE_COLUMNS)
        return self._write_csv(self.cell_dir(device_id, batch_index) / "estimates.csv", frame)

    def write_fingerprint(self, device_id: str, fingerprint: Fingerprint) -> Tuple[Path, Path]:
        cell = self.cell_dir(device_id, fingerprint.batch_index)
        csv_path = self._write_csv(cell / "fingerprint.csv", fingerprint.to_frame())
        json_path = self._write_json(cell / "fingerprint.json", fingerprint.to_dict())
        return csv_path, json_path

    def read_fingerprint(self, device_id: str, batch_index: int) -> Fingerprint:
        return Fingerprint.from_dict(self._read_json(self.cell_dir(device_id, batch_index) / "fingerprint.json"))

    def write_status(self, device_id: str, batch_index: int, complete: bool,
                     missing: Sequence[str] = ()) -> Path:
        return self._write_json(self.cell_dir(device_id, batch_index) / "status.json",
                                {"complete": bool(complete), "missing": list(missing)})

    def read_status(self, device_id: str, batch_index: int) -> Optional[dict]:
        """Estado de la celda o None si nunca se escribió"""
        path = self.cell_dir(device_id, batch_index) / "status.json"
        if not path.is_file():
            return None
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)

    def is_complete(self, device_id: str, batch_index: int) -> bool:
        status = self.read_status(device_id, batch_index)
        cell = self.cell_dir(device_id, batch_index)
        files = ("circuits.jsonl", "counts.jsonl", "estimates.csv", "fingerprint.csv", "fingerprint.json")
        return bool(status and status.get("complete")) and all((cell / name).is_file() for name in files)

    def load_enrolled(self, fleet: Fleet, batches: Iterable[int]) -> List[Fingerprint]:
        """Carga las huellas completas

        Las celdas marcadas incompletas se excluyen; las que no existen se reportan
        como faltantes.
        """

        fingerprints, missing = [], []
        for batch_index in batches:
            for device in fleet.devices:
                status = self.read_status(device.device_id, batch_index)
                if self.is_complete(device.device_id, batch_index):
                    fingerprints.append(self.read_fingerprint(device.device_id, batch_index))
                elif status is not None and not status.get("complete"):
                    self.logger.warning(f"Celda incompleta excluida: {device.device_id}/batch_{batch_index}")
                else:
                    missing.append(f"{device.device_id}/batch_{batch_index}")
        if missing:
            raise MissingArtifactError(
                f"Faltan {len(missing)} huellas enroladas: {', '.join(missing[:12])}", missing)
        return fingerprints

    # Datasets por patrón
    def write_dataset(self, dataset: FingerprintDataset) -> Path:
        directory = self.dataset_dir(dataset.pattern)
        labels = [d.label() for d in dataset.layout]
        for class_index in range(dataset.num_classes):
            rows = [s for s in dataset.samples if s.class_index == class_index]
            frame = pd.DataFrame([s.features for s in rows], columns=labels) if rows \
                else pd.DataFrame(columns=labels)
            frame.insert(0, "batch", [s.batch_index for s in rows])
            self._write_csv(directory / f"class_{class_index}.csv", frame)

        return self._write_json(directory / "manifest.json", {
            "format_version": DATASET_FORMAT_VERSION,
            "pattern": dataset.pattern,
            "layout_hash": dataset.layout_hash,
            "dimension": len(dataset.layout),
            "batches": dataset.batches(),
            "classes": [dict(index=k, **e.to_dict()) for k, e in enumerate(dataset.classes)],
        })

    # Clasificadores
    def write_classifier(self, model: MlpModel, prep: Preprocessing, seed: int) -> Path:
        return self._write_json(self.classifier_path(model.pattern), {
            "format_version": MODEL_FORMAT_VERSION,
            "seed": seed,
            "model": model.to_dict(),
            "preprocessing": {"standardizer": prep.standardizer.to_dict(), "pca": prep.pca.to_dict()},
        })

    def read_classifier(self, pattern: str) -> Tuple[MlpModel, Preprocessing]:
        data = self._read_json(self.classifier_path(pattern))
        if data.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValueError(f"Versión de clasificador no soportada: {data.get('format_version')}")
        prep = Preprocessing(Standardizer.from_dict(data["preprocessing"]["standardizer"]),
                             PcaModel.from_dict(data["preprocessing"]["pca"]))
        return MlpModel.from_dict(data["model"]), prep

    # Reportes
    def write_report(self, name: str, frame: pd.DataFrame) -> Path:
        path = self._write_csv(self.report_path(name), frame)
        self.logger.info(f"Reporte exportado: {path}")
        return path


def load_query(path, device: Optional[DeviceTopology] = None) -> Fingerprint:
    """Lee una huella de prueba (JSON compacto o CSV de una fila por característica)

    El CSV no guarda el marco: si su disposición es la del dispositivo indicado se
    lee como huella de dispositivo completo, si no como huella de patrón.
    """

    path = Path(path)
    if not path.is_file():
        raise MissingArtifactError(f"Huella de prueba no encontrada: {path}", [str(path)])
    if path.suffix == ".json":
        with open(path, 'r', encoding='utf-8') as f:
            return Fingerprint.from_dict(json.load(f))

    frame = pd.read_csv(path, dtype={"target": str})
    layout = tuple(FeatureDescriptor(row.drive, tuple(int(q) for q in str(row.target).split("-")), row.source)
                   for row in frame.itertuples(index=False))
    features = np.asarray(frame["value"], dtype=float)
    if device is not None and layout == device_layout(device):
        return Fingerprint("device", device.device_id, 0, features, layout)
    return Fingerprint("pattern", path.stem, 0, features, layout)
