"""
Fingerprint - Ensambla vectores de huella a partir de las tasas estimadas,
recorta huellas de dispositivo completo a localidades embebidas y calcula distancias
"""

import hashlib
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.spatial.distance import pdist

from idle_tomography import (PAIR_SOURCE, WEIGHT1_SOURCES, DriveSpec, RateEstimate,
                             drive_order, spectators_of)
from topology import (DeviceTopology, Embedding, EmbeddingResolver, Fleet, PatternTopology,
                      is_embedding, pattern_topology)


FINGERPRINT_FORMAT_VERSION = 1

logger = logging.getLogger(__name__)


class LayoutMismatchError(ValueError):
    """Huellas con disposiciones de características distintas"""


class CoverageError(ValueError):
    """Faltan estimaciones para celdas de la disposición"""

    def __init__(self, message: str, missing: Sequence["FeatureDescriptor"] = ()):
        super().__init__(message)
        self.missing = list(missing)


@dataclass(frozen=True)
class FeatureDescriptor:
    """(elemento manejado, qubit o par objetivo, fuente de la tasa)"""
    drive: str
    target: Tuple[int, ...]
    source: str

    def target_label(self) -> str:
        return "-".join(str(q) for q in self.target)

    def label(self) -> str:
        return f"{self.drive}|{self.target_label()}|{self.source}"


Layout = Tuple[FeatureDescriptor, ...]


@dataclass
class Fingerprint:
    """Vector de huella en el marco de un dispositivo o de un patrón"""
    frame_kind: str
    frame_id: str
    batch_index: int
    features: np.ndarray
    layout: Layout

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.frame_kind not in ("device", "pattern"):
            raise ValueError(f"Marco desconocido: {self.frame_kind}")
        if self.features.shape != (len(self.layout),):
            raise LayoutMismatchError(
                f"Dimensión {self.features.shape} no coincide con la disposición ({len(self.layout)})")
        if not np.all(np.isfinite(self.features)):
            raise ValueError(f"Huella con valores no finitos ({self.frame_id}, lote {self.batch_index})")

    @property
    def dimension(self) -> int:
        return len(self.layout)

    @property
    def layout_hash(self) -> str:
        return layout_hash(self.layout)

    def to_dict(self) -> dict:
        return {
            "format_version": FINGERPRINT_FORMAT_VERSION,
            "frame": {"kind": self.frame_kind, "id": self.frame_id},
            "batch_index": self.batch_index,
            "layout_hash": self.layout_hash,
            "layout": [[d.drive, list(d.target), d.source] for d in self.layout],
            "features": [float(x) for x in self.features],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Fingerprint":
        layout = tuple(FeatureDescriptor(drive, tuple(int(q) for q in target), source)
                       for drive, target, source in data["layout"])
        fingerprint = cls(frame_kind=data["frame"]["kind"], frame_id=data["frame"]["id"],
                          batch_index=int(data["batch_index"]),
                          features=np.asarray(data["features"], dtype=float), layout=layout)
        stored = data.get("layout_hash")
        if stored and stored != fingerprint.layout_hash:
            raise LayoutMismatchError(f"Hash de disposición inconsistente en {fingerprint.frame_id}")
        return fingerprint

    def to_frame(self) -> pd.DataFrame:
        """Una fila por característica: drive, target, source, value"""
        return pd.DataFrame({
            "drive": [d.drive for d in self.layout],
            "target": [d.target_label() for d in self.layout],
            "source": [d.source for d in self.layout],
            "value": self.features,
        })


@dataclass
class DatasetSample:
    features: np.ndarray
    class_index: int
    batch_index: int


@dataclass
class FingerprintDataset:
    """Huellas recortadas de un patrón etiquetadas por embebimiento"""
    pattern: str
    classes: List[Embedding]
    layout: Layout
    samples: List[DatasetSample] = field(default_factory=list)

    @property
    def layout_hash(self) -> str:
        return layout_hash(self.layout)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def batches(self) -> List[int]:
        return sorted({s.batch_index for s in self.samples})

    def filter_batches(self, batches: Iterable[int]) -> "FingerprintDataset":
        keep = set(int(b) for b in batches)
        return FingerprintDataset(self.pattern, self.classes, self.layout,
                                  [s for s in self.samples if s.batch_index in keep])

    def matrix(self) -> Tuple[np.ndarray, np.ndarray]:
        """(X, y) con una fila por muestra"""
        if not self.samples:
            return np.empty((0, len(self.layout))), np.empty(0, dtype=int)
        X = np.vstack([s.features for s in self.samples])
        y = np.array([s.class_index for s in self.samples], dtype=int)
        return X, y

    def class_devices(self) -> List[str]:
        return [e.device_id for e in self.classes]


def layout_hash(layout: Layout) -> str:
    joined = "\n".join(d.label() for d in layout)
    return hashlib.sha1(joined.encode("utf-8")).hexdigest()[:16]


@lru_cache(maxsize=64)
def graph_layout(num_qubits: int, couplings: Tuple[Tuple[int, int], ...]) -> Layout:
    """Disposición canónica para un grafo dado

    Manejos en orden (individuales, pares, control_single, control_pair); dentro de
    cada manejo los espectadores en orden con sus 9 fuentes y luego los pares de
    espectadores adyacentes con lambda. Manejos sin espectadores no aportan nada.
    """

    layout: List[FeatureDescriptor] = []
    for drive in drive_order(num_qubits, couplings):
        spectators = spectators_of(drive, num_qubits)
        for qubit in spectators:
            layout.extend(FeatureDescriptor(drive.key, (qubit,), source) for source in WEIGHT1_SOURCES)
        for pair in couplings:
            if pair[0] in spectators and pair[1] in spectators:
                layout.append(FeatureDescriptor(drive.key, tuple(pair), PAIR_SOURCE))
    return tuple(layout)


def device_layout(topology: DeviceTopology) -> Layout:
    return graph_layout(topology.num_qubits, tuple(tuple(c) for c in topology.couplings))


def pattern_layout(pattern: PatternTopology) -> Layout:
    """Las aristas del patrón se etiquetan ordenadas para compartir disposición entre embebimientos"""
    edges = tuple(sorted((min(e), max(e)) for e in pattern.edges))
    return graph_layout(pattern.vertices, edges)


def _assemble_on(estimates: Iterable[RateEstimate], layout: Layout, frame_kind: str,
                 frame_id: str, batch_index: int) -> Fingerprint:
    cells: Dict[Tuple[str, Tuple[int, ...], str], float] = {}
    for estimate in estimates:
        cells[estimate.cell] = float(estimate.value)

    missing = [d for d in layout if (d.drive, d.target, d.source) not in cells]
    if missing:
        preview = ", ".join(d.label() for d in missing[:10])
        raise CoverageError(f"{len(missing)} celdas sin estimación en {frame_id}: {preview}", missing)

    features = np.array([cells[(d.drive, d.target, d.source)] for d in layout])
    return Fingerprint(frame_kind, frame_id, batch_index, features, layout)


def assemble(estimates: Iterable[RateEstimate], topology: DeviceTopology,
             batch_index: int = 0) -> Fingerprint:
    """Huella de dispositivo completo en la disposición canónica"""
    return _assemble_on(estimates, device_layout(topology), "device", topology.device_id, batch_index)


def _map_drive(key: str, mapping: Dict[int, int]) -> Optional[str]:
    """Reetiqueta un elemento manejado; None si sale del conjunto de vértices"""

    drive = DriveSpec.from_key(key)
    if drive.kind not in ("single", "pair"):
        return key
    if any(q not in mapping for q in drive.qubits):
        return None
    mapped = sorted(mapping[q] for q in drive.qubits)
    return DriveSpec(drive.kind, tuple(mapped)).key


def _map_target(target: Tuple[int, ...], mapping: Dict[int, int]) -> Optional[Tuple[int, ...]]:
    if any(q not in mapping for q in target):
        return None
    return tuple(sorted(mapping[q] for q in target))


def _device_descriptor(descriptor: FeatureDescriptor, embedding: Embedding) -> FeatureDescriptor:
    forward = {v: q for v, q in enumerate(embedding.vertex_map)}
    return FeatureDescriptor(_map_drive(descriptor.drive, forward),
                             _map_target(descriptor.target, forward), descriptor.source)


def _check_embedding(embedding: Embedding, device: DeviceTopology) -> PatternTopology:
    pattern = pattern_topology(embedding.pattern)
    if embedding.device_id != device.device_id or not is_embedding(pattern, device, embedding.vertex_map):
        raise ValueError(f"Embebimiento inválido {embedding.label()} para el patrón {embedding.pattern}")
    return pattern


def slice_fingerprint(full: Fingerprint, embedding: Embedding,
                      device: Optional[DeviceTopology] = None) -> Fingerprint:
    """Recorta una huella de dispositivo a la localidad embebida, en coordenadas del patrón"""

    if full.frame_kind != "device" or full.frame_id != embedding.device_id:
        raise ValueError(f"La huella {full.frame_id} no pertenece al dispositivo {embedding.device_id}")
    if device is not None:
        pattern = _check_embedding(embedding, device)
    else:
        pattern = pattern_topology(embedding.pattern)

    index = {d: i for i, d in enumerate(full.layout)}
    layout = pattern_layout(pattern)
    positions = []
    for descriptor in layout:
        mapped = _device_descriptor(descriptor, embedding)
        if mapped not in index:
            raise ValueError(f"Embebimiento inválido {embedding.label()}: falta {mapped.label()}")
        positions.append(index[mapped])

    return Fingerprint("pattern", pattern.name, full.batch_index, full.features[positions], layout)


def assemble_locality(estimates: Iterable[RateEstimate], embedding: Embedding,
                      batch_index: int = 0) -> Fingerprint:
    """Ensambla directamente desde las estimaciones restringidas a la localidad"""

    inverse = embedding.inverse()
    restricted = []
    for estimate in estimates:
        drive = _map_drive(estimate.drive, inverse)
        target = _map_target(estimate.target, inverse)
        if drive is None or target is None:
            continue
        restricted.append(RateEstimate(estimate.value, estimate.std_err, estimate.source,
                                       drive, target, estimate.clamped))

    pattern = pattern_topology(embedding.pattern)
    return _assemble_on(restricted, pattern_layout(pattern), "pattern", pattern.name, batch_index)


def check_layouts(f1: Fingerprint, f2: Fingerprint) -> None:
    if f1.layout != f2.layout:
        raise LayoutMismatchError(
            f"Disposiciones distintas: {f1.frame_id} ({f1.dimension}) vs {f2.frame_id} ({f2.dimension})")


def normalized_distance(f1: Fingerprint, f2: Fingerprint) -> float:
    """||f1 - f2||_2 / n"""
    check_layouts(f1, f2)
    return float(np.linalg.norm(f1.features - f2.features) / f1.dimension)


def build_dataset(fingerprints: Iterable[Fingerprint], pattern: str, fleet: Fleet,
                  resolver: Optional[EmbeddingResolver] = None) -> FingerprintDataset:
    """Una muestra por (embebimiento, lote); las clases siguen el orden de enumeración"""

    resolver = resolver or EmbeddingResolver()
    topology = pattern_topology(pattern)
    classes = resolver.enumerate_embeddings(topology, fleet)

    by_device: Dict[str, List[Fingerprint]] = {}
    for fingerprint in fingerprints:
        by_device.setdefault(fingerprint.frame_id, []).append(fingerprint)
    for group in by_device.values():
        group.sort(key=lambda f: f.batch_index)

    dataset = FingerprintDataset(pattern, classes, pattern_layout(topology))
    for class_index, embedding in enumerate(classes):
        for full in by_device.get(embedding.device_id, []):
            sliced = slice_fingerprint(full, embedding)
            dataset.samples.append(DatasetSample(sliced.features, class_index, full.batch_index))

    logger.debug(f"Dataset {pattern}: {len(classes)} clases, {len(dataset.samples)} muestras")
    return dataset


def distance_distributions(fingerprints: Iterable[Fingerprint], pattern: str, fleet: Fleet,
                           resolver: Optional[EmbeddingResolver] = None
                           ) -> Tuple[np.ndarray, np.ndarray]:
    """Distancias normalizadas inter (embebimientos distintos, mismo lote)
    e intra (mismo embebimiento, lotes distintos)"""

    dataset = build_dataset(fingerprints, pattern, fleet, resolver)
    X, y = dataset.matrix()
    if X.size == 0:
        return np.empty(0), np.empty(0)
    batches = np.array([s.batch_index for s in dataset.samples])
    n = X.shape[1]

    inter = [pdist(X[batches == b]) / n for b in np.unique(batches) if np.sum(batches == b) > 1]
    intra = [pdist(X[y == k]) / n for k in np.unique(y) if np.sum(y == k) > 1]
    return (np.concatenate(inter) if inter else np.empty(0),
            np.concatenate(intra) if intra else np.empty(0))

