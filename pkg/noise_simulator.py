"""
Noise Simulator - Modelo de error de referencia por dispositivo con deriva por lote
y muestreo exacto de resultados de tomografía en reposo (sustituto del hardware)
"""

import logging
import zlib
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from scipy.spatial.transform import Rotation
from treelib import Tree

from run_config import (NoiseConfig, DriftConfig,
                        derive_seed, FLEET_MODEL, DRIFT)
from topology import DeviceTopology, Fleet


AXES = ("x", "y", "z")
AXIS_INDEX = {"x": 0, "y": 1, "z": 2}
MODEL_FORMAT_VERSION = 1

logger = logging.getLogger(__name__)


def element_key(qubits: Sequence[int]) -> str:
    """Clave estable de un elemento de manejo: 'single:q' o 'pair:c-t'"""
    if len(qubits) == 1:
        return f"single:{qubits[0]}"
    return f"pair:{qubits[0]}-{qubits[1]}"


def parse_prep(prep: str) -> Tuple[float, int]:
    """'+x' -> (1.0, 0); '-z' -> (-1.0, 2)"""
    if len(prep) != 2 or prep[0] not in "+-" or prep[1] not in AXIS_INDEX:
        raise ValueError(f"Eje de preparación inválido: {prep!r}")
    return (1.0 if prep[0] == "+" else -1.0), AXIS_INDEX[prep[1]]


def parse_meas(meas: str) -> int:
    if meas not in AXIS_INDEX:
        raise ValueError(f"Eje de medición inválido: {meas!r}")
    return AXIS_INDEX[meas]


@dataclass(frozen=True)
class QubitRates:
    """Tasas por paso: hamiltoniana h, estocástica s y afín a (vectores x, y, z)"""
    h: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    s: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    a: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_list(self) -> List[float]:
        return list(self.h) + list(self.s) + list(self.a)

    @classmethod
    def from_list(cls, values: Sequence[float]) -> "QubitRates":
        v = [float(x) for x in values]
        return cls(h=tuple(v[0:3]), s=tuple(v[3:6]), a=tuple(v[6:9]))

    def scaled(self, factor: float) -> "QubitRates":
        return QubitRates.from_list([factor * x for x in self.to_list()])

    def plus(self, other: "QubitRates") -> "QubitRates":
        return QubitRates.from_list([x + y for x, y in zip(self.to_list(), other.to_list())])

    def contraction(self) -> np.ndarray:
        """d_w = 1 - 2 (s_u + s_v)"""
        s = np.asarray(self.s)
        return 1.0 - 2.0 * (s.sum() - s)

    def step_map(self) -> Tuple[np.ndarray, np.ndarray]:
        """Mapa de Bloch de un paso: r <- R(2h) diag(d) r + a"""
        rotation = Rotation.from_rotvec(2.0 * np.asarray(self.h)).as_matrix()
        return rotation @ np.diag(self.contraction()), np.asarray(self.a, dtype=float)

    def with_valid_affine(self) -> "QubitRates":
        """Recorta el vector afín a ||a|| <= 1 - max d para que la bola de Bloch quede contenida"""
        cap = max(0.0, 1.0 - float(self.contraction().max()))
        norm = float(np.linalg.norm(self.a))
        if norm <= cap or norm == 0.0:
            return self
        return replace(self, a=tuple(float(x) * cap / norm for x in self.a))

    def to_dict(self) -> dict:
        return {"h": list(self.h), "s": list(self.s), "a": list(self.a)}


@dataclass(frozen=True)
class ErrorModel:
    """Tasas de error de referencia (ambiente + crosstalk) de un dispositivo"""
    device_id: str
    num_qubits: int
    couplings: Tuple[Tuple[int, int], ...]
    ambient: Tuple[QubitRates, ...]
    crosstalk: Dict[Tuple[str, int], QubitRates] = field(default_factory=dict)
    pair_ambient: Dict[Tuple[int, int], float] = field(default_factory=dict)
    pair_crosstalk: Dict[Tuple[str, Tuple[int, int]], float] = field(default_factory=dict)
    duration_ratio: float = 2.3

    def to_vector(self) -> np.ndarray:
        """Vector plano de tasas en orden canónico"""
        values: List[float] = []
        for rates in self.ambient:
            values.extend(rates.to_list())
        for rates in self.crosstalk.values():
            values.extend(rates.to_list())
        values.extend(self.pair_ambient.values())
        values.extend(self.pair_crosstalk.values())
        return np.asarray(values, dtype=float)

    def with_vector(self, vector: np.ndarray) -> "ErrorModel":
        """Reconstruye el modelo con los valores de un vector plano (misma estructura)"""
        v = [float(x) for x in vector]
        pos = 0

        def take(n):
            nonlocal pos
            chunk = v[pos:pos + n]
            pos += n
            return chunk

        ambient = tuple(QubitRates.from_list(take(9)) for _ in self.ambient)
        crosstalk = {key: QubitRates.from_list(take(9)) for key in self.crosstalk}
        pair_ambient = {key: take(1)[0] for key in self.pair_ambient}
        pair_crosstalk = {key: take(1)[0] for key in self.pair_crosstalk}
        if pos != len(v):
            raise ValueError("Vector de tasas con dimensión incorrecta")
        return replace(self, ambient=ambient, crosstalk=crosstalk,
                       pair_ambient=pair_ambient, pair_crosstalk=pair_crosstalk)

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "num_qubits": self.num_qubits,
            "couplings": [list(c) for c in self.couplings],
            "duration_ratio": self.duration_ratio,
            "ambient": [dict(qubit=q, **r.to_dict()) for q, r in enumerate(self.ambient)],
            "crosstalk": [dict(drive=k, qubit=q, **r.to_dict()) for (k, q), r in self.crosstalk.items()],
            "pair_ambient": [{"pair": list(p), "lambda": lam} for p, lam in self.pair_ambient.items()],
            "pair_crosstalk": [{"drive": k, "pair": list(p), "lambda": lam}
                               for (k, p), lam in self.pair_crosstalk.items()],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorModel":
        def rates(entry):
            return QubitRates(h=tuple(entry["h"]), s=tuple(entry["s"]), a=tuple(entry["a"]))

        return cls(
            device_id=data["device_id"],
            num_qubits=int(data["num_qubits"]),
            couplings=tuple(tuple(c) for c in data["couplings"]),
            ambient=tuple(rates(e) for e in data["ambient"]),
            crosstalk={(e["drive"], int(e["qubit"])): rates(e) for e in data["crosstalk"]},
            pair_ambient={tuple(e["pair"]): float(e["lambda"]) for e in data["pair_ambient"]},
            pair_crosstalk={(e["drive"], tuple(e["pair"])): float(e["lambda"])
                            for e in data["pair_crosstalk"]},
            duration_ratio=float(data["duration_ratio"]),
        )


@dataclass(frozen=True)
class BatchParams:
    """Tasas efectivas de un dispositivo en un lote (modelo x jitter multiplicativo)"""
    device_id: str
    batch_index: int
    rates: ErrorModel
    multipliers: Tuple[float, ...] = ()


@dataclass(frozen=True)
class CountRecord:
    """Conteos de resultados de espectadores para un circuito"""
    circuit_id: str
    spec: object
    shots: int
    counts: Dict[str, int]

    def to_dict(self) -> dict:
        return {"circuit_id": self.circuit_id, "shots": self.shots, "counts": dict(self.counts)}


class NoiseSimulator:
    """Genera modelos de error de la flota y simula los circuitos de tomografía"""

    def __init__(self, config: Optional[NoiseConfig] = None):
        self.config = (config or NoiseConfig()).validate()
        self.logger = logging.getLogger(__name__)

    def _draw_rates(self, rng: np.random.Generator, factor: float) -> QubitRates:
        """Sortea tasas de un qubit en los rangos configurados y escala por factor"""

        cfg = self.config
        h = rng.choice((-1.0, 1.0), size=3) * rng.uniform(*cfg.h_range, size=3)
        s = rng.uniform(*cfg.s_range, size=3)
        a = rng.choice((-1.0, 1.0), size=3) * rng.uniform(*cfg.a_range, size=3)

        # Presupuesto afín: ||a|| <= margen * 2 * min_w t_w
        t = s.sum() - s
        cap = cfg.affine_margin * 2.0 * float(t.min())
        norm = float(np.linalg.norm(a))
        if norm > cap:
            a = a * (cap / norm) if norm > 0 else a
        return QubitRates(h=tuple(float(x) for x in factor * h),
                          s=tuple(float(x) for x in factor * s),
                          a=tuple(float(x) for x in factor * a))

    def generate_device_model(self, device: DeviceTopology, rng: np.random.Generator) -> ErrorModel:
        """Modelo de error de un dispositivo: ambiente, crosstalk decreciente y pares"""

        cfg = self.config
        distances = device.distances()
        ambient = tuple(self._draw_rates(rng, 1.0) for _ in range(device.num_qubits))

        elements = [(q,) for q in range(device.num_qubits)] + [tuple(c) for c in device.couplings]
        crosstalk: Dict[Tuple[str, int], QubitRates] = {}
        pair_crosstalk: Dict[Tuple[str, Tuple[int, int]], float] = {}

        for element in elements:
            key = element_key(element)
            for qubit in range(device.num_qubits):
                if qubit in element:
                    continue
                d = min(distances[qubit][e] for e in element)
                crosstalk[(key, qubit)] = self._draw_rates(rng, cfg.gamma ** d)
            for pair in device.couplings:
                if pair[0] in element or pair[1] in element:
                    continue
                d = min(distances[p][e] for p in pair for e in element)
                pair_crosstalk[(key, tuple(pair))] = float(cfg.gamma ** d * rng.uniform(*cfg.lambda_range))

        pair_ambient = {tuple(pair): float(rng.uniform(*cfg.lambda_range)) for pair in device.couplings}

        return ErrorModel(device_id=device.device_id, num_qubits=device.num_qubits,
                          couplings=device.couplings, ambient=ambient, crosstalk=crosstalk,
                          pair_ambient=pair_ambient, pair_crosstalk=pair_crosstalk,
                          duration_ratio=cfg.duration_ratio)

    def generate_fleet_model(self, fleet: Fleet, seed: int) -> List[ErrorModel]:
        """Un modelo independiente por dispositivo, determinista en (fleet_seed, seed)"""

        models = []
        for index, device in enumerate(fleet.devices):
            rng = np.random.default_rng(derive_seed((fleet.fleet_seed, seed), FLEET_MODEL, index))
            models.append(self.generate_device_model(device, rng))
            self.logger.debug(f"Modelo generado para {device.device_id}")
        self.logger.info(f"Modelos de error generados para {len(models)} dispositivos")
        return models


def generate_fleet_model(fleet: Fleet, noise_config: Optional[NoiseConfig], seed: int) -> List[ErrorModel]:
    """Atajo funcional de NoiseSimulator.generate_fleet_model"""
    return NoiseSimulator(noise_config).generate_fleet_model(fleet, seed)


def batch_params(model: ErrorModel, batch_index: int, drift_config: Optional[DriftConfig],
                 seed: int) -> BatchParams:
    """Aplica jitter lognormal de media 1 y, con probabilidad p_cal, un evento de calibración"""

    drift = drift_config or DriftConfig()
    base = model.to_vector()
    n = base.size
    device_tag = zlib.crc32(model.device_id.encode("utf-8"))
    rng = np.random.default_rng(derive_seed(seed, DRIFT, device_tag, batch_index))

    # Siempre se consume el mismo número de sorteos para mantener estables los flujos
    z = rng.standard_normal(n)
    calibration_draw = rng.random()
    z_cal = rng.standard_normal(n)

    if not drift.enabled:
        return BatchParams(model.device_id, batch_index, model, tuple([1.0] * n))

    sigma = drift.sigma
    log_mult = sigma * z - 0.5 * sigma ** 2
    if calibration_draw < drift.calibration_probability:
        sc = drift.calibration_sigma
        log_mult = log_mult + sc * z_cal - 0.5 * sc ** 2
        logger.debug(f"Evento de calibración en {model.device_id}, lote {batch_index}")
    multipliers = np.exp(log_mult)

    if sigma == 0.0 and (drift.calibration_probability == 0.0 or drift.calibration_sigma == 0.0):
        return BatchParams(model.device_id, batch_index, model, tuple([1.0] * n))

    return BatchParams(model.device_id, batch_index, model.with_vector(base * multipliers),
                       tuple(float(m) for m in multipliers))


def _duration(model: ErrorModel, drive) -> float:
    return model.duration_ratio if drive.kind in ("pair", "control_pair") else 1.0


def _rates_of(params) -> ErrorModel:
    return params.rates if isinstance(params, BatchParams) else params


def effective_rates(params, drive, qubit: int) -> QubitRates:
    """Tasas por paso de un espectador: ambiente escalado por duración + crosstalk del elemento"""

    model = _rates_of(params)
    rates = model.ambient[qubit].scaled(_duration(model, drive))
    increment = model.crosstalk.get((drive.key, qubit))
    if increment is not None:
        rates = rates.plus(increment)
    return rates.with_valid_affine()


def effective_pair_rate(params, drive, pair: Tuple[int, int]) -> float:
    """lambda efectiva de un par de espectadores adyacentes bajo un manejo"""

    model = _rates_of(params)
    pair = (min(pair), max(pair))
    lam = model.pair_ambient.get(pair, 0.0) * _duration(model, drive)
    lam += model.pair_crosstalk.get((drive.key, pair), 0.0)
    return float(lam)


def pair_factor(params, drive, pair: Tuple[int, int], s: int) -> float:
    """Contracción del marginal por eventos de par: (1 - 2 lambda)^s"""
    return float((1.0 - 2.0 * effective_pair_rate(params, drive, pair)) ** s)


def is_valid_channel(rates: QubitRates, samples: int = 100, seed: int = 0) -> bool:
    """Verifica numéricamente que el mapa de un paso lleva la bola unitaria dentro de sí"""

    transfer, affine = rates.step_map()
    points = [np.eye(3)[i] * sign for i in range(3) for sign in (1.0, -1.0)]
    rng = np.random.default_rng(seed)
    random_points = rng.standard_normal((samples, 3))
    random_points /= np.linalg.norm(random_points, axis=1, keepdims=True)
    points.extend(random_points)
    return all(np.linalg.norm(transfer @ p + affine) <= 1.0 + 1e-12 for p in points)


def bloch_trajectory(rates: QubitRates, prep: str, s: int) -> np.ndarray:
    """Vector de Bloch tras s pasos partiendo del estado preparado"""

    sign, axis = parse_prep(prep)
    transfer, affine = rates.step_map()
    r = np.zeros(3)
    r[axis] = sign
    for _ in range(int(s)):
        r = transfer @ r + affine
    return r


def expectation(params, qubit: int, prep: str, meas: str, drive, s: int) -> float:
    """Valor esperado exacto del eje medido tras s pasos de reposo"""

    if s < 0:
        raise ValueError(f"Longitud de reposo negativa: {s}")
    if qubit in tuple(drive.qubits):
        raise ValueError(f"El qubit {qubit} está siendo manejado, no es espectador")
    meas_axis = parse_meas(meas)
    r = bloch_trajectory(effective_rates(params, drive, qubit), prep, s)
    return float(np.clip(r[meas_axis], -1.0, 1.0))


def spectator_forest(couplings: Sequence[Tuple[int, int]], spectators: Sequence[int]) -> List[Tree]:
    """Bosque de espectadores enraizado en el menor qubit de cada componente"""

    graph = nx.Graph()
    graph.add_nodes_from(spectators)
    graph.add_edges_from((a, b) for a, b in couplings if a in graph and b in graph)

    forest = []
    for component in sorted((sorted(c) for c in nx.connected_components(graph)), key=lambda c: c[0]):
        root = component[0]
        tree = Tree()
        tree.create_node(f"q{root}", root)
        for parent, child in nx.bfs_edges(graph, root, sort_neighbors=sorted):
            tree.create_node(f"q{child}", child, parent=parent)
        forest.append(tree)
    return forest


def simulate_counts(params: BatchParams, spec, shots: int, seed: int) -> CountRecord:
    """Muestrea la distribución conjunta exacta de los espectadores

    Cada espectador invierte su signo con su propio sesgo (1 - m_i)/2 y cada par
    adyacente con (1 - c_p)/2; los sorteos se hacen de la raíz a las hojas del
    bosque de espectadores.
    """

    if spec.device_id != params.device_id:
        raise ValueError(f"Circuito de {spec.device_id} aplicado a {params.device_id}")
    if shots < 1:
        raise ValueError(f"shots debe ser >= 1 (recibido {shots})")

    model = params.rates
    spectators = sorted(spec.prep.keys())
    if any(q < 0 or q >= model.num_qubits for q in spectators):
        raise ValueError(f"Espectadores fuera del dispositivo {spec.device_id}: {spectators}")

    column = {q: i for i, q in enumerate(spectators)}
    means = {q: expectation(params, q, spec.prep[q], spec.meas[q], spec.drive, spec.idle_length)
             for q in spectators}

    rng = np.random.default_rng(seed)
    signs = np.ones((shots, len(spectators)), dtype=np.int8)

    for tree in spectator_forest(model.couplings, spectators):
        for node in tree.expand_tree(mode=Tree.WIDTH, key=lambda n: n.identifier):
            flip = rng.random(shots) < (1.0 - means[node]) / 2.0
            signs[flip, column[node]] *= -1
            for child in sorted(c.identifier for c in tree.children(node)):
                c_p = pair_factor(params, spec.drive, (node, child), spec.idle_length)
                joint = rng.random(shots) < (1.0 - c_p) / 2.0
                signs[joint, column[node]] *= -1
                signs[joint, column[child]] *= -1

    counts = _bitstring_counts(signs)
    return CountRecord(circuit_id=spec.circuit_id, spec=spec, shots=int(shots), counts=counts)


def _bitstring_counts(signs: np.ndarray) -> Dict[str, int]:
    """Agrupa los disparos en bitstrings ('0' <-> +1), carácter k <-> k-ésimo espectador"""

    shots, width = signs.shape
    if width == 0:
        return {"": int(shots)}
    bits = (signs < 0).astype(np.int64)
    weights = 1 << np.arange(width - 1, -1, -1, dtype=np.int64)
    values, counts = np.unique(bits @ weights, return_counts=True)
    return {format(int(v), f"0{width}b"): int(c) for v, c in zip(values, counts)}
