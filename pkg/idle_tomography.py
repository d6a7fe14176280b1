"""
Idle Tomography - Genera la batería de experimentos de tomografía en reposo
y estima las tasas de error de peso 1 y peso 2 a partir de los conteos
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm, logm

from run_config import IdtConfig
from noise_simulator import (AXES, BatchParams, CountRecord, element_key, expectation,
                             pair_factor, simulate_counts)


WEIGHT1_SOURCES = (
    "hamiltonian_x", "hamiltonian_y", "hamiltonian_z",
    "stochastic_x", "stochastic_y", "stochastic_z",
    "affine_x", "affine_y", "affine_z",
)
PAIR_SOURCE = "pair_lambda"
VAR_FLOOR = 1e-12

# (v, w) para cada h_u: L_vw - L_wv = 4 h_u s
_HAMILTONIAN_ENTRIES = {"x": (2, 1), "y": (0, 2), "z": (1, 0)}

logger = logging.getLogger(__name__)


class ScheduleError(ValueError):
    """Programa de experimentos inválido o insuficiente para un ajuste"""


class MissingScheduleError(ScheduleError):
    """Faltan celdas (prep, meas, s) del programa"""


@dataclass(frozen=True)
class DriveSpec:
    """Manejo de un circuito: H en un qubit, CNOT en un acoplamiento o grupo de control"""
    kind: str
    qubits: Tuple[int, ...] = ()

    @property
    def gate(self) -> str:
        return {"single": "H", "pair": "CNOT"}.get(self.kind, "I")

    @property
    def key(self) -> str:
        if self.kind in ("single", "pair"):
            return element_key(self.qubits)
        return self.kind

    @classmethod
    def single(cls, qubit: int) -> "DriveSpec":
        return cls("single", (int(qubit),))

    @classmethod
    def pair(cls, control: int, target: int) -> "DriveSpec":
        return cls("pair", (int(control), int(target)))

    @classmethod
    def from_key(cls, key: str) -> "DriveSpec":
        if key in ("control_single", "control_pair"):
            return cls(key)
        kind, qubits = key.split(":")
        return cls(kind, tuple(int(q) for q in qubits.split("-")))


@dataclass(frozen=True)
class IdtCircuitSpec:
    """Un circuito de tomografía en reposo"""
    device_id: str
    drive: DriveSpec
    prep: Dict[int, str]
    meas: Dict[int, str]
    idle_length: int
    circuit_id: str = ""
    couplings: Tuple[Tuple[int, int], ...] = ()

    @property
    def spectators(self) -> Tuple[int, ...]:
        return tuple(sorted(self.prep))

    @property
    def setting(self) -> Tuple[str, str, int]:
        """(prep, meas, s) uniforme sobre todos los espectadores"""
        first = self.spectators[0]
        return self.prep[first], self.meas[first], self.idle_length

    def to_dict(self) -> dict:
        return {
            "circuit_id": self.circuit_id,
            "device_id": self.device_id,
            "drive": self.drive.key,
            "gate": self.drive.gate,
            "prep": {str(q): p for q, p in sorted(self.prep.items())},
            "meas": {str(q): m for q, m in sorted(self.meas.items())},
            "idle_length": self.idle_length,
        }


def circuit_hash(device_id: str, drive: DriveSpec, prep: Dict[int, str], meas: Dict[int, str],
                 idle_length: int) -> str:
    payload = json.dumps([device_id, drive.key, sorted(prep.items()), sorted(meas.items()), idle_length])
    return hashlib.sha1(payload.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class RateEstimate:
    """Tasa estimada para (manejo, objetivo, fuente)"""
    value: float
    std_err: float
    source: str
    drive: str = ""
    target: Tuple[int, ...] = ()
    clamped: bool = False

    @property
    def cell(self) -> Tuple[str, Tuple[int, ...], str]:
        return self.drive, self.target, self.source


@dataclass(frozen=True)
class SlopeFit:
    intercept: float
    slope: float
    slope_std_err: float


@dataclass
class CircuitSummary:
    """Momentos de un circuito: medias por espectador y productos de pares adyacentes"""
    spec: IdtCircuitSpec
    shots: Optional[int]
    means: Dict[int, float]
    variances: Dict[int, float]
    pair_products: Dict[Tuple[int, int], float] = field(default_factory=dict)
    pair_variances: Dict[Tuple[int, int], float] = field(default_factory=dict)


def drive_order(num_qubits: int, couplings: Sequence[Tuple[int, int]]) -> List[DriveSpec]:
    """Individuales por índice, pares por orden de acoplamiento y luego los dos controles"""

    drives = [DriveSpec.single(q) for q in range(num_qubits)]
    drives += [DriveSpec.pair(min(c), max(c)) for c in couplings]
    drives += [DriveSpec("control_single"), DriveSpec("control_pair")]
    return drives


def spectators_of(drive: DriveSpec, num_qubits: int) -> List[int]:
    return [q for q in range(num_qubits) if q not in drive.qubits]


def _graph_shape(topology) -> Tuple[str, int, Tuple[Tuple[int, int], ...]]:
    """(identificador, número de qubits, acoplamientos) de un dispositivo o de un patrón"""
    if hasattr(topology, "device_id"):
        return topology.device_id, topology.num_qubits, tuple(topology.couplings)
    return topology.name, topology.vertices, tuple(topology.edges)


def generate_experiments(topology, config: Optional[IdtConfig] = None) -> List[IdtCircuitSpec]:
    """Genera el programa completo de la batería de tomografía para una topología"""

    config = config or IdtConfig()
    idle_lengths = tuple(int(s) for s in config.idle_lengths)
    if not idle_lengths:
        raise ScheduleError("El conjunto de longitudes de reposo S está vacío")

    specs = []
    owner, num_qubits, edges = _graph_shape(topology)
    for drive in drive_order(num_qubits, edges):
        spectators = spectators_of(drive, num_qubits)
        if not spectators:
            continue
        couplings = tuple(tuple(c) for c in edges
                          if c[0] in spectators and c[1] in spectators)
        for s in idle_lengths:
            settings = [(f"+{w}", v) for w in AXES for v in AXES] + [(f"-{w}", w) for w in AXES]
            for prep_axis, meas_axis in settings:
                prep = {q: prep_axis for q in spectators}
                meas = {q: meas_axis for q in spectators}
                specs.append(IdtCircuitSpec(
                    device_id=owner, drive=drive, prep=prep, meas=meas, idle_length=s,
                    circuit_id=circuit_hash(owner, drive, prep, meas, s),
                    couplings=couplings))
    return specs


def fit_slope(series: Iterable[Tuple[float, float, float]]) -> SlopeFit:
    """Recta por mínimos cuadrados ponderados; peso = inverso de la varianza de cada punto"""

    points = [(float(s), float(v), float(w)) for s, v, w in series]
    x = np.array([p[0] for p in points])
    if len(points) < 2 or np.unique(x).size < 2:
        raise ScheduleError(f"Se requieren al menos 2 valores distintos de s: {sorted(set(x.tolist()))}")
    y = np.array([p[1] for p in points])
    w = np.array([p[2] for p in points])

    coef, cov = np.polyfit(x, y, 1, w=np.sqrt(w), cov="unscaled")
    return SlopeFit(intercept=float(coef[1]), slope=float(coef[0]),
                    slope_std_err=float(np.sqrt(max(cov[0, 0], 0.0))))


def _weight(variance: float) -> float:
    return 1.0 / max(float(variance), VAR_FLOOR)


def summarize_counts(record: CountRecord) -> CircuitSummary:
    """Medias empíricas por espectador y productos de pares a partir de los bitstrings"""

    spec = record.spec
    spectators = spec.spectators
    shots = record.shots
    outcomes = np.array([[1.0 if bit == "0" else -1.0 for bit in bits] for bits in record.counts])
    weights = np.array(list(record.counts.values()), dtype=float) / shots

    means, variances = {}, {}
    for k, q in enumerate(spectators):
        m = float(weights @ outcomes[:, k])
        means[q] = m
        variances[q] = max(1.0 - m * m, 1.0 / shots) / shots

    products, product_vars = {}, {}
    position = {q: k for k, q in enumerate(spectators)}
    for pair in _spectator_pairs(spec):
        i, j = position[pair[0]], position[pair[1]]
        p = float(weights @ (outcomes[:, i] * outcomes[:, j]))
        products[pair] = p
        product_vars[pair] = max(1.0 - p * p, 1.0 / shots) / shots

    return CircuitSummary(spec=spec, shots=shots, means=means, variances=variances,
                          pair_products=products, pair_variances=product_vars)


def analytic_summary(params: BatchParams, spec: IdtCircuitSpec) -> CircuitSummary:
    """Momentos exactos (disparos infinitos) del modelo para un circuito"""

    s = spec.idle_length
    own = {q: expectation(params, q, spec.prep[q], spec.meas[q], spec.drive, s) for q in spec.spectators}
    pairs = _spectator_pairs(spec)
    factors = {pair: pair_factor(params, spec.drive, pair, s) for pair in pairs}

    def incident(q, skip=None):
        value = 1.0
        for pair, c in factors.items():
            if q in pair and pair != skip:
                value *= c
        return value

    means = {q: own[q] * incident(q) for q in spec.spectators}
    products = {(i, j): own[i] * own[j] * incident(i, (i, j)) * incident(j, (i, j)) for i, j in pairs}
    return CircuitSummary(spec=spec, shots=None, means=means,
                          variances={q: 0.0 for q in means}, pair_products=products,
                          pair_variances={p: 0.0 for p in products})


def _spectator_pairs(spec: IdtCircuitSpec) -> List[Tuple[int, int]]:
    spectators = set(spec.spectators)
    return [tuple(c) for c in spec.couplings if c[0] in spectators and c[1] in spectators]


def _settings_table(summaries: Sequence[CircuitSummary]) -> Dict[Tuple[str, str, int], CircuitSummary]:
    """Indexa los resúmenes de un manejo por (prep, meas, s)"""

    table = {}
    drives = set()
    for summary in summaries:
        drives.add(summary.spec.drive.key)
        table[summary.spec.setting] = summary
    if len(drives) > 1:
        raise ScheduleError(f"Resúmenes de manejos distintos mezclados: {sorted(drives)}")
    return table


def _matrix_log(matrix: np.ndarray) -> np.ndarray:
    """Logaritmo principal de la matriz de transferencia; si no es finito se usa K - I"""

    value = logm(matrix)
    if np.all(np.isfinite(value)) and np.abs(np.imag(value)).max() < 1e-6:
        return np.real(value)
    logger.warning("Logaritmo matricial no finito, se usa la aproximación lineal K - I")
    return matrix - np.eye(3)


def estimate_weight2(summaries: Sequence[CircuitSummary], pair: Tuple[int, int]) -> RateEstimate:
    """Estima lambda de un par adyacente con las celdas z-z

    El cociente <w_i><w_j> / <w_i w_j> = (1 - 2 lambda)^(2s) no depende de las
    tasas de peso 1 ni de los otros pares incidentes.
    """

    pair = (min(pair), max(pair))
    if not summaries:
        raise MissingScheduleError(f"Sin resúmenes para el par {pair}")
    spec = summaries[0].spec
    if pair not in {tuple(c) for c in spec.couplings}:
        raise ScheduleError(f"El par {pair} no es un acoplamiento entre espectadores de {spec.drive.key}")

    table = _settings_table(summaries)
    series = []
    for (prep, meas, s), summary in sorted(table.items(), key=lambda item: item[0][2]):
        if prep != "+z" or meas != "z":
            continue
        i, j = pair
        product = summary.pair_products[pair]
        mi, mj = summary.means[i], summary.means[j]
        covariance = product - mi * mj
        if product <= 0 or 1.0 - covariance / product <= 0:
            logger.warning(f"Cociente no positivo para el par {pair} con s={s}, se descarta el punto")
            continue
        ratio = 1.0 - covariance / product
        variance = (summary.pair_variances[pair] + mj ** 2 * summary.variances[i]
                    + mi ** 2 * summary.variances[j]) / (product ** 2 * ratio ** 2)
        series.append((s, -np.log(ratio), _weight(variance)))

    if len({s for s, _, _ in series}) < 2:
        raise MissingScheduleError(f"Faltan celdas z-z válidas para el par {pair}")

    fit = fit_slope(series)
    value = (1.0 - np.exp(-fit.slope / 2.0)) / 2.0
    std_err = float(np.exp(-fit.slope / 2.0) / 4.0 * fit.slope_std_err)
    clamped = value < 0
    return RateEstimate(value=max(float(value), 0.0), std_err=std_err, source=PAIR_SOURCE,
                        drive=spec.drive.key, target=pair, clamped=bool(clamped))


def estimate_weight1(summaries: Sequence[CircuitSummary], qubit: int,
                     incident_lambdas: Sequence[float] = ()) -> List[RateEstimate]:
    """Estima las 9 tasas de peso 1 de un espectador

    Por cada s se arma M[v, w] (medición v tras preparar +w), se separa la parte
    afín b con las preparaciones opuestas y se toma el logaritmo de K = M - b 1^T.
    La diagonal da las tasas de Pauli, la parte antisimétrica las hamiltonianas.
    """

    table = _settings_table(summaries)
    if not table:
        raise MissingScheduleError(f"Sin resúmenes para el qubit {qubit}")
    drive_key = next(iter(table.values())).spec.drive.key
    lengths = sorted({s for _, _, s in table})

    required = [(f"+{w}", v, s) for s in lengths for w in AXES for v in AXES]
    required += [(f"-{w}", w, s) for s in lengths for w in AXES]
    missing = [cell for cell in required if cell not in table]
    if missing:
        raise MissingScheduleError(f"Celdas faltantes para {drive_key}, qubit {qubit}: {missing}")

    log_pair = float(sum(np.log(1.0 - 2.0 * lam) for lam in incident_lambdas))
    affine, diagonal = {w: [] for w in AXES}, {w: [] for w in AXES}
    hamiltonian = {u: [] for u in AXES}

    for s in lengths:
        scale = np.exp(s * log_pair)
        M = np.empty((3, 3))
        V = np.empty((3, 3))
        for wi, w in enumerate(AXES):
            for vi, v in enumerate(AXES):
                summary = table[(f"+{w}", v, s)]
                M[vi, wi] = summary.means[qubit] / scale
                V[vi, wi] = summary.variances[qubit] / scale ** 2
        minus = np.array([table[(f"-{w}", w, s)].means[qubit] for w in AXES]) / scale
        var_minus = np.array([table[(f"-{w}", w, s)].variances[qubit] for w in AXES]) / scale ** 2

        b = (np.diag(M) + minus) / 2.0
        var_b = (np.diag(V) + var_minus) / 4.0
        K = M - b[:, None]
        var_K = V + var_b[:, None]
        L = _matrix_log(K)
        var_L = var_K / np.maximum(np.diag(K)[None, :] ** 2, 1e-6)

        # b(s) = sum_{k<s} T^k a, con T estimada como exp(L / s)
        step = _one_step(L, s)
        geometric = sum(np.linalg.matrix_power(step, k) for k in range(s))
        a_s = s * np.linalg.solve(geometric, b)

        for wi, w in enumerate(AXES):
            affine[w].append((s, a_s[wi], _weight(var_b[wi])))
            diagonal[w].append((s, L[wi, wi], _weight(var_L[wi, wi])))
        for u, (vi, wi) in _HAMILTONIAN_ENTRIES.items():
            hamiltonian[u].append((s, L[vi, wi] - L[wi, vi], _weight(var_L[vi, wi] + var_L[wi, vi])))

    estimates = []
    target = (int(qubit),)
    for u in AXES:
        fit = fit_slope(hamiltonian[u])
        estimates.append(RateEstimate(fit.slope / 4.0, fit.slope_std_err / 4.0,
                                      f"hamiltonian_{u}", drive_key, target))

    # t_w = s_u + s_v; se invierte para obtener cada s_w
    t_value, t_err = {}, {}
    for w in AXES:
        fit = fit_slope(diagonal[w])
        t_value[w] = (1.0 - np.exp(fit.slope)) / 2.0
        t_err[w] = np.exp(fit.slope) / 2.0 * fit.slope_std_err
    for wi, w in enumerate(AXES):
        u, v = AXES[(wi + 1) % 3], AXES[(wi + 2) % 3]
        value = (t_value[u] + t_value[v] - t_value[w]) / 2.0
        std_err = np.sqrt(t_err[u] ** 2 + t_err[v] ** 2 + t_err[w] ** 2) / 2.0
        estimates.append(RateEstimate(max(float(value), 0.0), float(std_err), f"stochastic_{w}",
                                      drive_key, target, clamped=bool(value < 0)))

    for w in AXES:
        fit = fit_slope(affine[w])
        estimates.append(RateEstimate(fit.slope, fit.slope_std_err, f"affine_{w}", drive_key, target))

    return estimates


def _one_step(log_matrix: np.ndarray, s: int) -> np.ndarray:
    """Mapa de un paso a partir del logaritmo del mapa de s pasos"""
    return expm(log_matrix / float(s))


def estimate_drive(summaries: Sequence[CircuitSummary]) -> List[RateEstimate]:
    """Todas las tasas de un manejo: primero lambda de cada par y luego peso 1 corregido"""

    if not summaries:
        return []
    spec = summaries[0].spec
    pairs = [tuple(c) for c in spec.couplings]
    pair_estimates = {pair: estimate_weight2(summaries, pair) for pair in pairs}

    estimates: List[RateEstimate] = []
    for qubit in spec.spectators:
        incident = [est.value for pair, est in pair_estimates.items() if qubit in pair]
        estimates.extend(estimate_weight1(summaries, qubit, incident))
    estimates.extend(pair_estimates[pair] for pair in pairs)
    return estimates


def group_by_drive(summaries: Iterable[CircuitSummary]) -> Dict[str, List[CircuitSummary]]:
    groups: Dict[str, List[CircuitSummary]] = {}
    for summary in summaries:
        groups.setdefault(summary.spec.drive.key, []).append(summary)
    return groups


class IdleTomography:
    """Ejecuta la batería de tomografía en reposo sobre un dispositivo simulado"""

    def __init__(self, config: Optional[IdtConfig] = None):
        self.config = config or IdtConfig()
        self.logger = logging.getLogger(__name__)

    def experiments(self, topology) -> List[IdtCircuitSpec]:
        specs = generate_experiments(topology, self.config)
        self.logger.debug(f"{len(specs)} circuitos generados para {topology.device_id}")
        return specs

    def measure(self, params: BatchParams, specs: Sequence[IdtCircuitSpec],
                seed_for: Callable[[int], int]) -> Tuple[List[CountRecord], List[CircuitSummary]]:
        """Simula (o calcula analíticamente) cada circuito y resume sus momentos

        seed_for recibe el índice del circuito y retorna la semilla de muestreo.
        """

        if self.config.analytic:
            return [], [analytic_summary(params, spec) for spec in specs]

        records, summaries = [], []
        for index, spec in enumerate(specs):
            record = simulate_counts(params, spec, self.config.shots, seed_for(index))
            records.append(record)
            summaries.append(summarize_counts(record))
        return records, summaries

    def estimate_suite(self, summaries: Sequence[CircuitSummary]) -> List[RateEstimate]:
        """Estima las tasas de todos los manejos presentes"""

        estimates: List[RateEstimate] = []
        for drive_key, group in group_by_drive(summaries).items():
            drive_estimates = estimate_drive(group)
            clamped = sum(1 for e in drive_estimates if e.clamped)
            if clamped:
                self.logger.debug(f"{drive_key}: {clamped} estimaciones recortadas a cero")
            estimates.extend(drive_estimates)
        return estimates
