"""
Run Config - Configuración completa de una corrida de huellas de crosstalk
Opciones por módulo, carga desde JSON, valores por defecto de referencia
y derivación jerárquica de semillas
"""

import json
import logging
import os
from dataclasses import dataclass, field, fields, asdict, is_dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np

from topology import PATTERN_NAMES


OUTPUT_ENV_VAR = "XTALKPRINT_OUT"
DEFAULT_OUTPUT_DIR = "salida"

# Componentes de la jerarquía de semillas: componente -> dispositivo -> lote -> circuito
FLEET_MODEL = 1
DRIFT = 2
SAMPLING = 3
TRAINING = 4


class ConfigError(ValueError):
    """Configuración inválida"""


class NoiseConfigError(ConfigError):
    """Rangos de ruido que violan los invariantes de un canal válido"""


def derive_seed(master: Union[int, Sequence[int]], component: int, *path: int) -> int:
    """Deriva una semilla de 32 bits a partir de la semilla maestra y la ruta jerárquica"""

    entropy = [int(m) for m in master] if isinstance(master, (tuple, list)) else int(master)
    sequence = np.random.SeedSequence(entropy=entropy,
                                      spawn_key=(int(component),) + tuple(int(p) for p in path))
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


@dataclass
class NoiseConfig:
    """Distribuciones de tasas por paso para el modelo de error de referencia"""
    h_range: Tuple[float, float] = (0.001, 0.02)
    s_range: Tuple[float, float] = (0.0005, 0.01)
    a_range: Tuple[float, float] = (0.001, 0.02)
    lambda_range: Tuple[float, float] = (0.0005, 0.005)
    gamma: float = 0.4
    duration_ratio: float = 2.3
    affine_margin: float = 0.8

    def validate(self) -> "NoiseConfig":
        """Rechaza rangos que romperían los invariantes de QubitRates"""

        problems = []
        for name in ("h_range", "s_range", "a_range", "lambda_range"):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                problems.append(f"{name} inválido: {(lo, hi)}")
        if not 0.0 <= self.gamma < 1.0:
            problems.append(f"gamma debe estar en [0, 1): {self.gamma}")
        if self.duration_ratio <= 0:
            problems.append(f"duration_ratio debe ser positivo: {self.duration_ratio}")
        if not 0.0 <= self.affine_margin <= 1.0:
            problems.append(f"affine_margin debe estar en [0, 1]: {self.affine_margin}")

        # Peor caso compuesto: ambiente escalado por rho más el incremento de crosstalk
        scale = max(self.duration_ratio, 1.0) + self.gamma
        if self.s_range[1] * scale > 0.25 or 3 * self.s_range[1] * scale > 0.5:
            problems.append(f"s_range demasiado grande para un canal válido: {self.s_range}")
        if self.a_range[1] > 0.05:
            problems.append(f"a_range excede 0.05: {self.a_range}")
        if self.lambda_range[1] * scale > 0.1:
            problems.append(f"lambda_range demasiado grande: {self.lambda_range}")

        if problems:
            raise NoiseConfigError("; ".join(problems))
        return self


@dataclass
class DriftConfig:
    """Deriva por lote: jitter lognormal y eventos de calibración"""
    sigma: float = 0.05
    calibration_probability: float = 0.2
    calibration_sigma: float = 0.15
    enabled: bool = True


@dataclass
class IdtConfig:
    """Programa de tomografía en reposo"""
    idle_lengths: Tuple[int, ...] = (1, 2, 4, 8)
    shots: int = 2048
    analytic: bool = False


@dataclass
class TrainingHyper:
    """Hiperparámetros del clasificador MLP"""
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    dropout: float = 0.2
    epochs_per_set: int = 100
    loss_threshold: float = 0.05
    max_sets: int = 50


@dataclass
class RunConfig:
    """Opciones de una corrida completa (enrolamiento, entrenamiento y evaluación)"""
    seed: int = 7
    fleet_seed: Optional[int] = None
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    drift: DriftConfig = field(default_factory=DriftConfig)
    idt: IdtConfig = field(default_factory=IdtConfig)
    training: TrainingHyper = field(default_factory=TrainingHyper)
    batches: int = 9
    patterns: Tuple[str, ...] = PATTERN_NAMES
    train_batches: Tuple[int, ...] = (0, 1, 2)
    test_batches: Tuple[int, ...] = (3, 4, 5, 6, 7, 8)
    variance_target: float = 0.95
    jobs: int = 4
    output_dir: str = DEFAULT_OUTPUT_DIR

    def __post_init__(self):
        self.patterns = tuple(self.patterns)
        self.train_batches = tuple(int(b) for b in self.train_batches)
        self.test_batches = tuple(int(b) for b in self.test_batches)

    @property
    def effective_fleet_seed(self) -> int:
        """fleet_seed explícito o, si no se fijó, la semilla maestra"""
        return self.seed if self.fleet_seed is None else int(self.fleet_seed)

    @property
    def shots(self) -> int:
        return self.idt.shots

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)

    def validate(self) -> "RunConfig":
        """Verifica los invariantes de la configuración y retorna self"""

        problems = []
        if self.idt.shots < 1:
            problems.append(f"shots debe ser >= 1 (recibido {self.idt.shots})")
        if self.batches < 1:
            problems.append(f"batches debe ser >= 1 (recibido {self.batches})")
        if not self.idt.idle_lengths or any(int(s) < 1 for s in self.idt.idle_lengths):
            problems.append(f"idle_lengths inválido: {self.idt.idle_lengths}")
        for name, split in (("train_batches", self.train_batches), ("test_batches", self.test_batches)):
            bad = [b for b in split if b < 0 or b >= self.batches]
            if bad:
                problems.append(f"{name} referencia lotes inexistentes: {bad}")
            if not split:
                problems.append(f"{name} está vacío (lotes: {self.batches})")
        unknown = [p for p in self.patterns if p not in PATTERN_NAMES]
        if unknown:
            problems.append(f"Patrones desconocidos: {unknown}")
        if not 0.0 < self.variance_target <= 1.0:
            problems.append(f"variance_target fuera de (0, 1]: {self.variance_target}")
        if self.jobs < 1:
            problems.append(f"jobs debe ser >= 1 (recibido {self.jobs})")

        if problems:
            raise ConfigError("; ".join(problems))

        self.noise.validate()
        return self

    def with_overrides(self, seed: Optional[int] = None, out: Optional[str] = None,
                       batches: Optional[int] = None, jobs: Optional[int] = None) -> "RunConfig":
        """Aplica la variable de entorno de salida y luego las banderas de línea de comandos"""

        env_out = os.environ.get(OUTPUT_ENV_VAR)
        if env_out:
            self.output_dir = env_out
        if out:
            self.output_dir = out
        if seed is not None:
            self.seed = seed
        if batches is not None:
            self.batches = batches
            self.train_batches = tuple(b for b in self.train_batches if b < batches)
            self.test_batches = tuple(b for b in self.test_batches if b < batches)
        if jobs is not None:
            self.jobs = jobs
        return self

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        return _build_dataclass(cls, data, "config")

    @classmethod
    def from_json(cls, path: str) -> "RunConfig":
        """Carga la configuración desde un archivo JSON"""

        logger = logging.getLogger(__name__)
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"No se pudo leer la configuración {path}: {e}") from e

        logger.info(f"Configuración cargada desde: {path}")
        return cls.from_dict(data)


def _build_dataclass(cls, data: Dict[str, Any], where: str):
    """Construye un dataclass anidado rechazando claves desconocidas"""

    if not isinstance(data, dict):
        raise ConfigError(f"Se esperaba un objeto JSON en '{where}'")

    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"Claves desconocidas en '{where}': {unknown}")

    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        if is_dataclass(current):
            kwargs[name] = _build_dataclass(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple) and isinstance(value, list):
            kwargs[name] = tuple(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path: Optional[str] = None) -> RunConfig:
    """Carga la configuración desde archivo o retorna los valores por defecto"""
    return RunConfig.from_json(path) if path else RunConfig()
