"""
Enrollment - Ejecuta la batería de tomografía sobre cada (dispositivo, lote),
estima las tasas y persiste conteos, estimaciones y huellas de dispositivo completo
"""

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional

from fingerprint import CoverageError, Fingerprint, assemble
from idle_tomography import IdleTomography, ScheduleError
from noise_simulator import ErrorModel, batch_params
from result_exporter import ResultExporter
from run_config import RunConfig, SAMPLING, derive_seed
from topology import DeviceTopology, Fleet


@dataclass
class EnrollmentProgress:
    """Estado del progreso de enrolamiento"""
    current_cell: str = ""
    cells_completed: int = 0
    cells_skipped: int = 0
    total_cells: int = 0
    errors: List[str] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    incomplete: List[str] = field(default_factory=list)
    start_time: Optional[float] = None
    estimated_remaining: Optional[float] = None

    @property
    def cells_done(self) -> int:
        return self.cells_completed + self.cells_skipped + len(self.incomplete)

    def copy(self) -> "EnrollmentProgress":
        return replace(self, errors=self.errors.copy(), warnings=self.warnings.copy(),
                       incomplete=self.incomplete.copy())


@dataclass
class EnrollmentOptions:
    """Opciones de ejecución del enrolamiento"""
    max_workers: int = 4
    resume: bool = True


class Enrollment:
    """Enrola la flota: lote por lote, un trabajo por (dispositivo, lote)"""

    def __init__(self, config: RunConfig, exporter: ResultExporter,
                 progress_callback: Optional[Callable[[EnrollmentProgress], None]] = None):
        self.config = config
        self.exporter = exporter
        self.progress_callback = progress_callback
        self.tomography = IdleTomography(config.idt)
        self.logger = logging.getLogger(__name__)

        self._current_progress = EnrollmentProgress()
        self._lock = threading.Lock()

    def enroll(self, fleet: Fleet, models: Dict[str, ErrorModel],
               options: Optional[EnrollmentOptions] = None) -> EnrollmentProgress:
        """Enrola todos los lotes configurados; retorna el progreso final"""

        options = options or EnrollmentOptions(max_workers=self.config.jobs)
        cells = [(device, b) for b in range(self.config.batches) for device in fleet.devices]
        missing_models = sorted({d.device_id for d, _ in cells} - set(models))
        if missing_models:
            raise ValueError(f"Modelos de error faltantes para: {missing_models}")

        with self._lock:
            self._current_progress = EnrollmentProgress(total_cells=len(cells), start_time=time.time())
        self.logger.info(f"Iniciando enrolamiento: {len(fleet.devices)} dispositivos x "
                         f"{self.config.batches} lotes")

        pending = []
        for device, batch_index in cells:
            if options.resume and self.exporter.is_complete(device.device_id, batch_index):
                with self._lock:
                    self._current_progress.cells_skipped += 1
                continue
            pending.append((device, batch_index))
        if len(pending) < len(cells):
            self.logger.info(f"Reanudando: {len(cells) - len(pending)} celdas ya completas")

        with ThreadPoolExecutor(max_workers=max(1, options.max_workers)) as executor:
            futures = {}
            for device, batch_index in pending:
                future = executor.submit(self._enroll_cell, device, fleet.device_index(device.device_id),
                                         models[device.device_id], batch_index)
                futures[future] = (device.device_id, batch_index)

            for future in as_completed(futures):
                device_id, batch_index = futures[future]
                label = f"{device_id}/batch_{batch_index}"
                try:
                    future.result()
                except Exception as e:
                    error_msg = f"Error en {label}: {str(e)}"
                    self.logger.error(error_msg)
                    with self._lock:
                        self._current_progress.errors.append(error_msg)
                        self._current_progress.incomplete.append(label)
                    self.exporter.write_status(device_id, batch_index, False, [str(e)])
                self._update_progress(label)

        with self._lock:
            progress = self._current_progress.copy()

        self.logger.info(f"Enrolamiento: {progress.cells_completed} celdas nuevas, "
                         f"{progress.cells_skipped} reutilizadas, {len(progress.incomplete)} incompletas")
        return progress

    def _enroll_cell(self, device: DeviceTopology, device_index: int, model: ErrorModel,
                     batch_index: int) -> Optional[Fingerprint]:
        """batch_params -> experimentos -> conteos -> estimaciones -> huella"""

        label = f"{device.device_id}/batch_{batch_index}"
        seed = self.config.seed
        self.exporter.write_status(device.device_id, batch_index, False, ["en curso"])

        params = batch_params(model, batch_index, self.config.drift, seed)
        specs = self.tomography.experiments(device)
        self.exporter.write_circuits(device.device_id, batch_index, specs)
        records, summaries = self.tomography.measure(
            params, specs, lambda i: derive_seed(seed, SAMPLING, device_index, batch_index, i))
        self.exporter.write_counts(device.device_id, batch_index, records)

        try:
            estimates = self.tomography.estimate_suite(summaries)
        except ScheduleError as e:
            self._mark_incomplete(device.device_id, batch_index, [str(e)])
            return None
        self.exporter.write_estimates(device.device_id, batch_index, estimates)

        clamped = sum(1 for e in estimates if e.clamped)
        if clamped:
            with self._lock:
                self._current_progress.warnings.append(f"{label}: {clamped} estimaciones recortadas")

        try:
            fingerprint = assemble(estimates, device, batch_index)
        except CoverageError as e:
            self._mark_incomplete(device.device_id, batch_index, [d.label() for d in e.missing])
            return None

        self.exporter.write_fingerprint(device.device_id, fingerprint)
        self.exporter.write_status(device.device_id, batch_index, True)
        with self._lock:
            self._current_progress.cells_completed += 1
        self.logger.debug(f"Celda {label} enrolada ({fingerprint.dimension} características)")
        return fingerprint

    def _mark_incomplete(self, device_id: str, batch_index: int, missing: List[str]):
        label = f"{device_id}/batch_{batch_index}"
        self.logger.warning(f"Batería incompleta en {label}: {len(missing)} celdas faltantes")
        self.exporter.write_status(device_id, batch_index, False, missing)
        with self._lock:
            self._current_progress.incomplete.append(label)

    def _update_progress(self, cell: str):
        """Registra la celda terminada y recalcula el tiempo restante"""
        with self._lock:
            progress = self._current_progress
            progress.current_cell = cell

            # Solo las celdas procesadas en esta corrida cuentan para la tasa
            processed = progress.cells_done - progress.cells_skipped
            if progress.start_time and processed > 0:
                rate = processed / max(time.time() - progress.start_time, 1e-9)
                progress.estimated_remaining = (progress.total_cells - progress.cells_done) / rate

        self._notify_progress()

    def _notify_progress(self):
        """Notifica el progreso actual al callback"""
        if self.progress_callback:
            with self._lock:
                progress_copy = self._current_progress.copy()
            try:
                self.progress_callback(progress_copy)
            except Exception as e:
                self.logger.error(f"Error en callback de progreso: {str(e)}")
