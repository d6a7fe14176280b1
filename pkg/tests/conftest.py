"""
Fixtures compartidas: flota, modelos de error controlados, estimaciones sintéticas
y datasets de juguete
"""

import numpy as np
import pytest

from fingerprint import FeatureDescriptor, FingerprintDataset, DatasetSample, device_layout
from idle_tomography import RateEstimate
from noise_simulator import BatchParams, ErrorModel, QubitRates
from topology import Embedding, build_fleet


@pytest.fixture(scope="session")
def fleet():
    return build_fleet(7)


@pytest.fixture
def l5_device(fleet):
    return fleet.device("d0")


@pytest.fixture
def h7_device(fleet):
    return fleet.device("d6")


@pytest.fixture
def uniform_params():
    """Crea BatchParams con las mismas tasas de ambiente en cada qubit y sin crosstalk"""

    def factory(device, rates=QubitRates(), pair_lambda=0.0, duration_ratio=2.3):
        model = ErrorModel(
            device_id=device.device_id,
            num_qubits=device.num_qubits,
            couplings=device.couplings,
            ambient=tuple(rates for _ in range(device.num_qubits)),
            pair_ambient={tuple(c): pair_lambda for c in device.couplings},
            duration_ratio=duration_ratio,
        )
        return BatchParams(device.device_id, 0, model)

    return factory


@pytest.fixture
def random_estimates():
    """Estimaciones sintéticas que cubren exactamente la disposición de un dispositivo"""

    def factory(device, seed=0):
        rng = np.random.default_rng(seed)
        return [RateEstimate(value=float(rng.uniform(-0.02, 0.02)), std_err=1e-3, source=d.source,
                             drive=d.drive, target=d.target)
                for d in device_layout(device)]

    return factory


@pytest.fixture
def toy_dataset():
    """Dataset a partir de una matriz X, etiquetas y lotes"""

    def factory(X, y, batches=None, pattern="toy"):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=int)
        batches = np.zeros(len(y), dtype=int) if batches is None else np.asarray(batches)
        layout = tuple(FeatureDescriptor("control_single", (k,), "hamiltonian_x") for k in range(X.shape[1]))
        classes = [Embedding("P1", f"d{k}", (0,)) for k in range(int(y.max()) + 1)]
        samples = [DatasetSample(x, int(c), int(b)) for x, c, b in zip(X, y, batches)]
        return FingerprintDataset(pattern, classes, layout, samples)

    return factory

