"""
Classifier - Estandarización, PCA, el clasificador MLP de localidades,
la referencia de centroide más cercano y los reportes de precisión
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn
from sklearn.decomposition import PCA
from sklearn.metrics import accuracy_score, confusion_matrix
from sklearn.neighbors import NearestCentroid
from sklearn.preprocessing import StandardScaler

from run_config import TrainingHyper
from fingerprint import Fingerprint, FingerprintDataset, LayoutMismatchError
from topology import Embedding


MODEL_FORMAT_VERSION = 1

logger = logging.getLogger(__name__)


class TrainingError(ValueError):
    """Pérdida no finita durante el entrenamiento"""


@dataclass
class Standardizer:
    """Media y desviación por característica (solo datos de entrenamiento)"""
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        scaler = StandardScaler().fit(X)
        # StandardScaler deja escala 1 en columnas constantes
        return cls(mean=np.array(scaler.mean_, dtype=float),
                   scale=np.maximum(np.array(scaler.scale_, dtype=float), 1e-12))

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.scale

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Standardizer":
        return cls(mean=np.asarray(data["mean"], dtype=float), scale=np.asarray(data["scale"], dtype=float))


@dataclass
class PcaModel:
    """Componentes principales retenidas (filas ortonormales)"""
    mean: np.ndarray
    components: np.ndarray
    explained_variance_ratio: np.ndarray

    @property
    def retained(self) -> int:
        return int(self.components.shape[0])

    @classmethod
    def fit(cls, Z: np.ndarray, variance_target: float = 0.95) -> "PcaModel":
        """Retiene el menor m cuya varianza explicada acumulada alcanza el objetivo"""

        pca = PCA(svd_solver="full").fit(Z)
        ratios = np.asarray(pca.explained_variance_ratio_, dtype=float)
        cumulative = np.cumsum(ratios)
        m = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
        m = min(m, ratios.size)
        return cls(mean=np.asarray(pca.mean_, dtype=float),
                   components=np.asarray(pca.components_[:m], dtype=float),
                   explained_variance_ratio=ratios[:m])

    def transform(self, Z: np.ndarray) -> np.ndarray:
        return (np.asarray(Z, dtype=float) - self.mean) @ self.components.T

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "components": self.components.tolist(),
                "explained_variance_ratio": self.explained_variance_ratio.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "PcaModel":
        return cls(mean=np.asarray(data["mean"], dtype=float),
                   components=np.asarray(data["components"], dtype=float),
                   explained_variance_ratio=np.asarray(data["explained_variance_ratio"], dtype=float))


class Preprocessing(NamedTuple):
    standardizer: Standardizer
    pca: PcaModel

    def transform(self, X: np.ndarray) -> np.ndarray:
        return self.pca.transform(self.standardizer.transform(X))

    def state_hash(self) -> str:
        """Hash del estado ajustado; transformar datos nunca lo modifica"""
        digest = hashlib.sha1()
        for array in (self.standardizer.mean, self.standardizer.scale, self.pca.mean, self.pca.components):
            digest.update(np.ascontiguousarray(array).tobytes())
        return digest.hexdigest()


def fit_preprocess(train: FingerprintDataset, variance_target: float = 0.95) -> Preprocessing:
    """Estandarizador y PCA ajustados solo con el conjunto de entrenamiento"""

    X, _ = train.matrix()
    if X.shape[0] < 2:
        raise ValueError(f"Se requieren al menos 2 muestras para ajustar PCA ({X.shape[0]})")
    if np.allclose(X, X[0]):
        raise ValueError(f"Datos degenerados: todas las muestras de {train.pattern} son idénticas")

    standardizer = Standardizer.fit(X)
    pca = PcaModel.fit(standardizer.transform(X), variance_target)
    logger.debug(f"PCA {train.pattern}: {pca.retained} de {X.shape[1]} componentes retenidas")
    return Preprocessing(standardizer, pca)


@dataclass
class MlpModel:
    """Red densa m -> u (sigmoide) -> dropout -> k (lineal)"""
    network: nn.Sequential
    pattern: str
    layout_hash: str
    classes: List[Embedding]
    hidden_units: int
    dropout: float
    training_log: List[float] = field(default_factory=list)
    converged: bool = False

    @property
    def input_dim(self) -> int:
        return int(self.network[0].in_features)

    @property
    def num_classes(self) -> int:
        return int(self.network[3].out_features)

    def to_dict(self) -> dict:
        weights = []
        for name, param in self.network.state_dict().items():
            weights.append({"name": name, "shape": list(param.shape),
                            "values": param.detach().cpu().numpy().ravel().tolist()})
        return {
            "pattern": self.pattern,
            "layout_hash": self.layout_hash,
            "classes": [e.to_dict() for e in self.classes],
            "input_dim": self.input_dim,
            "hidden_units": self.hidden_units,
            "num_classes": self.num_classes,
            "dropout": self.dropout,
            "training_log": list(self.training_log),
            "converged": self.converged,
            "weights": weights,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MlpModel":
        network = build_network(int(data["input_dim"]), int(data["hidden_units"]),
                                int(data["num_classes"]), float(data["dropout"]))
        state = {w["name"]: torch.tensor(w["values"], dtype=torch.float64).reshape(w["shape"])
                 for w in data["weights"]}
        network.load_state_dict(state)
        return cls(network=network, pattern=data["pattern"], layout_hash=data["layout_hash"],
                   classes=[Embedding.from_dict(e) for e in data["classes"]],
                   hidden_units=int(data["hidden_units"]), dropout=float(data["dropout"]),
                   training_log=[float(x) for x in data["training_log"]],
                   converged=bool(data["converged"]))


@dataclass
class AccuracyReport:
    """Precisión específica de dispositivo y de embebimiento"""
    pattern: str
    train_batches: Tuple[int, ...]
    test_batches: Tuple[int, ...]
    device_accuracy: float
    embedding_accuracy: float
    confusion: np.ndarray
    method: str = "mlp"


def build_network(input_dim: int, hidden_units: int, num_classes: int, dropout: float) -> nn.Sequential:
    return nn.Sequential(
        nn.Linear(input_dim, hidden_units),
        nn.Sigmoid(),
        nn.Dropout(dropout),
        nn.Linear(hidden_units, num_classes),
    ).double()


def _init_glorot(network: nn.Sequential) -> None:
    for layer in network:
        if isinstance(layer, nn.Linear):
            nn.init.xavier_uniform_(layer.weight)
            nn.init.zeros_(layer.bias)


def loss_and_gradients(network: nn.Sequential, inputs: np.ndarray,
                       targets: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """Entropía cruzada (softmax) y sus gradientes con dropout desactivado"""

    network.eval()
    network.zero_grad()
    x = torch.as_tensor(np.asarray(inputs), dtype=torch.float64)
    y = torch.as_tensor(np.asarray(targets), dtype=torch.long)
    loss = nn.functional.cross_entropy(network(x), y)
    loss.backward()
    grads = [p.grad.detach().numpy().copy() for p in network.parameters()]
    network.zero_grad()
    return float(loss.item()), grads


def train_mlp(train: FingerprintDataset, prep: Preprocessing, hyper: Optional[TrainingHyper] = None,
              seed: int = 0) -> MlpModel:
    """Entrena en conjuntos de épocas hasta que la pérdida de la última época baje del umbral"""

    hyper = hyper or TrainingHyper()
    X, y = train.matrix()
    if X.shape[0] == 0:
        raise ValueError(f"Conjunto de entrenamiento vacío para {train.pattern}")

    inputs = torch.as_tensor(prep.transform(X), dtype=torch.float64)
    targets = torch.as_tensor(y, dtype=torch.long)
    hidden = len(train.layout)

    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(int(seed))
        network = build_network(inputs.shape[1], hidden, train.num_classes, hyper.dropout)
        _init_glorot(network)
        optimizer = torch.optim.Adam(network.parameters(), lr=hyper.learning_rate,
                                     betas=(hyper.beta1, hyper.beta2), eps=hyper.epsilon)
        loss_fn = nn.CrossEntropyLoss()
        model = MlpModel(network=network, pattern=train.pattern, layout_hash=train.layout_hash,
                         classes=list(train.classes), hidden_units=hidden, dropout=hyper.dropout)

        network.train()
        for set_index in range(hyper.max_sets):
            for epoch in range(hyper.epochs_per_set):
                order = torch.randperm(inputs.shape[0])
                optimizer.zero_grad()
                loss = loss_fn(network(inputs[order]), targets[order])
                if not torch.isfinite(loss):
                    raise TrainingError(
                        f"Pérdida no finita en {train.pattern}: conjunto {set_index}, época {epoch}, "
                        f"pérdidas previas {model.training_log[-5:]}")
                loss.backward()
                optimizer.step()

            final_loss = float(loss.item())
            model.training_log.append(final_loss)
            logger.debug(f"{train.pattern}: conjunto {set_index + 1}, pérdida {final_loss:.5f}")
            if final_loss < hyper.loss_threshold:
                model.converged = True
                break

    network.eval()
    if not model.converged:
        logger.warning(f"{train.pattern}: tope de {hyper.max_sets} conjuntos alcanzado "
                       f"(pérdida final {model.training_log[-1]:.4f})")
    else:
        logger.info(f"{train.pattern}: entrenamiento convergió en {len(model.training_log)} conjuntos")
    return model


def _scores(model: MlpModel, prep: Preprocessing, X: np.ndarray) -> np.ndarray:
    model.network.eval()
    with torch.no_grad():
        inputs = torch.as_tensor(prep.transform(np.atleast_2d(X)), dtype=torch.float64)
        return model.network(inputs).numpy()


def predict(model: MlpModel, prep: Preprocessing, fingerprint: Fingerprint) -> Tuple[int, np.ndarray]:
    """Clase con la mayor salida lineal; empates para el menor índice"""

    if fingerprint.layout_hash != model.layout_hash:
        raise LayoutMismatchError(
            f"La huella ({fingerprint.frame_id}, dim {fingerprint.dimension}) no corresponde "
            f"al modelo de {model.pattern}")
    scores = _scores(model, prep, fingerprint.features)[0]
    return int(np.argmax(scores)), scores


def _report(dataset: FingerprintDataset, train_batches: Sequence[int], y_true: np.ndarray,
            y_pred: np.ndarray, method: str) -> AccuracyReport:
    devices = np.array(dataset.class_devices())
    return AccuracyReport(
        pattern=dataset.pattern,
        train_batches=tuple(int(b) for b in train_batches),
        test_batches=tuple(dataset.batches()),
        device_accuracy=float(np.mean(devices[y_pred] == devices[y_true])),
        embedding_accuracy=float(accuracy_score(y_true, y_pred)),
        confusion=confusion_matrix(y_true, y_pred, labels=list(range(dataset.num_classes))),
        method=method,
    )


def evaluate(model: MlpModel, prep: Preprocessing, test: FingerprintDataset,
             train_batches: Sequence[int] = ()) -> AccuracyReport:
    """Precisión exacta de embebimiento y precisión de mismo dispositivo"""

    if test.layout_hash != model.layout_hash:
        raise LayoutMismatchError(f"Dataset {test.pattern} con disposición distinta a la del modelo")
    X, y = test.matrix()
    if X.shape[0] == 0:
        raise ValueError(f"Conjunto de prueba vacío para {test.pattern}")
    predictions = np.argmax(_scores(model, prep, X), axis=1)
    return _report(test, train_batches, y, predictions, "mlp")


def nearest_centroid(train: FingerprintDataset, test: FingerprintDataset) -> AccuracyReport:
    """Referencia: centroide por clase en el espacio estandarizado"""

    X_train, y_train = train.matrix()
    X_test, y_test = test.matrix()
    if X_test.shape[0] == 0:
        raise ValueError(f"Conjunto de prueba vacío para {test.pattern}")
    empty = sorted(set(range(train.num_classes)) - set(y_train.tolist()))
    if empty:
        raise ValueError(f"Clases sin muestras de entrenamiento en {train.pattern}: {empty}")

    standardizer = Standardizer.fit(X_train)
    centroids = NearestCentroid().fit(standardizer.transform(X_train), y_train)
    predictions = np.asarray(centroids.predict(standardizer.transform(X_test)), dtype=int)
    return _report(test, train.batches(), y_test, predictions, "centroid")
