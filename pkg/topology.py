"""
Topology - Grafos canónicos de dispositivos y patrones, registro de la flota
y enumeración exhaustiva de embebimientos de subgrafos
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
from networkx.algorithms import isomorphism
from treelib import Tree


DEVICE_KINDS = ("L5", "T5", "H7")
PATTERN_NAMES = ("P1", "L2", "L3", "L4", "T4", "L5p", "T5p")
FLEET_FORMAT_VERSION = 1

# Acoplamientos canónicos (dirección baja -> alta)
_CANONICAL_COUPLINGS: Dict[str, Tuple[int, Tuple[Tuple[int, int], ...]]] = {
    "L5": (5, ((0, 1), (1, 2), (2, 3), (3, 4))),
    "T5": (5, ((0, 1), (1, 2), (1, 3), (3, 4))),
    "H7": (7, ((0, 1), (1, 2), (1, 3), (3, 5), (4, 5), (5, 6))),
}

# Caminos numerados a lo largo del camino; el centro de la garra es el vértice 0
_PATTERN_EDGES: Dict[str, Tuple[int, Tuple[Tuple[int, int], ...]]] = {
    "P1": (1, ()),
    "L2": (2, ((0, 1),)),
    "L3": (3, ((0, 1), (1, 2))),
    "L4": (4, ((0, 1), (1, 2), (2, 3))),
    "T4": (4, ((0, 1), (0, 2), (0, 3))),
    "L5p": (5, ((0, 1), (1, 2), (2, 3), (3, 4))),
    "T5p": (5, ((0, 1), (1, 2), (1, 3), (3, 4))),
}


@dataclass(frozen=True)
class DeviceTopology:
    """Grafo de acoplamiento dirigido de un dispositivo"""
    device_id: str
    kind: str
    num_qubits: int
    couplings: Tuple[Tuple[int, int], ...]

    def undirected(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.num_qubits))
        graph.add_edges_from(self.couplings)
        return graph

    def has_coupling(self, a: int, b: int) -> bool:
        return (min(a, b), max(a, b)) in self.couplings

    def distances(self) -> Dict[int, Dict[int, int]]:
        return dict(nx.all_pairs_shortest_path_length(self.undirected()))

    def to_dict(self) -> dict:
        return {
            "device_id": self.device_id,
            "kind": self.kind,
            "couplings": [list(c) for c in self.couplings],
        }


@dataclass(frozen=True)
class PatternTopology:
    """Topología de un circuito de prueba"""
    name: str
    vertices: int
    edges: Tuple[Tuple[int, int], ...]

    def undirected(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.vertices))
        graph.add_edges_from(self.edges)
        return graph


@dataclass(frozen=True)
class Embedding:
    """Mapeo inyectivo: vértice del patrón -> qubit del dispositivo"""
    pattern: str
    device_id: str
    vertex_map: Tuple[int, ...]

    def image(self) -> Set[int]:
        return set(self.vertex_map)

    def inverse(self) -> Dict[int, int]:
        return {qubit: vertex for vertex, qubit in enumerate(self.vertex_map)}

    def label(self) -> str:
        return f"{self.device_id}:{'-'.join(str(q) for q in self.vertex_map)}"

    def to_dict(self) -> dict:
        return {"pattern": self.pattern, "device_id": self.device_id,
                "vertex_map": list(self.vertex_map)}

    @classmethod
    def from_dict(cls, data: dict) -> "Embedding":
        return cls(data["pattern"], data["device_id"], tuple(int(q) for q in data["vertex_map"]))


@dataclass(frozen=True)
class Fleet:
    """Flota de 9 dispositivos (3 por tipo)"""
    devices: Tuple[DeviceTopology, ...]
    fleet_seed: int

    def device(self, device_id: str) -> DeviceTopology:
        for device in self.devices:
            if device.device_id == device_id:
                return device
        raise KeyError(f"Dispositivo desconocido: {device_id}")

    def device_index(self, device_id: str) -> int:
        return [d.device_id for d in self.devices].index(device_id)

    def to_dict(self) -> dict:
        return {
            "format_version": FLEET_FORMAT_VERSION,
            "fleet_seed": self.fleet_seed,
            "devices": [d.to_dict() for d in self.devices],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Fleet":
        devices = []
        for entry in data["devices"]:
            device = canonical_topology(entry["kind"], entry["device_id"])
            stored = tuple(tuple(c) for c in entry["couplings"])
            if stored != device.couplings:
                raise ValueError(f"Acoplamientos no canónicos para {entry['device_id']}")
            devices.append(device)
        fleet = cls(devices=tuple(devices), fleet_seed=int(data["fleet_seed"]))
        validate_fleet(fleet)
        return fleet


@dataclass(frozen=True)
class TopologyDependency:
    """Grafo mínimo que soporta todas las compuertas de un conjunto de circuitos"""
    vertices: Tuple[int, ...]
    edges: Tuple[Tuple[int, int], ...]


def canonical_topology(kind: str, device_id: str) -> DeviceTopology:
    """Retorna el grafo canónico para el tipo de dispositivo"""

    if kind not in _CANONICAL_COUPLINGS:
        raise ValueError(f"Tipo de dispositivo no soportado: {kind}")
    num_qubits, couplings = _CANONICAL_COUPLINGS[kind]
    return DeviceTopology(device_id=device_id, kind=kind, num_qubits=num_qubits,
                          couplings=couplings)


def pattern_topology(name: str) -> PatternTopology:
    """Retorna el patrón con su etiquetado canónico"""

    if name not in _PATTERN_EDGES:
        raise ValueError(f"Patrón no soportado: {name}")
    vertices, edges = _PATTERN_EDGES[name]
    return PatternTopology(name=name, vertices=vertices, edges=edges)


def build_fleet(fleet_seed: int) -> Fleet:
    """Construye la flota d0..d8: tres L5, tres T5 y tres H7"""

    devices = []
    for kind_index, kind in enumerate(DEVICE_KINDS):
        for copy in range(3):
            devices.append(canonical_topology(kind, f"d{kind_index * 3 + copy}"))
    fleet = Fleet(devices=tuple(devices), fleet_seed=int(fleet_seed))
    validate_fleet(fleet)
    return fleet


def validate_fleet(fleet: Fleet) -> None:
    """Verifica composición de la flota y que cada dispositivo sea un árbol"""

    ids = [d.device_id for d in fleet.devices]
    if len(fleet.devices) != 9:
        raise ValueError(f"La flota debe tener 9 dispositivos, tiene {len(fleet.devices)}")
    if len(set(ids)) != len(ids):
        raise ValueError(f"device_id duplicados: {ids}")
    counts = {kind: sum(1 for d in fleet.devices if d.kind == kind) for kind in DEVICE_KINDS}
    if counts != {"L5": 3, "T5": 3, "H7": 3}:
        raise ValueError(f"Composición de flota inválida: {counts}")
    for device in fleet.devices:
        if not nx.is_tree(device.undirected()):
            raise ValueError(f"El dispositivo {device.device_id} no es un árbol")


def is_embedding(pattern: PatternTopology, device: DeviceTopology,
                 vertex_map: Sequence[int]) -> bool:
    """Chequeo independiente: inyectividad y preservación de aristas"""

    if len(vertex_map) != pattern.vertices or len(set(vertex_map)) != len(vertex_map):
        return False
    if any(q < 0 or q >= device.num_qubits for q in vertex_map):
        return False
    return all(device.has_coupling(vertex_map[u], vertex_map[v]) for u, v in pattern.edges)


def topology_dependency(specs: Iterable) -> TopologyDependency:
    """Dependencia topológica: todos los qubits tocados y los pares usados por compuertas de dos qubits"""

    vertices: Set[int] = set()
    edges: Set[Tuple[int, int]] = set()
    for spec in specs:
        driven = tuple(spec.drive.qubits)
        vertices.update(driven)
        vertices.update(spec.prep.keys())
        vertices.update(spec.meas.keys())
        if len(driven) == 2:
            edges.add((min(driven), max(driven)))
    return TopologyDependency(vertices=tuple(sorted(vertices)), edges=tuple(sorted(edges)))


class EmbeddingResolver:
    """Enumera los embebimientos de un patrón sobre la flota"""

    def __init__(self):
        self.logger = logging.getLogger(__name__)

    def enumerate_device(self, pattern: PatternTopology, device: DeviceTopology) -> List[Embedding]:
        """Todos los monomorfismos del patrón en un dispositivo, en orden lexicográfico"""

        matcher = isomorphism.GraphMatcher(device.undirected(), pattern.undirected())
        maps = set()
        for mapping in matcher.subgraph_monomorphisms_iter():
            inverse = {vertex: qubit for qubit, vertex in mapping.items()}
            maps.add(tuple(inverse[v] for v in range(pattern.vertices)))
        return [Embedding(pattern.name, device.device_id, m) for m in sorted(maps)]

    def enumerate_embeddings(self, pattern: PatternTopology, fleet: Fleet) -> List[Embedding]:
        """Enumera en orden de dispositivo y luego vertex_map lexicográfico"""

        embeddings: List[Embedding] = []
        for device in fleet.devices:
            embeddings.extend(self.enumerate_device(pattern, device))
        self.logger.debug(f"Patrón {pattern.name}: {len(embeddings)} embebimientos")
        return embeddings

    def census(self, fleet: Fleet, patterns: Sequence[str] = PATTERN_NAMES) -> Dict[str, Dict[str, int]]:
        """Conteo de embebimientos por patrón y dispositivo"""

        result = {}
        for name in patterns:
            pattern = pattern_topology(name)
            result[name] = {d.device_id: len(self.enumerate_device(pattern, d)) for d in fleet.devices}
        return result

    def create_embedding_tree(self, pattern: PatternTopology, fleet: Fleet,
                              embeddings: Optional[List[Embedding]] = None) -> Tree:
        """Crea un árbol visual flota -> dispositivo -> embebimientos"""

        embeddings = embeddings if embeddings is not None else self.enumerate_embeddings(pattern, fleet)
        tree = Tree()
        tree.create_node(f"Patrón {pattern.name} ({len(embeddings)} embebimientos)", "root")

        for device in fleet.devices:
            own = [(i, e) for i, e in enumerate(embeddings) if e.device_id == device.device_id]
            device_node = f"dev_{device.device_id}"
            tree.create_node(f"{device.device_id} [{device.kind}] ({len(own)})", device_node, parent="root")
            for index, embedding in own:
                mapping = ", ".join(f"{v}->{q}" for v, q in enumerate(embedding.vertex_map))
                tree.create_node(f"#{index:03d} {mapping}", f"emb_{index}", parent=device_node)

        return tree
