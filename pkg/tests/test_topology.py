"""
Tests de topologías canónicas, flota y enumeración de embebimientos
"""

import itertools

import pytest

from topology import (Embedding, EmbeddingResolver, Fleet, PATTERN_NAMES, build_fleet,
                      canonical_topology, is_embedding, pattern_topology, topology_dependency)
from idle_tomography import generate_experiments
from run_config import IdtConfig


EXPECTED_CENSUS = {"P1": 51, "L2": 84, "L3": 84, "L4": 48, "T4": 54, "L5p": 30, "T5p": 18}


def brute_force_maps(pattern, device):
    """Oráculo independiente: todas las permutaciones que preservan aristas"""
    edges = {frozenset(c) for c in device.couplings}
    maps = []
    for candidate in itertools.permutations(range(device.num_qubits), pattern.vertices):
        if all(frozenset((candidate[u], candidate[v])) in edges for u, v in pattern.edges):
            maps.append(candidate)
    return sorted(maps)


# Flota

def test_fleet_composition(fleet):
    kinds = [d.kind for d in fleet.devices]
    assert [d.device_id for d in fleet.devices] == [f"d{i}" for i in range(9)]
    assert kinds == ["L5"] * 3 + ["T5"] * 3 + ["H7"] * 3


def test_fleet_from_dict_rejects_non_canonical_couplings(fleet):
    data = fleet.to_dict()
    data["devices"][0]["couplings"] = [[0, 1], [1, 2], [2, 3], [2, 4]]
    with pytest.raises(ValueError):
        Fleet.from_dict(data)


def test_unknown_kind_rejected():
    with pytest.raises(ValueError):
        canonical_topology("Q9", "dx")
    with pytest.raises(ValueError):
        pattern_topology("L9")


# Embebimientos

def test_census_matches_reference_counts(fleet):
    census = EmbeddingResolver().census(fleet)
    assert {name: sum(per_device.values()) for name, per_device in census.items()} == EXPECTED_CENSUS


@pytest.mark.parametrize("name", PATTERN_NAMES)
def test_enumeration_matches_brute_force(fleet, name):
    pattern = pattern_topology(name)
    resolver = EmbeddingResolver()
    for device in fleet.devices:
        found = [e.vertex_map for e in resolver.enumerate_device(pattern, device)]
        assert found == brute_force_maps(pattern, device)


def test_enumeration_order_is_device_then_lexicographic(fleet):
    embeddings = EmbeddingResolver().enumerate_embeddings(pattern_topology("L3"), fleet)
    keys = [(fleet.device_index(e.device_id), e.vertex_map) for e in embeddings]
    assert keys == sorted(keys)
    assert len(set(keys)) == len(keys)


def test_every_enumerated_map_is_an_embedding(fleet):
    resolver = EmbeddingResolver()
    for name in PATTERN_NAMES:
        pattern = pattern_topology(name)
        for embedding in resolver.enumerate_embeddings(pattern, fleet):
            assert is_embedding(pattern, fleet.device(embedding.device_id), embedding.vertex_map)


@pytest.mark.parametrize("name", ["L2", "L3", "L4", "L5p"])
def test_reversed_paths_are_distinct_embeddings_of_the_same_set(fleet, name):
    resolver = EmbeddingResolver()
    for device in fleet.devices:
        maps = [e.vertex_map for e in resolver.enumerate_device(pattern_topology(name), device)]
        reversed_maps = {tuple(reversed(m)) for m in maps}
        assert reversed_maps == set(maps)
        assert all(tuple(reversed(m)) != m for m in maps)


def test_is_embedding_rejects_bad_maps(l5_device):
    l3 = pattern_topology("L3")
    assert is_embedding(l3, l5_device, (0, 1, 2))
    assert not is_embedding(l3, l5_device, (0, 1, 0))
    assert not is_embedding(l3, l5_device, (0, 2, 1))
    assert not is_embedding(l3, l5_device, (3, 4, 5))


def test_embedding_label_and_inverse():
    embedding = Embedding("L3", "d6", (5, 3, 1))
    assert embedding.label() == "d6:5-3-1"
    assert embedding.inverse() == {5: 0, 3: 1, 1: 2}
    assert Embedding.from_dict(embedding.to_dict()) == embedding


def test_embedding_tree_structure(fleet):
    resolver = EmbeddingResolver()
    pattern = pattern_topology("L3")
    tree = resolver.create_embedding_tree(pattern, fleet)
    assert tree.size() == 1 + 9 + 84
    assert len(tree.children("root")) == 9


# Dependencia topológica

def test_topology_dependency_of_device_battery(l5_device):
    dependency = topology_dependency(generate_experiments(l5_device, IdtConfig()))
    assert dependency.vertices == (0, 1, 2, 3, 4)
    assert dependency.edges == l5_device.couplings


def test_topology_dependency_of_single_qubit_pattern():
    dependency = topology_dependency(generate_experiments(pattern_topology("P1"), IdtConfig()))
    assert dependency.vertices == (0,)
    assert dependency.edges == ()


def test_rebuilt_fleet_is_identical():
    assert build_fleet(3).to_dict() == Fleet.from_dict(build_fleet(3).to_dict()).to_dict()
