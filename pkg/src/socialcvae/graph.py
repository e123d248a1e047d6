"""Star interaction graph around the target agent and message passing over it."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import tensor as T
from .scene import AGENT_CLASSES, PastWindow, Scene
from .tensor import Tensor

EDGE_DIM = 4
N_KINDS = len(AGENT_CLASSES) + 1  # agent classes plus the environment node
ENV_KIND = N_KINDS - 1
DEFAULT_GRAPH_RADIUS = 10.0


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class Node:
    """Raw node input: past displacements for agents, the env descriptor for the environment."""

    agent_id: int | None
    kind: int
    values: np.ndarray

    @property
    def is_environment(self) -> bool:
        return self.kind == ENV_KIND


@dataclass(frozen=True)
class Edge:
    source: int
    target: int
    feature: np.ndarray


@dataclass(frozen=True)
class InteractionGraph:
    """Node 0 is the target, then neighbours by ascending agent id, then the environment node.

    Every edge points at node 0 and edges are stored in node order.
    """

    nodes: tuple[Node, ...]
    edges: tuple[Edge, ...]

    @property
    def neighbor_ids(self) -> tuple[int, ...]:
        return tuple(n.agent_id for n in self.nodes[1:] if not n.is_environment)

    @property
    def env_index(self) -> int:
        return len(self.nodes) - 1


def past_displacements(past: PastWindow) -> np.ndarray:
    """Flattened ``tau - 1`` step displacements of a past window."""
    return np.diff(past.as_array(), axis=0).reshape(-1)


def build_graph(scene: Scene, pasts: Sequence[PastWindow], env: np.ndarray,
                radius_m: float = DEFAULT_GRAPH_RADIUS) -> InteractionGraph:
    """Target node, in-radius neighbours (ascending id) and one environment node.

    Edge features are ``[dx, dy, dvx, dvy]``: the source's position and
    velocity relative to the target at the last observed step.  The
    environment edge carries zeros since the descriptor is pooled at the
    target itself.
    """
    k = scene.target_index
    if not 0 <= k < len(scene.tracks):
        raise GraphError(f"target index {k} out of range for {len(scene.tracks)} agents")
    if len(pasts) != len(scene.tracks):
        raise GraphError(f"got {len(pasts)} past windows for {len(scene.tracks)} agents")
    if not radius_m > 0:
        raise GraphError("radius_m must be positive")
    dt = scene.dt

    def last_state(past: PastWindow) -> tuple[np.ndarray, np.ndarray]:
        xy = past.as_array()
        return xy[-1], (xy[-1] - xy[-2]) / dt

    tgt_pos, tgt_vel = last_state(pasts[k])
    kind = {c: i for i, c in enumerate(AGENT_CLASSES)}
    target = scene.tracks[k]
    nodes = [Node(target.agent_id, kind[target.agent_class], past_displacements(pasts[k]))]
    edges = []

    others = sorted((i for i in range(len(scene.tracks)) if i != k), key=lambda i: scene.tracks[i].agent_id)
    for i in others:
        pos, vel = last_state(pasts[i])
        rel = pos - tgt_pos
        if float(np.hypot(rel[0], rel[1])) > radius_m:
            continue
        tr = scene.tracks[i]
        nodes.append(Node(tr.agent_id, kind[tr.agent_class], past_displacements(pasts[i])))
        edges.append(Edge(len(nodes) - 1, 0, np.concatenate([rel, vel - tgt_vel])))

    nodes.append(Node(None, ENV_KIND, np.asarray(env, dtype=np.float64)))
    edges.append(Edge(len(nodes) - 1, 0, np.zeros(EDGE_DIM)))
    return InteractionGraph(tuple(nodes), tuple(edges))


def graph_param_shapes(d_traj: int, d_env: int, d_node: int, d_hidden: int, d_y: int) -> dict[str, tuple[int, ...]]:
    d_state = d_node + N_KINDS
    d_msg_in = d_state + EDGE_DIM + d_state
    return {
        "traj.W": (d_node, d_traj), "traj.b": (d_node,),
        "env.W": (d_node, d_env), "env.b": (d_node,),
        "msg.0.W": (d_hidden, d_msg_in), "msg.0.b": (d_hidden,),
        "msg.1.W": (d_state, d_hidden), "msg.1.b": (d_state,),
        "upd.W": (d_state, 2 * d_state), "upd.b": (d_state,),
        "out.W": (d_y, d_state), "out.b": (d_y,),
    }


def check_shapes(params: Mapping[str, Tensor], expected: Mapping[str, tuple[int, ...]]) -> None:
    for name, shape in expected.items():
        if name not in params:
            raise T.ShapeError(f"missing parameter {name!r} (expected shape {shape})")
        if params[name].shape != tuple(shape):
            raise T.ShapeError(f"parameter {name!r} has shape {params[name].shape}, expected {tuple(shape)}")


ACTIVATIONS = {"tanh": T.tanh, "identity": lambda x: x}


def _activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}") from None


def _embed(node: Node, params: Mapping[str, Tensor], act) -> Tensor:
    prefix = "env" if node.is_environment else "traj"
    onehot = np.zeros(N_KINDS)
    onehot[node.kind] = 1.0
    hidden = act(params[prefix + ".W"] @ Tensor(node.values) + params[prefix + ".b"])
    return T.concat([hidden, Tensor(onehot)])


def message_passing(graph: InteractionGraph, params: Mapping[str, Tensor], rounds: int = 2,
                    activation: str = "tanh") -> Tensor:
    """Social feature of the target after ``rounds`` of message passing.

    Each edge's message is a two-layer perceptron of (source state, edge
    feature, current target state); messages are summed in stored edge order
    and added to the target state through a residual update.  The final state
    is projected linearly to the social feature.
    """
    if rounds < 1:
        raise ValueError("rounds must be positive")
    act = _activation(activation)
    d_node, d_traj = params["traj.W"].shape
    expected = graph_param_shapes(d_traj, params["env.W"].shape[1], d_node,
                                  params["msg.0.W"].shape[0], params["out.W"].shape[0])
    check_shapes(params, expected)
    for node in graph.nodes:
        want = expected["env.W" if node.is_environment else "traj.W"][1]
        if node.values.shape != (want,):
            raise T.ShapeError(f"node input has shape {node.values.shape}, expected ({want},)")

    sources = {e.source: _embed(graph.nodes[e.source], params, act) for e in graph.edges}
    h = _embed(graph.nodes[0], params, act)
    for _ in range(rounds):
        total = None
        for e in graph.edges:
            x = T.concat([sources[e.source], Tensor(e.feature), h])
            hid = act(params["msg.0.W"] @ x + params["msg.0.b"])
            m = params["msg.1.W"] @ hid + params["msg.1.b"]
            total = m if total is None else total + m
        h = h + act(params["upd.W"] @ T.concat([h, total]) + params["upd.b"])
    return params["out.W"] @ h + params["out.b"]
