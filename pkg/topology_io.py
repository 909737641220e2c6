#!/usr/bin/env python3
"""
Topology, Traffic and Load File Parser
Reads and writes the line-oriented text formats:

    node  <id> <edge|inner>
    link  <id> <from> <to> <inner|edge|self> <observed:0|1>
    route <src> <dst> <link-id> <link-id> ...
    flow  <src> <dst> <value>          (traffic matrix; missing pairs are 0)
    load  <link-id> <value>            (snapshot; absent links are unobserved)

Blank lines and lines starting with '#' are ignored. Series directories
(truth + load snapshots over time) carry a manifest.json.
"""

import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DataFileError, InvalidInputError, TopologyParseError
from network_model import (
    LinkKind,
    LinkLoads,
    LinkSpec,
    NodeKind,
    SdIndex,
    Topology,
    TrafficVector,
    build_topology,
)

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
MANIFEST_NAME = "manifest.json"


def _lines(path: Path) -> Iterator[Tuple[int, List[str]]]:
    if not path.exists():
        raise DataFileError(f"file not found: {path}")
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise DataFileError(f"cannot read {path}: {e}") from e
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield line_no, line.split()


def _number(token: str, path: Path, line_no: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise TopologyParseError(f"'{token}' is not a number", str(path), line_no) from None
    if not math.isfinite(value) or value < 0:
        raise TopologyParseError(f"value {token} must be finite and nonnegative", str(path), line_no)
    return value


def _config_header(config: Optional[Mapping[str, Any]]) -> str:
    if not config:
        return ""
    return f"# config: {json.dumps(config, sort_keys=True, default=str)}\n"


class TopologyParser:
    """Parse and write topology, traffic-matrix and link-load files"""

    @staticmethod
    def read_topology(path: PathLike) -> Topology:
        """
        Read a topology + routing file
        Returns: Topology with its routing matrix
        """
        path = Path(path)
        nodes: Dict[str, NodeKind] = {}
        links: List[LinkSpec] = []
        routes: Dict[Tuple[str, str], List[str]] = {}

        for line_no, tokens in _lines(path):
            keyword = tokens[0]
            if keyword == "node":
                if len(tokens) != 3:
                    raise TopologyParseError("expected: node <id> <edge|inner>", str(path), line_no)
                if tokens[1] in nodes:
                    raise TopologyParseError(f"duplicate node '{tokens[1]}'", str(path), line_no)
                try:
                    nodes[tokens[1]] = NodeKind(tokens[2])
                except ValueError:
                    raise TopologyParseError(f"unknown node kind '{tokens[2]}'", str(path), line_no) from None

            elif keyword == "link":
                if len(tokens) != 6:
                    raise TopologyParseError(
                        "expected: link <id> <from> <to> <inner|edge|self> <0|1>", str(path), line_no
                    )
                _, link_id, source, target, kind, observed = tokens
                if any(link.link_id == link_id for link in links):
                    raise TopologyParseError(f"duplicate link '{link_id}'", str(path), line_no)
                for end in (source, target):
                    if end not in nodes:
                        raise TopologyParseError(f"link endpoint '{end}' is not a declared node", str(path), line_no)
                try:
                    link_kind = LinkKind(kind)
                except ValueError:
                    raise TopologyParseError(f"unknown link kind '{kind}'", str(path), line_no) from None
                if observed not in ("0", "1"):
                    raise TopologyParseError(f"observed flag must be 0 or 1, got '{observed}'", str(path), line_no)
                links.append(LinkSpec(link_id, source, target, link_kind, observed == "1"))

            elif keyword == "route":
                if len(tokens) < 4:
                    raise TopologyParseError("expected: route <src> <dst> <link-id> ...", str(path), line_no)
                pair = (tokens[1], tokens[2])
                if pair in routes:
                    raise TopologyParseError(f"duplicate route {pair[0]}->{pair[1]}", str(path), line_no)
                routes[pair] = tokens[3:]

            else:
                raise TopologyParseError(f"unknown keyword '{keyword}'", str(path), line_no)

        try:
            topology = build_topology(nodes, links, routes)
        except InvalidInputError as e:
            raise TopologyParseError(str(e), str(path)) from e

        logger.info(f"Loaded topology {path.name}: {topology.routing.link_count} links, "
                    f"{topology.index.pair_count} SD pairs")
        return topology

    @staticmethod
    def read_traffic(path: PathLike, index: SdIndex) -> TrafficVector:
        """
        Read a traffic-matrix file against an SD index
        Returns: TrafficVector (missing pairs are 0)
        """
        path = Path(path)
        values = np.zeros(index.pair_count)
        seen = set()
        for line_no, tokens in _lines(path):
            if tokens[0] != "flow" or len(tokens) != 4:
                raise TopologyParseError("expected: flow <src> <dst> <value>", str(path), line_no)
            pair = (tokens[1], tokens[2])
            if pair in seen:
                raise TopologyParseError(f"duplicate flow {pair[0]}->{pair[1]}", str(path), line_no)
            try:
                j = index.position(*pair)
            except KeyError:
                raise TopologyParseError(f"{pair[0]}->{pair[1]} is not an SD pair", str(path), line_no) from None
            seen.add(pair)
            values[j] = _number(tokens[3], path, line_no)
        logger.info(f"Loaded {len(seen)} flows from {path.name}")
        return TrafficVector(values, index)

    @staticmethod
    def read_loads(path: PathLike, link_ids: Sequence[str]) -> LinkLoads:
        """
        Read a link-load snapshot
        Returns: LinkLoads aligned with link_ids; absent links are unobserved
        """
        path = Path(path)
        position = {link_id: i for i, link_id in enumerate(link_ids)}
        values = np.full(len(link_ids), np.nan)
        observed = np.zeros(len(link_ids), dtype=bool)
        for line_no, tokens in _lines(path):
            if tokens[0] != "load" or len(tokens) != 3:
                raise TopologyParseError("expected: load <link-id> <value>", str(path), line_no)
            link_id = tokens[1]
            if link_id not in position:
                raise TopologyParseError(f"unknown link '{link_id}'", str(path), line_no)
            i = position[link_id]
            if observed[i]:
                raise TopologyParseError(f"duplicate load for link '{link_id}'", str(path), line_no)
            values[i] = _number(tokens[2], path, line_no)
            observed[i] = True
        logger.info(f"Loaded {int(observed.sum())}/{len(link_ids)} link loads from {path.name}")
        return LinkLoads(values=values, observed=observed, link_ids=tuple(link_ids))

    @staticmethod
    def load_problem(
        topology_path: PathLike,
        loads_path: PathLike,
        truth_path: Optional[PathLike] = None,
    ) -> Tuple[Topology, LinkLoads, Optional[TrafficVector]]:
        """
        Load a complete estimation problem
        Returns: (topology, loads, truth or None)
        """
        topology_path, loads_path = Path(topology_path), Path(loads_path)
        if not topology_path.exists():
            raise DataFileError(f"topology file not found at {topology_path}")
        if not loads_path.exists():
            raise DataFileError(f"loads file not found at {loads_path}")
        if truth_path is not None and not Path(truth_path).exists():
            raise DataFileError(f"truth file not found at {truth_path}")

        topology = TopologyParser.read_topology(topology_path)
        loads = TopologyParser.read_loads(loads_path, topology.routing.link_ids)
        truth = TopologyParser.read_traffic(truth_path, topology.index) if truth_path is not None else None
        return topology, loads, truth

    # ------------------------------------------------------------------
    # Writers
    # ------------------------------------------------------------------

    @staticmethod
    def format_topology(topology: Topology, config: Optional[Mapping[str, Any]] = None) -> str:
        routing = topology.routing
        lines = [_config_header(config)] if config else []
        lines += [f"node {node} {kind.value}\n" for node, kind in topology.nodes.items()]
        for link_id, kind, (source, target), observed in zip(
            routing.link_ids, routing.link_kinds, routing.link_ends, routing.observed
        ):
            lines.append(f"link {link_id} {source} {target} {kind.value} {int(observed)}\n")
        for j, (s, d) in enumerate(topology.index.pairs()):
            path = " ".join(routing.link_ids[i] for i in np.flatnonzero(routing.entries[:, j]))
            lines.append(f"route {s} {d} {path}\n")
        return "".join(lines)

    @staticmethod
    def format_traffic(traffic: TrafficVector, config: Optional[Mapping[str, Any]] = None) -> str:
        lines = [_config_header(config)] if config else []
        lines += [f"flow {s} {d} {value:.17g}\n" for (s, d), value in zip(traffic.index.pairs(), traffic.values)]
        return "".join(lines)

    @staticmethod
    def format_loads(loads: LinkLoads, config: Optional[Mapping[str, Any]] = None) -> str:
        lines = [_config_header(config)] if config else []
        lines += [
            f"load {link_id} {value:.17g}\n"
            for link_id, value, observed in zip(loads.link_ids, loads.values, loads.observed)
            if observed
        ]
        return "".join(lines)

    @staticmethod
    def write_text(path: PathLike, text: str) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        logger.info(f"✅ Wrote {path}")
        return path


# ============================================================================
# Series directories
# ============================================================================

def write_series(
    out_dir: PathLike,
    topology: Topology,
    truth: Sequence[TrafficVector],
    loads: Sequence[LinkLoads],
    config: Mapping[str, Any],
) -> Path:
    """
    Write topology.net, truth/tNNNN.tm, loads/tNNNN.load and manifest.json

    Everything is formatted in memory first so a failure leaves no partial series.
    """
    out_dir = Path(out_dir)
    files = {"topology.net": TopologyParser.format_topology(topology, config)}
    truth_names, load_names = [], []
    for t, (x, y) in enumerate(zip(truth, loads)):
        truth_names.append(f"truth/t{t:04d}.tm")
        load_names.append(f"loads/t{t:04d}.load")
        files[truth_names[-1]] = TopologyParser.format_traffic(x, config)
        files[load_names[-1]] = TopologyParser.format_loads(y, config)
    manifest = {
        "config": dict(config),
        "steps": len(truth_names),
        "topology": "topology.net",
        "truth": truth_names,
        "loads": load_names,
    }
    files[MANIFEST_NAME] = json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n"

    for name, text in files.items():
        target = out_dir / name
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(text, encoding="utf-8")
    logger.info(f"✅ Wrote {len(truth_names)} snapshots to {out_dir}")
    return out_dir


def read_series(
    series_dir: PathLike,
    steps: Optional[int] = None,
) -> Tuple[Topology, List[TrafficVector], List[LinkLoads], Dict[str, Any]]:
    """
    Read a series directory written by write_series
    Returns: (topology, truth series, load series, manifest config)
    """
    series_dir = Path(series_dir)
    manifest_path = series_dir / MANIFEST_NAME
    if not manifest_path.exists():
        raise DataFileError(f"{MANIFEST_NAME} not found in {series_dir}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise TopologyParseError(f"invalid manifest: {e}", str(manifest_path), e.lineno) from e

    topology = TopologyParser.read_topology(series_dir / manifest["topology"])
    names = list(zip(manifest["truth"], manifest["loads"]))
    if steps is not None:
        if steps > len(names):
            raise InvalidInputError(f"series has {len(names)} steps, {steps} requested")
        names = names[:steps]
    truth = [TopologyParser.read_traffic(series_dir / x_name, topology.index) for x_name, _ in names]
    loads = [TopologyParser.read_loads(series_dir / y_name, topology.routing.link_ids) for _, y_name in names]
    return topology, truth, loads, manifest.get("config", {})


# ============================================================================
# Result export
# ============================================================================

def format_number(value: Any) -> str:
    """6 significant digits for text tables"""
    if isinstance(value, bool) or value is None:
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "nan" if math.isnan(value) else f"{value:.6g}"
    return str(value)


def format_table(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    """Tab-separated table with a header row"""
    lines = ["\t".join(header)]
    lines += ["\t".join(format_number(cell) for cell in row) for row in rows]
    return "\n".join(lines) + "\n"


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else None
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, Mapping):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set, frozenset)):
        return [_jsonable(v) for v in value]
    return value


def export_results(payload: Mapping[str, Any], format: str = "json") -> str:
    """
    Export a result payload to JSON (full precision) or TSV

    TSV expects ``payload["header"]`` and ``payload["rows"]``.
    """
    if format == "json":
        return json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n"
    elif format == "tsv":
        text = format_table(payload["header"], payload["rows"])
        config = payload.get("config")
        return (_config_header(config) if config else "") + text
    else:
        raise ValueError(f"Unsupported format: {format}")
