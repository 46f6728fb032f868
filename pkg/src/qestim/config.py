"""Run configuration: YAML schema validation and scheme construction.

Validation errors name the offending key path (e.g. "scheme.tspan") so
configs can be fixed without reading tracebacks. Complex matrices are
written as nested arrays of [re, im] pairs.
"""

from __future__ import annotations

import os

import numpy as np
import yaml

from ._linalg import ValidationError
from .dynamics import LindbladSpec
from .scheme import (
    ControlSpec,
    DecayChannel,
    HamiltonianSpec,
    MeasurementSpec,
    ProbeState,
    Scheme,
    builtin_state,
    make_general_scheme,
    sic_povm,
)

__all__ = ["ConfigError", "load_config", "apply_overrides", "build_scheme"]

_TASKS = ("evaluate", "optimize", "error", "adapt", "nv")


class ConfigError(ValidationError):
    """Schema violation; the message starts with the offending key path."""


def _fail(path, msg):
    raise ConfigError(f"{path}: {msg}")


def _need(mapping, key, path):
    if not isinstance(mapping, dict):
        _fail(path, "expected a table")
    if key not in mapping:
        _fail(f"{path}.{key}" if path else key, "missing required key")
    return mapping[key]


def load_config(path) -> dict:
    if not os.path.exists(path):
        raise ConfigError(f"config: file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("config: top level must be a table")
    return raw


def apply_overrides(cfg: dict, pairs) -> dict:
    """--set key.path=value overrides; values parsed as YAML scalars."""
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set: expected key=value, got {pair!r}")
        key, _, raw = pair.partition("=")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                node[part] = {}
            node = node[part]
        node[parts[-1]] = value
    return cfg


# ---------------------------------------------------------------------------
# value parsers


def _as_float(node, path):
    if isinstance(node, bool) or not isinstance(node, (int, float)):
        _fail(path, f"expected a number, got {node!r}")
    return float(node)


def _as_int(node, path):
    if isinstance(node, bool) or not isinstance(node, int):
        _fail(path, f"expected an integer, got {node!r}")
    return int(node)


def _entry(node, path):
    """One matrix entry: [re, im] pair or a bare real number."""
    if isinstance(node, (int, float)) and not isinstance(node, bool):
        return complex(node)
    if isinstance(node, list) and len(node) == 2 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in node
    ):
        return complex(node[0], node[1])
    _fail(path, f"expected a number or [re, im] pair, got {node!r}")


def parse_vector(node, path):
    if not isinstance(node, list) or not node:
        _fail(path, "expected a non-empty array")
    return np.array([_entry(v, f"{path}[{i}]") for i, v in enumerate(node)])


def parse_matrix(node, path):
    if not isinstance(node, list) or not node:
        _fail(path, "expected a non-empty matrix")
    if not all(isinstance(row, list) for row in node):
        _fail(path, "expected a matrix (array of rows)")
    rows = [parse_vector(row, f"{path}[{i}]") for i, row in enumerate(node)]
    if len({r.size for r in rows}) != 1:
        _fail(path, "rows have unequal lengths")
    return np.stack(rows)


def parse_real_array(node, path):
    try:
        return np.asarray(node, dtype=float)
    except (TypeError, ValueError):
        _fail(path, "expected an array of real numbers")


def parse_tspan(node, path):
    if not isinstance(node, list) or len(node) != 3:
        _fail(path, "expected [start, step, stop]")
    start, step, stop = (_as_float(v, f"{path}[{i}]") for i, v in enumerate(node))
    if step <= 0:
        _fail(path, "step must be positive")
    if stop <= start:
        _fail(path, "stop must exceed start")
    count = (stop - start) / step
    n = int(round(count))
    if abs(count - n) > 1e-9 * max(1.0, abs(count)):
        _fail(path, f"step {step} does not evenly divide [{start}, {stop}]")
    return np.linspace(start, stop, n + 1)


# ---------------------------------------------------------------------------
# scheme construction


def _parse_probe(node, path):
    if isinstance(node, str):
        name, _, idx = node.partition(":")
        try:
            index = int(idx) if idx else None
        except ValueError:
            _fail(path, f"expected an integer state index, got {idx!r}")
        try:
            return builtin_state(name, index)
        except ValidationError as exc:
            _fail(path, str(exc))
    if isinstance(node, list):
        if node and isinstance(node[0], list) and node[0] and isinstance(node[0][0], list):
            return ProbeState.from_array(parse_matrix(node, path))
        if node and isinstance(node[0], list) and len(node[0]) == 2 and all(
            isinstance(v, (int, float)) for v in node[0]
        ):
            return ProbeState.from_array(parse_vector(node, path))
        if node and isinstance(node[0], list):
            return ProbeState.from_array(parse_matrix(node, path))
        return ProbeState.from_array(parse_vector(node, path))
    _fail(path, "expected a builtin-state name or a state array")


def _parse_controls(node, path):
    if node is None:
        return ControlSpec()
    hc_node = _need(node, "hc", path)
    if not isinstance(hc_node, list):
        _fail(f"{path}.hc", "expected an array of matrices")
    hc = tuple(
        parse_matrix(m, f"{path}.hc[{i}]") for i, m in enumerate(hc_node)
    )
    ctrl = None
    if node.get("amplitudes") is not None:
        ctrl = parse_real_array(node["amplitudes"], f"{path}.amplitudes")
    bounds = (-np.inf, np.inf)
    if node.get("bounds") is not None:
        b = node["bounds"]
        if not isinstance(b, list) or len(b) != 2:
            _fail(f"{path}.bounds", "expected [lo, hi]")
        bounds = (_as_float(b[0], f"{path}.bounds[0]"), _as_float(b[1], f"{path}.bounds[1]"))
    try:
        return ControlSpec(hc=hc, ctrl=ctrl, bounds=bounds)
    except ValidationError as exc:
        _fail(path, str(exc))


def _parse_decays(node, path):
    if node is None:
        return ()
    if not isinstance(node, list):
        _fail(path, "expected an array of decay channels")
    channels = []
    for i, ch in enumerate(node):
        op = parse_matrix(_need(ch, "operator", f"{path}[{i}]"), f"{path}[{i}].operator")
        rate_node = _need(ch, "rate", f"{path}[{i}]")
        if isinstance(rate_node, list):
            rate = parse_real_array(rate_node, f"{path}[{i}].rate")
        else:
            rate = _as_float(rate_node, f"{path}[{i}].rate")
        try:
            channels.append(DecayChannel(op, rate))
        except ValidationError as exc:
            _fail(f"{path}[{i}]", str(exc))
    return tuple(channels)


def _parse_measurement(node, path, dim):
    if node is None:
        return None
    if isinstance(node, str):
        if node.lower() == "sic":
            return sic_povm(dim)
        _fail(path, f"unknown measurement name {node!r}")
    if not isinstance(node, list):
        _fail(path, "expected \"sic\" or an array of POVM matrices")
    povm = tuple(
        parse_matrix(m, f"{path}[{i}]") for i, m in enumerate(node)
    )
    try:
        return MeasurementSpec(povm)
    except ValidationError as exc:
        _fail(path, str(exc))


def _parse_prior(node, path):
    if node is None:
        return {}
    x_node = _need(node, "x", path)
    if not isinstance(x_node, list) or not x_node:
        _fail(f"{path}.x", "expected an array of parameter grids")
    if not isinstance(x_node[0], list):
        x_node = [x_node]
    x = [parse_real_array(g, f"{path}.x[{i}]") for i, g in enumerate(x_node)]
    p = parse_real_array(_need(node, "p", path), f"{path}.p")
    dp_node = node.get("dp")
    if dp_node is None:
        if len(x) == 1:
            dp = [np.gradient(p, x[0])]
        else:
            _fail(f"{path}.dp", "missing required key")
    else:
        if not isinstance(dp_node, list):
            _fail(f"{path}.dp", "expected an array of gradient grids")
        if not isinstance(dp_node[0], list):
            dp_node = [dp_node]
        dp = [
            parse_real_array(g, f"{path}.dp[{i}]") for i, g in enumerate(dp_node)
        ]
    return {"x": x, "p": p, "dp": dp}


def build_scheme(cfg: dict, path: str = "scheme", parametric: bool = False) -> Scheme:
    """Construct a Scheme from the config's scheme section.

    With ``parametric`` the Hamiltonian is interpreted as the linear family
    H(x) = h0 + sum_a x_a dh_a (needed by tasks that re-evolve the scheme at
    shifted parameter values); otherwise (h0, dh) describe the operating
    point directly.
    """
    section = _need(cfg, "scheme", "")
    probe = _parse_probe(_need(section, "probe", path), f"{path}.probe")

    ham_node = _need(section, "hamiltonian", path)
    h0 = parse_matrix(_need(ham_node, "h0", f"{path}.hamiltonian"), f"{path}.hamiltonian.h0")
    dh_node = _need(ham_node, "dh", f"{path}.hamiltonian")
    if not isinstance(dh_node, list) or not dh_node:
        _fail(f"{path}.hamiltonian.dh", "expected a non-empty array of matrices")
    dh = [
        parse_matrix(m, f"{path}.hamiltonian.dh[{i}]") for i, m in enumerate(dh_node)
    ]
    try:
        if parametric:
            def h0_fn(u):
                y = np.atleast_1d(np.asarray(u, dtype=float))
                return h0 + sum(y[a] * dh[a] for a in range(len(dh)))

            def dh_fn(u):
                return list(dh)

            hamiltonian = HamiltonianSpec.parametric(
                h0_fn, dh_fn, np.zeros(len(dh)), time_dependent=False
            )
        else:
            hamiltonian = HamiltonianSpec.static(h0, dh)
    except ValidationError as exc:
        _fail(f"{path}.hamiltonian", str(exc))

    tspan = parse_tspan(_need(section, "tspan", path), f"{path}.tspan")
    controls = _parse_controls(section.get("controls"), f"{path}.controls")
    decays = _parse_decays(section.get("decays"), f"{path}.decays")
    dyn_method = section.get("dyn_method", "expm")
    if dyn_method not in ("expm", "ode"):
        _fail(f"{path}.dyn_method", f"expected expm or ode, got {dyn_method!r}")

    try:
        param = LindbladSpec(
            hamiltonian, tspan, controls=controls, decays=decays,
            dyn_method=dyn_method,
        )
    except ValidationError as exc:
        _fail(path, str(exc))

    measurement = _parse_measurement(
        section.get("measurement"), f"{path}.measurement", probe.dim
    )
    prior = _parse_prior(section.get("prior"), f"{path}.prior")
    try:
        return make_general_scheme(probe, param, measurement=measurement, **prior)
    except ValidationError as exc:
        _fail(path, str(exc))
