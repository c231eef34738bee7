"""Experiment configuration: plain-text key-value files with sections.

The format is INI (configparser). Inclusion and source entries pack their
parameters into a single semicolon-separated value so a phantom stays
readable and diffable::

    [coefficients.two_photon]
    background = 0.05
    inclusion1 = square; center = 0.0, -0.4; size = 0.3; value = 0.1

    [sources]
    source1 = constant; value = 0.8
    source3 = affine; a = 1.4; bx = 0.6; by = 0.0

Sources must be strictly positive on the boundary; `affine` means
g(x, y) = a + bx*x + by*y restricted to the boundary.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

from .errors import ValidationError
from .forward import BoundarySource
from .mesh import Mesh
from .phantoms import Inclusion, Phantom, PhantomField

COEFF_SECTIONS = {
    "gruneisen": "coefficients.gruneisen",
    "diffusion": "coefficients.diffusion",
    "single_photon": "coefficients.single_photon",
    "two_photon": "coefficients.two_photon",
}


@dataclass
class SourceSpec:
    kind: str                      # "constant" | "affine"
    params: dict

    def __post_init__(self):
        if self.kind == "constant":
            required = {"value"}
        elif self.kind == "affine":
            required = {"a", "bx", "by"}
        else:
            raise ValidationError(f"unknown source kind {self.kind!r}")
        missing = required - set(self.params)
        if missing:
            raise ValidationError(
                f"source {self.kind!r} missing parameters {sorted(missing)}")
        self.params = {k: float(v) for k, v in self.params.items()}

    def build(self, mesh: Mesh) -> BoundarySource:
        if self.kind == "constant":
            src = BoundarySource.constant(mesh, self.params["value"])
        else:
            a, bx, by = self.params["a"], self.params["bx"], self.params["by"]
            src = BoundarySource.from_function(
                mesh, lambda x, y: a + bx * x + by * y)
        return src.require_strictly_positive()

    def describe(self) -> str:
        items = "; ".join(f"{k} = {self.params[k]:g}" for k in sorted(self.params))
        return f"{self.kind}; {items}"


@dataclass
class LsqSettings:
    kappa: str | float = "auto"      # "auto" = 1e-8 * (datum scale)^2
    grad_tol: float = 1e-6
    max_iterations: int = 300
    history: int = 10
    bound_floor: float = 0.02
    bound_ceiling: float = 0.5

    def __post_init__(self):
        if isinstance(self.kappa, str):
            if self.kappa != "auto":
                raise ValidationError("lsq kappa must be a number or 'auto'")
        elif float(self.kappa) < 0.0:
            raise ValidationError("lsq kappa must be nonnegative")
        if self.bound_floor <= 0.0 or self.bound_ceiling <= self.bound_floor:
            raise ValidationError("lsq bounds must satisfy 0 < floor < ceiling")
        if self.max_iterations < 1 or self.history < 1 or self.grad_tol <= 0.0:
            raise ValidationError("lsq iteration settings must be positive")


@dataclass
class ExperimentConfig:
    mesh_n: int = 32
    data_mesh_n: int | None = None       # different mesh = inversion-crime guard on
    phantom: Phantom = None
    sources: list = field(default_factory=list)
    noise_levels: list = field(default_factory=lambda: [0.0, 1.0, 2.0, 5.0])
    seeds: list = field(default_factory=lambda: list(range(101, 111)))
    lsq: LsqSettings = field(default_factory=LsqSettings)

    def validate(self):
        if self.mesh_n < 1:
            raise ValidationError("mesh n must be >= 1")
        if self.data_mesh_n is not None and self.data_mesh_n < 1:
            raise ValidationError("data mesh n must be >= 1")
        if self.phantom is None:
            raise ValidationError("config needs a phantom")
        if not self.sources:
            raise ValidationError("config needs at least one source")
        if any(e < 0 for e in self.noise_levels):
            raise ValidationError("noise levels must be nonnegative")
        if not self.seeds:
            raise ValidationError("config needs at least one seed")
        return self

    def canonical_text(self) -> str:
        """Normalized echo of the configuration, stable across runs."""
        out = io.StringIO()
        print("[mesh]", file=out)
        print(f"n = {self.mesh_n}", file=out)
        if self.data_mesh_n is not None:
            print(f"data_n = {self.data_mesh_n}", file=out)
        for name, section in COEFF_SECTIONS.items():
            pf = getattr(self.phantom, name)
            print(f"\n[{section}]", file=out)
            print(f"background = {pf.background:g}", file=out)
            for k, inc in enumerate(pf.inclusions, start=1):
                print(f"inclusion{k} = {inc.shape}; "
                      f"center = {inc.center[0]:g}, {inc.center[1]:g}; "
                      f"size = {inc.size:g}; value = {inc.value:g}", file=out)
        print("\n[sources]", file=out)
        for k, s in enumerate(self.sources, start=1):
            print(f"source{k} = {s.describe()}", file=out)
        print("\n[noise]", file=out)
        print("levels = " + ", ".join(f"{e:g}" for e in self.noise_levels), file=out)
        print("seeds = " + ", ".join(str(s) for s in self.seeds), file=out)
        print("\n[lsq]", file=out)
        ls = self.lsq
        kappa = ls.kappa if isinstance(ls.kappa, str) else f"{ls.kappa:g}"
        print(f"kappa = {kappa}", file=out)
        print(f"grad_tol = {ls.grad_tol:g}", file=out)
        print(f"max_iterations = {ls.max_iterations}", file=out)
        print(f"history = {ls.history}", file=out)
        print(f"bound_floor = {ls.bound_floor:g}", file=out)
        print(f"bound_ceiling = {ls.bound_ceiling:g}", file=out)
        return out.getvalue()


def _parse_packed(value: str, context: str) -> dict:
    """Parse 'kind; key = v; key = v' into {'kind': ..., params}."""
    parts = [p.strip() for p in value.split(";") if p.strip()]
    if not parts:
        raise ValidationError(f"{context}: empty specification")
    kind = parts[0]
    params = {}
    for item in parts[1:]:
        if "=" not in item:
            raise ValidationError(f"{context}: expected 'key = value', got {item!r}")
        key, val = item.split("=", 1)
        params[key.strip()] = val.strip()
    return {"kind": kind, "params": params}


def _parse_float_pair(text: str, context: str):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 2:
        raise ValidationError(f"{context}: expected 'x, y', got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ValidationError(f"{context}: bad number in {text!r}") from None


def _parse_phantom_field(section, heading: str) -> PhantomField:
    if "background" not in section:
        raise ValidationError(f"[{heading}] needs a 'background' value")
    try:
        background = float(section["background"])
    except ValueError:
        raise ValidationError(f"[{heading}] background must be a number") from None
    inclusions = []
    for key in section:
        if not key.startswith("inclusion"):
            if key != "background":
                raise ValidationError(f"[{heading}] unknown key {key!r}")
            continue
        packed = _parse_packed(section[key], f"[{heading}] {key}")
        params = packed["params"]
        for req in ("center", "size", "value"):
            if req not in params:
                raise ValidationError(f"[{heading}] {key} missing {req!r}")
        try:
            size = float(params["size"])
            value = float(params["value"])
        except ValueError:
            raise ValidationError(f"[{heading}] {key}: bad number") from None
        inclusions.append(Inclusion(
            shape=packed["kind"],
            center=_parse_float_pair(params["center"], f"[{heading}] {key}"),
            size=size, value=value))
    return PhantomField(background=background, inclusions=inclusions)


def _parse_number_list(text: str, context: str, conv=float) -> list:
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            out.append(conv(item))
        except ValueError:
            raise ValidationError(f"{context}: bad number {item!r}") from None
    return out


def load_config(path) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    read = parser.read(path)
    if not read:
        raise ValidationError(f"cannot read config file {path}")
    return parse_config(parser)


def parse_config(parser: configparser.ConfigParser) -> ExperimentConfig:
    cfg = ExperimentConfig(phantom=None)

    if parser.has_section("mesh"):
        sec = parser["mesh"]
        if "n" in sec:
            try:
                cfg.mesh_n = int(sec["n"])
            except ValueError:
                raise ValidationError("mesh n must be an integer") from None
        if sec.get("data_n", "").strip():
            try:
                cfg.data_mesh_n = int(sec["data_n"])
            except ValueError:
                raise ValidationError("mesh data_n must be an integer") from None

    fields = {}
    for name, heading in COEFF_SECTIONS.items():
        if not parser.has_section(heading):
            raise ValidationError(f"config missing section [{heading}]")
        fields[name] = _parse_phantom_field(parser[heading], heading)
    cfg.phantom = Phantom(**fields)

    if not parser.has_section("sources"):
        raise ValidationError("config missing section [sources]")
    for key in parser["sources"]:
        packed = _parse_packed(parser["sources"][key], f"[sources] {key}")
        cfg.sources.append(SourceSpec(kind=packed["kind"], params=packed["params"]))

    if parser.has_section("noise"):
        sec = parser["noise"]
        if "levels" in sec:
            cfg.noise_levels = _parse_number_list(sec["levels"], "[noise] levels")
        if "seeds" in sec:
            cfg.seeds = _parse_number_list(sec["seeds"], "[noise] seeds", conv=int)

    if parser.has_section("lsq"):
        sec = parser["lsq"]
        kwargs = {}
        if "kappa" in sec:
            raw = sec["kappa"].strip()
            kwargs["kappa"] = raw if raw == "auto" else _as_float(raw, "[lsq] kappa")
        for key, name, conv in (("grad_tol", "grad_tol", float),
                                ("max_iterations", "max_iterations", int),
                                ("history", "history", int),
                                ("bound_floor", "bound_floor", float),
                                ("bound_ceiling", "bound_ceiling", float)):
            if key in sec:
                kwargs[name] = _conv(sec[key], f"[lsq] {key}", conv)
        cfg.lsq = LsqSettings(**kwargs)

    return cfg.validate()


def _as_float(text, context):
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"{context}: bad number {text!r}") from None


def _conv(text, context, conv):
    try:
        return conv(text)
    except ValueError:
        raise ValidationError(f"{context}: bad value {text!r}") from None


def default_config() -> ExperimentConfig:
    """Built-in configuration used by the experiment drivers and tests.

    The coefficient magnitudes and source strengths are chosen so that the
    four illuminations produce photon densities with a healthy pointwise
    spread (pair separation is then well conditioned) and noise response in
    the range reported for this problem class.
    """
    phantom = Phantom(
        gruneisen=PhantomField(background=1.0),
        diffusion=PhantomField(background=0.2, inclusions=[
            Inclusion("disk", (-0.45, 0.4), 0.3, 0.3),
        ]),
        single_photon=PhantomField(background=0.15, inclusions=[
            Inclusion("disk", (0.45, 0.4), 0.25, 0.3),
        ]),
        two_photon=PhantomField(background=0.05, inclusions=[
            Inclusion("square", (0.0, -0.4), 0.3, 0.1),
        ]),
    )
    sources = [
        SourceSpec("constant", {"value": 0.5}),
        SourceSpec("constant", {"value": 3.0}),
        SourceSpec("affine", {"a": 1.75, "bx": 1.0, "by": 0.0}),
        SourceSpec("affine", {"a": 1.75, "bx": 0.0, "by": -1.0}),
    ]
    return ExperimentConfig(phantom=phantom, sources=sources).validate()


def write_config(cfg: ExperimentConfig, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(cfg.canonical_text())
