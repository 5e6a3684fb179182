"""
Route distillation: filtered traffic to endpoint templates and skill packages.

Paths are normalized into templates, response and request bodies into
``ResponseShape`` trees, auth headers into vault-backed descriptors. The
results are packaged per domain with a Markdown manifest and a client stub.
"""

import difflib
import json
import os
import re
from collections import defaultdict
from pathlib import Path
from typing import Any
from urllib.parse import parse_qsl, urlsplit

import structlog
from pydantic import BaseModel, Field

from routegraph.errors import DomainMismatch, NoApiEntries, NotStructured
from routegraph.models import (
    AuthDescriptor,
    AuthKind,
    CaptureEntry,
    EndpointExample,
    EndpointTemplate,
    ParamKind,
    PathParam,
    QueryParam,
    ResponseShape,
    SkillPackage,
)
from routegraph.protocol import (
    API_KEY_HEADER,
    EXAMPLE_BODY_CAP,
    INTEGER_SEGMENT,
    SESSION_COOKIE,
    UUID_SEGMENT,
    RouteProtocol,
)
from routegraph.vault import CredentialVault

logger = structlog.get_logger(__name__)

_IDENTIFIER_LIKE = re.compile(r"^(?=.*\d)(?=.*[A-Za-z])[A-Za-z0-9_.~-]+$|^[A-Za-z0-9_-]{20,}$")
_NUMBER = re.compile(r"^-?\d+(\.\d+)?$")
_PLACEHOLDER = re.compile(r"^\{([A-Za-z_][A-Za-z0-9_]*)\}$")

# Priority when two observations disagree on kind
_KIND_PRIORITY = {"object": 5, "array": 4, "string": 3, "number": 2, "boolean": 1, "null": 0}
_AUTH_PRIORITY = {
    AuthKind.BEARER: 3,
    AuthKind.API_KEY_HEADER: 2,
    AuthKind.COOKIE: 1,
    AuthKind.NONE: 0,
}


# Path normalization


class NormalizedPath(BaseModel):
    """One path template and the sample paths it covers"""

    template: str
    params: list[PathParam] = Field(default_factory=list)
    samples: list[str] = Field(default_factory=list)


def _split(path: str) -> list[str]:
    return path.strip("/").split("/") if path.strip("/") else []


def _token(segment: str) -> tuple[str, str]:
    if INTEGER_SEGMENT.match(segment):
        return ("integer", "")
    if UUID_SEGMENT.match(segment):
        return ("uuid", "")
    return ("literal", segment)


def normalize_paths(samples: list[str]) -> list[NormalizedPath]:
    """
    Collapse sample paths on one host into templates.

    Integer segments become ``{id}`` (integer), UUID segments ``{id}``
    (uuid), and identifier-like literals that vary across samples with the
    same surrounding segments become ``{param}`` (opaque). Later parameters
    of the same family are numbered (``{id2}``, ``{param2}``).
    """
    tokens = {path: [_token(s) for s in _split(path)] for path in dict.fromkeys(samples)}

    by_length: dict[int, list[str]] = defaultdict(list)
    for path, toks in tokens.items():
        by_length[len(toks)].append(path)
    for length, paths in by_length.items():
        for pos in range(length):
            clusters: dict[tuple[tuple[str, str], ...], list[str]] = defaultdict(list)
            for path in paths:
                toks = tokens[path]
                clusters[tuple(toks[:pos] + toks[pos + 1 :])].append(path)
            for members in clusters.values():
                values = {tokens[p][pos] for p in members}
                literals = {v for kind, v in values if kind == "literal"}
                if len(values) < 2 or len(literals) != len(values):
                    continue
                if all(_IDENTIFIER_LIKE.match(v) for v in literals):
                    for p in members:
                        tokens[p][pos] = ("opaque", "")

    groups: dict[tuple[str, ...], NormalizedPath] = {}
    kinds: dict[tuple[str, ...], list[set[str]]] = {}
    for path in dict.fromkeys(samples):
        toks = tokens[path]
        shape = tuple(v if kind == "literal" else "\x00" for kind, v in toks)
        if shape not in groups:
            groups[shape] = NormalizedPath(template="")
            kinds[shape] = [set() for _ in toks]
        groups[shape].samples.append(path)
        for i, (kind, _) in enumerate(toks):
            if kind != "literal":
                kinds[shape][i].add(kind)

    result: list[NormalizedPath] = []
    for shape, group in groups.items():
        segments: list[str] = []
        counters = {"id": 0, "param": 0}
        for i, literal in enumerate(shape):
            if literal != "\x00":
                segments.append(literal)
                continue
            seen = kinds[shape][i]
            kind = ParamKind(seen.pop()) if len(seen) == 1 else ParamKind.OPAQUE
            family = "param" if kind == ParamKind.OPAQUE else "id"
            counters[family] += 1
            name = family if counters[family] == 1 else f"{family}{counters[family]}"
            group.params.append(PathParam(name=name, kind=kind))
            segments.append("{" + name + "}")
        group.template = "/" + "/".join(segments)
        result.append(group)
    return result


def match_path(template: str, params: list[PathParam], path: str) -> dict[str, str] | None:
    """Bind a concrete path against a template; None if it does not match"""
    kinds = {p.name: p.kind for p in params}
    t_segments, p_segments = _split(template), _split(path)
    if len(t_segments) != len(p_segments):
        return None
    bound: dict[str, str] = {}
    for t_seg, p_seg in zip(t_segments, p_segments, strict=True):
        placeholder = _PLACEHOLDER.match(t_seg)
        if placeholder is None:
            if t_seg != p_seg:
                return None
            continue
        name = placeholder.group(1)
        kind = kinds.get(name, ParamKind.OPAQUE)
        if kind == ParamKind.INTEGER and not INTEGER_SEGMENT.match(p_seg):
            return None
        if kind == ParamKind.UUID and not UUID_SEGMENT.match(p_seg):
            return None
        if not p_seg:
            return None
        bound[name] = p_seg
    return bound


def fill_template(template: str, values: dict[str, Any]) -> str:
    """Substitute path parameters into a template"""

    def replace(segment: str) -> str:
        placeholder = _PLACEHOLDER.match(segment)
        if placeholder is None:
            return segment
        return str(values[placeholder.group(1)])

    return "/" + "/".join(replace(s) for s in _split(template))


# Shape inference


def _kind_of(value: Any) -> str:
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "boolean"
    if isinstance(value, (int, float)):
        return "number"
    if isinstance(value, str):
        return "string"
    if isinstance(value, dict):
        return "object"
    if isinstance(value, list):
        return "array"
    raise NotStructured(f"Not a JSON value: {type(value).__name__}")


def infer_shape(body: Any) -> ResponseShape:
    """
    Structural type of a parsed JSON value.

    Array elements are unified field-union-wise: fields missing from some
    elements are marked optional. A null unified with another kind becomes
    that kind, optional.

    Raises:
        NotStructured: The value holds something JSON cannot represent
    """
    kind = _kind_of(body)
    if kind == "object":
        return ResponseShape(kind="object", fields={k: infer_shape(v) for k, v in body.items()})
    if kind == "array":
        element: ResponseShape | None = None
        for item in body:
            shape = infer_shape(item)
            element = shape if element is None else unify_shapes(element, shape)
        return ResponseShape(kind="array", element=element or ResponseShape(kind="null"))
    return ResponseShape(kind=kind)  # type: ignore[arg-type]


def infer_shape_from_bytes(raw: bytes) -> ResponseShape:
    try:
        value = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise NotStructured(f"Body is not JSON: {e}") from e
    return infer_shape(value)


def _optional(shape: ResponseShape) -> ResponseShape:
    return shape.model_copy(update={"optional": True})


def unify_shapes(a: ResponseShape, b: ResponseShape) -> ResponseShape:
    """Least structural type covering both shapes"""
    optional = a.optional or b.optional
    if a.kind == "null" and b.kind != "null":
        return _optional(b)
    if b.kind == "null" and a.kind != "null":
        return _optional(a)
    if a.kind != b.kind:
        winner = a if _KIND_PRIORITY[a.kind] > _KIND_PRIORITY[b.kind] else b
        return winner.model_copy(update={"optional": optional})
    if a.kind == "object":
        fields: dict[str, ResponseShape] = {}
        a_fields, b_fields = a.fields or {}, b.fields or {}
        for name in list(a_fields) + [n for n in b_fields if n not in a_fields]:
            if name in a_fields and name in b_fields:
                fields[name] = unify_shapes(a_fields[name], b_fields[name])
            else:
                fields[name] = _optional(a_fields.get(name) or b_fields[name])
        return ResponseShape(kind="object", fields=fields, optional=optional)
    if a.kind == "array":
        assert a.element is not None and b.element is not None
        return ResponseShape(
            kind="array", element=unify_shapes(a.element, b.element), optional=optional
        )
    return ResponseShape(kind=a.kind, optional=optional)


def extend_shape(existing: ResponseShape, incoming: ResponseShape) -> ResponseShape:
    """Existing shape plus fields only the incoming shape has; existing kinds win"""
    if existing.kind == "object" and incoming.kind == "object":
        fields = dict(existing.fields or {})
        for name, shape in (incoming.fields or {}).items():
            fields[name] = extend_shape(fields[name], shape) if name in fields else shape
        return existing.model_copy(update={"fields": fields})
    if existing.kind == "array" and incoming.kind == "array":
        assert existing.element is not None and incoming.element is not None
        return existing.model_copy(
            update={"element": extend_shape(existing.element, incoming.element)}
        )
    return existing


def flatten_shape(shape: ResponseShape, prefix: str = "") -> dict[str, ResponseShape]:
    """Every node of a shape by field path (``items[].price``); root is ``""``"""
    nodes = {prefix: shape}
    if shape.kind == "object":
        for name, child in (shape.fields or {}).items():
            nodes.update(flatten_shape(child, f"{prefix}.{name}" if prefix else name))
    elif shape.kind == "array" and shape.element is not None:
        nodes.update(flatten_shape(shape.element, f"{prefix}[]"))
    return nodes


def _leaves(shape: ResponseShape, prefix: str) -> list[tuple[str, ResponseShape]]:
    if shape.kind == "object" and shape.fields:
        out: list[tuple[str, ResponseShape]] = []
        for name in sorted(shape.fields):
            out.extend(_leaves(shape.fields[name], f"{prefix}.{name}"))
        return out
    if shape.kind == "array" and shape.element is not None:
        return _leaves(shape.element, f"{prefix}[]")
    return [(prefix, shape)]


def schema_lines(endpoints: list[EndpointTemplate]) -> list[str]:
    """Canonical one-line-per-leaf schema serialization, sorted by endpoint key"""
    lines: list[str] = []
    for ep in sorted(endpoints, key=lambda e: e.key):
        lines.append(f"{ep.key} auth {ep.auth.kind.value}")
        for param in ep.path_params:
            lines.append(f"{ep.key} path.{param.name} {param.kind.value}")
        for name in sorted(ep.query_schema):
            q = ep.query_schema[name]
            need = "required" if q.required else "optional"
            lines.append(f"{ep.key} query.{name} {q.kind} {need}")
        if ep.body_schema is not None:
            for path, leaf in _leaves(ep.body_schema, "body"):
                lines.append(f"{ep.key} {path} {leaf.kind}{'?' if leaf.optional else ''}")
        for path, leaf in _leaves(ep.response_schema, "response"):
            lines.append(f"{ep.key} {path} {leaf.kind}{'?' if leaf.optional else ''}")
    return lines


def count_changed_lines(before: list[str], after: list[str]) -> int:
    """Added plus removed lines between two canonical schema serializations"""
    changed = 0
    for line in difflib.unified_diff(before, after, lineterm="", n=0):
        if line.startswith(("+++", "---", "@@")):
            continue
        if line.startswith(("+", "-")):
            changed += 1
    return changed


# Auth extraction


def extract_auth(
    entry: CaptureEntry, vault: CredentialVault | None = None
) -> AuthDescriptor:
    """
    Auth descriptor for one request; the credential itself goes to the vault.

    Precedence: bearer > api-key header > session cookie.
    """
    domain = (urlsplit(entry.url).hostname or "").lower()

    def stored(kind: AuthKind, location: str, value: str) -> AuthDescriptor:
        ref = RouteProtocol.vault_key_for(domain, kind.value, location)
        if vault is not None:
            vault.put(ref, value)
        return AuthDescriptor(kind=kind, location=location, value_ref=ref)

    authorization = entry.header("Authorization")
    if authorization and authorization.lower().startswith("bearer "):
        return stored(AuthKind.BEARER, "Authorization", authorization[7:].strip())

    for name, value in sorted(entry.request_headers.items()):
        if API_KEY_HEADER.match(name) and value:
            return stored(AuthKind.API_KEY_HEADER, name, value)

    cookie = entry.header("Cookie")
    if cookie:
        for part in cookie.split(";"):
            name, _, value = part.strip().partition("=")
            if name and SESSION_COOKIE.search(name):
                return stored(AuthKind.COOKIE, name, value)

    return AuthDescriptor()


# Packaging


def _query_kind(value: str) -> str:
    if value.lower() in ("true", "false"):
        return "boolean"
    if _NUMBER.match(value):
        return "number"
    return "string"


def _infer_query(entries: list[CaptureEntry]) -> dict[str, QueryParam]:
    seen: dict[str, set[str]] = defaultdict(set)
    presence: dict[str, int] = defaultdict(int)
    for entry in entries:
        names = set()
        for name, value in parse_qsl(urlsplit(entry.url).query, keep_blank_values=True):
            seen[name].add(_query_kind(value))
            names.add(name)
        for name in names:
            presence[name] += 1
    schema: dict[str, QueryParam] = {}
    for name in sorted(seen):
        kinds = seen[name]
        kind = kinds.pop() if len(kinds) == 1 else "string"
        required = presence[name] == len(entries)
        schema[name] = QueryParam(kind=kind, required=required)  # type: ignore[arg-type]
    return schema


def _body_shape(raw: bytes | None, truncated: bool = False) -> ResponseShape | None:
    if raw is None or truncated:
        return None
    try:
        return infer_shape_from_bytes(raw)
    except NotStructured:
        return None


def _describe(method: str, template: str, shape: ResponseShape) -> str:
    verb = {"GET": "Fetch", "POST": "Create or submit", "PUT": "Replace", "PATCH": "Update"}
    resource = " ".join(s for s in _split(template) if not s.startswith("{")) or "root"
    action = verb.get(method, method.title())
    if shape.kind == "object" and shape.fields:
        return f"{action} {resource}; returns {', '.join(sorted(shape.fields))}"
    if shape.kind == "array" and shape.element and shape.element.kind == "object":
        names = ", ".join(sorted(shape.element.fields or {}))
        return f"{action} {resource}; returns a list of items with {names}"
    return f"{action} {resource}; returns {shape.kind}"


def _example(entry: CaptureEntry) -> EndpointExample:
    parts = urlsplit(entry.url)
    response: Any = None
    if entry.response_body and not entry.response_truncated:
        if len(entry.response_body) <= EXAMPLE_BODY_CAP:
            try:
                response = json.loads(entry.response_body)
            except (json.JSONDecodeError, UnicodeDecodeError):
                response = None
    return EndpointExample(
        path=parts.path or "/", query=dict(parse_qsl(parts.query)), response=response
    )


def _build_endpoint(
    method: str, group: NormalizedPath, entries: list[CaptureEntry], vault: CredentialVault | None
) -> EndpointTemplate:
    response: ResponseShape | None = None
    body: ResponseShape | None = None
    auth = AuthDescriptor()
    for entry in entries:
        shape = _body_shape(entry.response_body, entry.response_truncated)
        shape = shape or ResponseShape(kind="string")
        response = shape if response is None else unify_shapes(response, shape)
        if method != "GET":
            req = _body_shape(entry.request_body)
            if req is not None:
                body = req if body is None else unify_shapes(body, req)
        found = extract_auth(entry, vault)
        if _AUTH_PRIORITY[found.kind] > _AUTH_PRIORITY[auth.kind]:
            auth = found
    assert response is not None
    return EndpointTemplate(
        method=method,
        path_template=group.template,
        path_params=group.params,
        query_schema=_infer_query(entries),
        body_schema=body,
        response_schema=response,
        auth=auth,
        safe=method == "GET",
        description=_describe(method, group.template, response),
        example=_example(entries[0]),
    )


def distill(
    entries: list[CaptureEntry],
    *,
    contributor: str,
    now: float,
    vault: CredentialVault | None = None,
) -> list[SkillPackage]:
    """
    Turn filtered API entries into one skill package per host.

    Raises:
        NoApiEntries: ``entries`` is empty
    """
    if not entries:
        raise NoApiEntries("No API entries to distill")

    by_host: dict[str, list[CaptureEntry]] = defaultdict(list)
    for entry in entries:
        by_host[(urlsplit(entry.url).hostname or "").lower()].append(entry)

    packages: list[SkillPackage] = []
    for host in sorted(by_host):
        host_entries = by_host[host]
        groups = normalize_paths([urlsplit(e.url).path or "/" for e in host_entries])
        template_of = {sample: g for g in groups for sample in g.samples}

        buckets: dict[tuple[str, str], list[CaptureEntry]] = defaultdict(list)
        for entry in host_entries:
            group = template_of[urlsplit(entry.url).path or "/"]
            buckets[(entry.method, group.template)].append(entry)

        by_template = {g.template: g for g in groups}
        endpoints = [
            _build_endpoint(method, by_template[template], bucket, vault)
            for (method, template), bucket in sorted(
                buckets.items(), key=lambda item: (item[0][1], item[0][0])
            )
        ]
        auth_local = _distinct_auth(endpoints)
        package = SkillPackage(
            domain=host,
            endpoints=endpoints,
            auth_local=auth_local,
            contributor=contributor,
            created_at=now,
        )
        package.manifest_text = render_manifest(package)
        packages.append(package)
        logger.info("skill_distilled", domain=host, endpoints=len(endpoints))
    return packages


def _distinct_auth(endpoints: list[EndpointTemplate]) -> list[AuthDescriptor]:
    seen: dict[str, AuthDescriptor] = {}
    for ep in endpoints:
        if ep.auth.kind != AuthKind.NONE and ep.auth.value_ref:
            seen.setdefault(ep.auth.value_ref, ep.auth)
    return [seen[ref] for ref in sorted(seen)]


class MergeDelta(BaseModel):
    """What an incoming package changed about an existing one"""

    new_endpoints: list[str] = Field(default_factory=list)
    changed_endpoints: list[str] = Field(default_factory=list)
    added_lines: list[str] = Field(default_factory=list)
    removed_lines: list[str] = Field(default_factory=list)
    total_lines_after: int = 0

    @property
    def changed_line_count(self) -> int:
        return len(self.added_lines) + len(self.removed_lines)

    @property
    def empty(self) -> bool:
        return not (self.new_endpoints or self.changed_endpoints or self.changed_line_count)


def _merge_endpoint(existing: EndpointTemplate, incoming: EndpointTemplate) -> EndpointTemplate:
    query = dict(existing.query_schema)
    for name, param in incoming.query_schema.items():
        # params the existing samples never sent cannot be required
        query.setdefault(name, param.model_copy(update={"required": False}))
    body = existing.body_schema
    if incoming.body_schema is not None:
        body = incoming.body_schema if body is None else extend_shape(body, incoming.body_schema)
    auth = existing.auth if existing.auth.kind != AuthKind.NONE else incoming.auth
    return existing.model_copy(
        update={
            "query_schema": dict(sorted(query.items())),
            "body_schema": body,
            "response_schema": extend_shape(existing.response_schema, incoming.response_schema),
            "auth": auth,
            "example": existing.example or incoming.example,
        }
    )


def merge_skills(existing: SkillPackage, incoming: SkillPackage) -> tuple[SkillPackage, MergeDelta]:
    """
    Merge an incoming package into an existing one for the same domain.

    Endpoint identity is (method, path template). Overlapping endpoints keep
    the existing schema and gain fields only the incoming side has.

    Raises:
        DomainMismatch: The packages describe different domains
    """
    if existing.domain != incoming.domain:
        raise DomainMismatch(
            f"Cannot merge {incoming.domain} into {existing.domain}",
            existing=existing.domain,
            incoming=incoming.domain,
        )

    merged: dict[str, EndpointTemplate] = {e.key: e for e in existing.endpoints}
    delta = MergeDelta()
    for ep in incoming.endpoints:
        current = merged.get(ep.key)
        if current is None:
            merged[ep.key] = ep
            delta.new_endpoints.append(ep.key)
            continue
        updated = _merge_endpoint(current, ep)
        if updated != current:
            merged[ep.key] = updated
            delta.changed_endpoints.append(ep.key)

    endpoints = sorted(merged.values(), key=lambda e: (e.path_template, e.method))
    before, after = schema_lines(existing.endpoints), schema_lines(endpoints)
    before_set, after_set = set(before), set(after)
    delta.added_lines = [line for line in after if line not in before_set]
    delta.removed_lines = [line for line in before if line not in after_set]
    delta.total_lines_after = len(after)

    auth = {a.value_ref: a for a in [*existing.auth_local, *incoming.auth_local] if a.value_ref}
    package = existing.model_copy(
        update={"endpoints": endpoints, "auth_local": [auth[r] for r in sorted(auth)]}
    )
    package.manifest_text = render_manifest(package)
    return package, delta


# Rendering


def _shape_block(shape: ResponseShape, indent: int = 0) -> list[str]:
    pad = "  " * indent
    mark = "?" if shape.optional else ""
    if shape.kind == "object":
        if not shape.fields:
            return [f"{pad}{{}}{mark}"]
        lines = [f"{pad}{{{mark}"]
        for name in sorted(shape.fields):
            child = shape.fields[name]
            inner = _shape_block(child, indent + 1)
            inner[0] = f"{'  ' * (indent + 1)}{name}: {inner[0].lstrip()}"
            lines.extend(inner)
        lines.append(f"{pad}}}")
        return lines
    if shape.kind == "array" and shape.element is not None:
        inner = _shape_block(shape.element, indent)
        inner[0] = f"{pad}[{mark}] " + inner[0].lstrip()
        return inner
    return [f"{pad}{shape.kind}{mark}"]


def render_manifest(package: SkillPackage) -> str:
    """Deterministic Markdown documentation, one section per endpoint"""
    out = [f"# {package.domain}", "", f"Routes observed on {package.domain}.", ""]
    for ep in sorted(package.endpoints, key=lambda e: (e.path_template, e.method)):
        out += [f"## {ep.method} {ep.path_template}", "", ep.description, ""]
        rows = [f"| {p.name} | path | {p.kind.value} | yes |" for p in ep.path_params]
        rows += [
            f"| {name} | query | {q.kind} | {'yes' if q.required else 'no'} |"
            for name, q in sorted(ep.query_schema.items())
        ]
        if rows:
            out += ["| Parameter | In | Kind | Required |", "|---|---|---|---|", *rows, ""]
        where = f" ({ep.auth.location})" if ep.auth.location else ""
        out += [f"Auth: {ep.auth.kind.value}{where}", ""]
        if ep.body_schema is not None:
            out += ["Request body:", "", "```", *_shape_block(ep.body_schema), "```", ""]
        out += ["Response:", "", "```", *_shape_block(ep.response_schema), "```", ""]
    return "\n".join(out).rstrip() + "\n"


_TS_KIND = {"string": "string", "number": "number", "boolean": "boolean", "null": "null"}


def _ts_type(shape: ResponseShape) -> str:
    if shape.kind == "object":
        fields = shape.fields or {}
        parts = [
            f"{json.dumps(n)}{'?' if s.optional else ''}: {_ts_type(s)}"
            for n, s in sorted(fields.items())
        ]
        return "{ " + "; ".join(parts) + " }" if parts else "Record<string, never>"
    if shape.kind == "array" and shape.element is not None:
        return f"Array<{_ts_type(shape.element)}>"
    return _TS_KIND[shape.kind]


def _ts_name(ep: EndpointTemplate) -> str:
    words = [w for s in _split(ep.path_template) for w in re.split(r"[^A-Za-z0-9]+", s) if w]
    words = [w for w in words if not w.isdigit()]
    return ep.method.lower() + "".join(w[:1].upper() + w[1:] for w in words)


def render_client_stub(package: SkillPackage) -> str:
    """TypeScript-flavoured client stub; documentation only, never executed"""
    out = [f"// Client for {package.domain}", f'const BASE = "https://{package.domain}";', ""]
    for ep in sorted(package.endpoints, key=lambda e: (e.path_template, e.method)):
        args = [
            f"{p.name}: {'number' if p.kind == ParamKind.INTEGER else 'string'}"
            for p in ep.path_params
        ]
        if ep.query_schema:
            args.append("query: Record<string, string | number | boolean> = {}")
        if ep.body_schema is not None:
            args.append(f"body: {_ts_type(ep.body_schema)}")
        path = re.sub(r"\{([A-Za-z0-9_]+)\}", r"${\1}", ep.path_template)
        out += [
            f"/** {ep.description} */",
            f"export async function {_ts_name(ep)}({', '.join(args)}): "
            f"Promise<{_ts_type(ep.response_schema)}> {{",
            f"  const url = new URL(`${{BASE}}{path}`);",
        ]
        if ep.query_schema:
            out.append(
                "  Object.entries(query).forEach(([k, v]) => url.searchParams.set(k, String(v)));"
            )
        init = f'{{ method: "{ep.method}"'
        if ep.body_schema is not None:
            init += ', body: JSON.stringify(body), headers: { "Content-Type": "application/json" }'
        out += [f"  const res = await fetch(url, {init} }});", "  return res.json();", "}", ""]
    return "\n".join(out)


# Skill directory


def write_skill_dir(package: SkillPackage, directory: Path) -> Path:
    """
    Write ``manifest.md``, ``endpoints.json``, ``api.ts`` and ``auth.local.json``.

    ``auth.local.json`` holds vault references only and is created mode 0600.
    """
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "manifest.md").write_text(package.manifest_text or render_manifest(package))
    (directory / "endpoints.json").write_text(
        json.dumps(package.publishable(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    )
    (directory / "api.ts").write_text(render_client_stub(package))
    auth_path = directory / "auth.local.json"
    fd = os.open(auth_path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    with os.fdopen(fd, "w") as f:
        json.dump([a.model_dump(mode="json") for a in package.auth_local], f, indent=2)
    os.chmod(auth_path, 0o600)
    logger.debug("skill_dir_written", path=str(directory), domain=package.domain)
    return directory


def read_skill_dir(directory: Path) -> SkillPackage:
    data = json.loads((directory / "endpoints.json").read_text())
    manifest = directory / "manifest.md"
    if manifest.exists():
        data["manifest_text"] = manifest.read_text()
    auth_path = directory / "auth.local.json"
    if auth_path.exists():
        data["auth_local"] = json.loads(auth_path.read_text())
    return SkillPackage.model_validate(data)
