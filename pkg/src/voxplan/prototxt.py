"""Read and write network descriptions in prototxt text form.

The accepted grammar is the protobuf text format restricted to what the
layer set needs: scalar fields (``key: value``), repeated fields, and
nested messages (``key { ... }``, with an optional colon).  Values are
integers, floats, double-quoted strings, or bare enum identifiers.
Unknown fields inside known messages are skipped with a warning; unknown
layer types are an error.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .errors import ParseError
from .netspec import (
    DEFAULT_ELU_ALPHA,
    LayerKind,
    LayerSpec,
    NetworkSpec,
    layer_kind,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Tokenizer

_PUNCT = "{}:,;"


@dataclass(frozen=True)
class _Token:
    kind: str  # ident | number | string | punct | eof
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch in _PUNCT:
            tokens.append(_Token("punct", ch, start_line, start_col))
            i += 1
            col += 1
            continue
        if ch == '"':
            j = i + 1
            out = []
            while j < n and text[j] != '"':
                if text[j] == "\\" and j + 1 < n:
                    out.append(text[j + 1])
                    j += 2
                elif text[j] == "\n":
                    raise ParseError("unterminated string", start_line, start_col)
                else:
                    out.append(text[j])
                    j += 1
            if j >= n:
                raise ParseError("unterminated string", start_line, start_col)
            tokens.append(_Token("string", "".join(out), start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        j = i
        while j < n and text[j] not in ' \t\r\n#"' + _PUNCT:
            j += 1
        word = text[i:j]
        kind = "number" if word[0] in "+-.0123456789" else "ident"
        tokens.append(_Token(kind, word, start_line, start_col))
        col += j - i
        i = j
    tokens.append(_Token("eof", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser: token stream to a nested field list

@dataclass(frozen=True)
class _Field:
    name: str
    value: object  # int | float | str | list[_Field]
    line: int


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def parse_document(self) -> list[_Field]:
        fields = self.parse_fields()
        tok = self.peek()
        if tok.kind != "eof":
            raise ParseError("unexpected %r" % tok.text, tok.line, tok.column)
        return fields

    def parse_fields(self) -> list[_Field]:
        fields = []
        while True:
            tok = self.peek()
            if tok.kind == "eof" or tok.text == "}":
                return fields
            if tok.text in (",", ";"):
                self.advance()
                continue
            if tok.kind != "ident":
                raise ParseError("expected a field name, got %r" % tok.text, tok.line, tok.column)
            fields.append(self.parse_field())

    def parse_field(self) -> _Field:
        name_tok = self.advance()
        tok = self.peek()
        if tok.text == ":":
            self.advance()
            tok = self.peek()
        if tok.text == "{":
            self.advance()
            inner = self.parse_fields()
            close = self.advance()
            if close.text != "}":
                raise ParseError("expected '}'", close.line, close.column)
            return _Field(name_tok.text, inner, name_tok.line)
        value_tok = self.advance()
        if value_tok.kind == "string":
            return _Field(name_tok.text, value_tok.text, name_tok.line)
        if value_tok.kind == "number":
            return _Field(name_tok.text, _parse_number(value_tok), name_tok.line)
        if value_tok.kind == "ident":
            # bare enum identifiers such as MAX or SUM
            return _Field(name_tok.text, value_tok.text, name_tok.line)
        raise ParseError(
            "expected a value for field %r" % name_tok.text, value_tok.line, value_tok.column
        )


def _parse_number(tok: _Token):
    text = tok.text
    try:
        if any(c in text for c in ".eE") and not text.lstrip("+-").isdigit():
            return float(text)
        return int(text)
    except ValueError:
        raise ParseError("bad number %r" % text, tok.line, tok.column) from None


# ---------------------------------------------------------------------------
# Field-list interpretation

def _group(fields: list[_Field]) -> dict[str, list[_Field]]:
    out: dict[str, list[_Field]] = {}
    for f in fields:
        out.setdefault(f.name, []).append(f)
    return out


def _scalar(field: _Field, want, context: str):
    if isinstance(field.value, list):
        raise ParseError("%s.%s is not a scalar" % (context, field.name), field.line)
    value = field.value
    if want is float and isinstance(value, int):
        value = float(value)
    if not isinstance(value, want):
        raise ParseError(
            "%s.%s expects %s, got %r" % (context, field.name, want.__name__, field.value),
            field.line,
        )
    return value


def _take_ints(grouped, key, context, count=3, default=None):
    fields = grouped.pop(key, None)
    if fields is None:
        if default is None:
            return None
        return default
    values = [_scalar(f, int, context) for f in fields]
    if len(values) == 1:
        values = values * count
    if len(values) != count:
        raise ParseError(
            "%s.%s expects 1 or %d values, got %d" % (context, key, count, len(values)),
            fields[0].line,
        )
    return tuple(values)


def _warn_unknown(grouped, context):
    for name, fields in grouped.items():
        log.warning("line %d: skipping unknown field %s.%s", fields[0].line, context, name)


def _message(field: _Field, context: str) -> dict[str, list[_Field]]:
    if not isinstance(field.value, list):
        raise ParseError("%s must be a message" % context, field.line)
    return _group(field.value)


_ELTWISE_NAMES = {"SUM": "add", "PROD": "mul", "DIV": "div"}
_POOL_NAMES = {"MAX": "max", "AVE": "avg"}


def _interpret_layer(field: _Field) -> LayerSpec:
    if not isinstance(field.value, list):
        raise ParseError("layer must be a message", field.line)
    grouped = _group(field.value)
    ctx = "layer"
    name_f = grouped.pop("name", None)
    if not name_f:
        raise ParseError("layer without a name", field.line)
    name = _scalar(name_f[0], str, ctx)
    ctx = "layer %r" % name
    type_f = grouped.pop("type", None)
    if not type_f:
        raise ParseError("%s has no type" % ctx, field.line)
    kind = layer_kind(_scalar(type_f[0], str, ctx))
    bottoms = tuple(_scalar(f, str, ctx) for f in grouped.pop("bottom", []))
    tops = tuple(_scalar(f, str, ctx) for f in grouped.pop("top", []))
    params: dict = {}

    if kind in (LayerKind.CONVOLUTION, LayerKind.DECONVOLUTION):
        sub_f = grouped.pop("convolution_param", None)
        if not sub_f:
            raise ParseError("%s has no convolution_param" % ctx, field.line)
        sctx = ctx + ".convolution_param"
        sub = _message(sub_f[0], sctx)
        num_f = sub.pop("num_output", None)
        if not num_f:
            raise ParseError("%s lacks num_output" % sctx, sub_f[0].line)
        params["num_output"] = _scalar(num_f[0], int, sctx)
        kernel = _take_ints(sub, "kernel_size", sctx)
        if kernel is None:
            raise ParseError("%s lacks kernel_size" % sctx, sub_f[0].line)
        params["kernel"] = kernel
        params["stride"] = _take_ints(sub, "stride", sctx, default=(1, 1, 1))
        params["pad"] = _take_ints(sub, "pad", sctx, default=(0, 0, 0))
        _warn_unknown(sub, sctx)
    elif kind is LayerKind.POOLING:
        sub_f = grouped.pop("pooling_param", None)
        if not sub_f:
            raise ParseError("%s has no pooling_param" % ctx, field.line)
        sctx = ctx + ".pooling_param"
        sub = _message(sub_f[0], sctx)
        mode_f = sub.pop("pool", None)
        mode = _scalar(mode_f[0], str, sctx) if mode_f else "MAX"
        if mode not in _POOL_NAMES:
            raise ParseError("%s has unknown pool mode %r" % (sctx, mode), sub_f[0].line)
        params["mode"] = _POOL_NAMES[mode]
        window = _take_ints(sub, "kernel_size", sctx)
        if window is None:
            raise ParseError("%s lacks kernel_size" % sctx, sub_f[0].line)
        params["window"] = window
        params["stride"] = _take_ints(sub, "stride", sctx, default=window)
        _warn_unknown(sub, sctx)
    elif kind is LayerKind.ELTWISE:
        sub_f = grouped.pop("eltwise_param", None)
        op = "SUM"
        if sub_f:
            sctx = ctx + ".eltwise_param"
            sub = _message(sub_f[0], sctx)
            op_f = sub.pop("operation", None)
            if op_f:
                op = _scalar(op_f[0], str, sctx)
            _warn_unknown(sub, sctx)
        if op not in _ELTWISE_NAMES:
            raise ParseError("%s has unknown eltwise operation %r" % (ctx, op), field.line)
        params["op"] = _ELTWISE_NAMES[op]
    elif kind is LayerKind.ELU:
        sub_f = grouped.pop("elu_param", None)
        alpha = DEFAULT_ELU_ALPHA
        if sub_f:
            sub = _message(sub_f[0], ctx + ".elu_param")
            alpha_f = sub.pop("alpha", None)
            if alpha_f:
                alpha = _scalar(alpha_f[0], float, ctx + ".elu_param")
            _warn_unknown(sub, ctx + ".elu_param")
        params["alpha"] = alpha
    elif kind is LayerKind.INPUT:
        sub_f = grouped.pop("input_param", None)
        if not sub_f:
            raise ParseError("%s has no input_param" % ctx, field.line)
        sctx = ctx + ".input_param"
        sub = _message(sub_f[0], sctx)
        shape_f = sub.pop("shape", None)
        if not shape_f:
            raise ParseError("%s lacks shape" % sctx, sub_f[0].line)
        dims = [_scalar(f, int, sctx + ".shape")
                for f in _message(shape_f[0], sctx + ".shape").pop("dim", [])]
        if len(dims) != 5:
            raise ParseError(
                "%s.shape expects 5 dims, got %d" % (sctx, len(dims)), shape_f[0].line
            )
        params["shape"] = tuple(dims)
        _warn_unknown(sub, sctx)

    _warn_unknown(grouped, ctx)
    return LayerSpec(name=name, kind=kind, bottoms=bottoms, tops=tops, params=params)


def parse_network(text: str) -> NetworkSpec:
    """Parse a network description; validates wiring before returning."""
    fields = _Parser(text).parse_document()
    grouped = _group(fields)
    name = "net"
    name_f = grouped.pop("name", None)
    if name_f:
        name = _scalar(name_f[0], str, "network")
    layers = tuple(_interpret_layer(f) for f in grouped.pop("layer", []))
    _warn_unknown(grouped, "network")
    spec = NetworkSpec(name=name, layers=layers)
    spec.validate()
    return spec


# ---------------------------------------------------------------------------
# Printer

def _fmt_value(value) -> str:
    if isinstance(value, str):
        return '"%s"' % value.replace("\\", "\\\\").replace('"', '\\"')
    return repr(value)


def _emit_triple(lines, indent, key, triple):
    for v in triple:
        lines.append("%s%s: %d" % (indent, key, v))


_ELTWISE_BACK = {v: k for k, v in _ELTWISE_NAMES.items()}
_POOL_BACK = {v: k for k, v in _POOL_NAMES.items()}


def print_network(spec: NetworkSpec) -> str:
    """Emit canonical text that parses back to an equal NetworkSpec."""
    lines = ["name: %s" % _fmt_value(spec.name)]
    for layer in spec.layers:
        lines.append("layer {")
        lines.append('  name: %s' % _fmt_value(layer.name))
        lines.append('  type: %s' % _fmt_value(layer.kind.value))
        for bottom in layer.bottoms:
            lines.append("  bottom: %s" % _fmt_value(bottom))
        for top in layer.tops:
            lines.append("  top: %s" % _fmt_value(top))
        if layer.kind in (LayerKind.CONVOLUTION, LayerKind.DECONVOLUTION):
            lines.append("  convolution_param {")
            lines.append("    num_output: %d" % layer.params["num_output"])
            _emit_triple(lines, "    ", "kernel_size", layer.params["kernel"])
            _emit_triple(lines, "    ", "stride", layer.params["stride"])
            _emit_triple(lines, "    ", "pad", layer.params["pad"])
            lines.append("  }")
        elif layer.kind is LayerKind.POOLING:
            lines.append("  pooling_param {")
            lines.append("    pool: %s" % _POOL_BACK[layer.params["mode"]])
            _emit_triple(lines, "    ", "kernel_size", layer.params["window"])
            _emit_triple(lines, "    ", "stride", layer.params["stride"])
            lines.append("  }")
        elif layer.kind is LayerKind.ELTWISE:
            lines.append("  eltwise_param {")
            lines.append("    operation: %s" % _ELTWISE_BACK[layer.params["op"]])
            lines.append("  }")
        elif layer.kind is LayerKind.ELU:
            lines.append("  elu_param {")
            lines.append("    alpha: %s" % repr(float(layer.params.get("alpha", DEFAULT_ELU_ALPHA))))
            lines.append("  }")
        elif layer.kind is LayerKind.INPUT:
            lines.append("  input_param {")
            lines.append("    shape {")
            for d in layer.params["shape"]:
                lines.append("      dim: %d" % d)
            lines.append("    }")
            lines.append("  }")
        lines.append("}")
    return "\n".join(lines) + "\n"
