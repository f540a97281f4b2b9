"""Minimal PLY reader/writer (ascii and binary little-endian).

Elements are returned as ``{element: {property: array}}``.  Scalar properties
become 1-D arrays; list properties become 2-D arrays when every row has the
same length, otherwise a list of 1-D arrays.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import MalformedHeader, TruncatedBody, UnsupportedEncoding
from ..formats import atomic_write_bytes

PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}
_NUMPY_TO_PLY = {"i1": "char", "u1": "uchar", "i2": "short", "u2": "ushort",
                 "i4": "int", "u4": "uint", "f4": "float", "f8": "double"}


@dataclass
class PlyProperty:
    name: str
    dtype: str
    count_dtype: str | None = None  # set for list properties

    @property
    def is_list(self):
        return self.count_dtype is not None


@dataclass
class PlyElement:
    name: str
    count: int
    properties: list[PlyProperty] = field(default_factory=list)


@dataclass
class PlyHeader:
    fmt: str
    elements: list[PlyElement]
    comments: list[str]
    size: int  # header length in bytes


def parse_header(f) -> PlyHeader:
    magic = f.readline()
    if magic.strip() != b"ply":
        raise MalformedHeader("missing 'ply' magic")
    size = len(magic)
    fmt = None
    elements: list[PlyElement] = []
    comments = []
    while True:
        raw = f.readline()
        if not raw:
            raise MalformedHeader("header not terminated by end_header")
        size += len(raw)
        try:
            line = raw.decode("ascii").strip()
        except UnicodeDecodeError:
            raise MalformedHeader("non-ascii header line") from None
        if not line:
            continue
        words = line.split()
        key = words[0]
        if key == "end_header":
            break
        if key in ("comment", "obj_info"):
            comments.append(line[len(key):].strip())
        elif key == "format":
            if len(words) != 3:
                raise MalformedHeader(f"bad format line: {line!r}")
            fmt = words[1]
            if fmt == "binary_big_endian":
                raise UnsupportedEncoding("big-endian PLY is not supported")
            if fmt not in ("ascii", "binary_little_endian"):
                raise MalformedHeader(f"unknown PLY format {fmt!r}")
        elif key == "element":
            if len(words) != 3:
                raise MalformedHeader(f"bad element line: {line!r}")
            try:
                count = int(words[2])
            except ValueError:
                raise MalformedHeader(f"bad element count: {line!r}") from None
            elements.append(PlyElement(words[1], count))
        elif key == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            try:
                if words[1] == "list":
                    prop = PlyProperty(words[4], PLY_TYPES[words[3]], PLY_TYPES[words[2]])
                else:
                    prop = PlyProperty(words[2], PLY_TYPES[words[1]])
            except (IndexError, KeyError):
                raise MalformedHeader(f"bad property line: {line!r}") from None
            elements[-1].properties.append(prop)
        else:
            raise MalformedHeader(f"unexpected header line: {line!r}")
    if fmt is None:
        raise MalformedHeader("missing format line")
    return PlyHeader(fmt, elements, comments, size)


def read_ply(path):
    """Read a PLY file; returns ``(elements, header)``."""
    data = Path(path).read_bytes()
    stream = io.BytesIO(data)
    header = parse_header(stream)
    body = data[header.size:]
    if header.fmt == "ascii":
        return _read_ascii(body, header), header
    return _read_binary(body, header), header


def _read_binary(body: bytes, header: PlyHeader):
    out = {}
    pos = 0
    for el in header.elements:
        if not any(p.is_list for p in el.properties):
            dt = np.dtype([(p.name, "<" + p.dtype) for p in el.properties])
            nbytes = dt.itemsize * el.count
            if pos + nbytes > len(body):
                raise TruncatedBody(f"element {el.name!r}: body ends early")
            arr = np.frombuffer(body, dtype=dt, count=el.count, offset=pos)
            pos += nbytes
            out[el.name] = {p.name: np.array(arr[p.name]) for p in el.properties}
        else:
            values, pos = _read_binary_lists(body, pos, el)
            out[el.name] = values
    return out


def _read_binary_lists(body, pos, el):
    # Fast path: every list in the element has the same length as in row 0.
    if el.count == 0:
        return {p.name: np.zeros((0, 0) if p.is_list else 0, dtype=p.dtype) for p in el.properties}, pos
    fields, p0 = [], pos
    for p in el.properties:
        if p.is_list:
            cdt = np.dtype("<" + p.count_dtype)
            if p0 + cdt.itemsize > len(body):
                raise TruncatedBody(f"element {el.name!r}: body ends early")
            n = int(np.frombuffer(body, dtype=cdt, count=1, offset=p0)[0])
            fields.append((f"__n_{p.name}", cdt))
            fields.append((p.name, "<" + p.dtype, (n,)))
            p0 += cdt.itemsize + n * np.dtype(p.dtype).itemsize
        else:
            fields.append((p.name, "<" + p.dtype))
            p0 += np.dtype(p.dtype).itemsize
    dt = np.dtype(fields)
    if pos + dt.itemsize * el.count <= len(body):
        arr = np.frombuffer(body, dtype=dt, count=el.count, offset=pos)
        lens = [(p, arr[f"__n_{p.name}"]) for p in el.properties if p.is_list]
        if all(np.all(n == dt[p.name].shape[0]) for p, n in lens):
            out = {}
            for p in el.properties:
                a = np.array(arr[p.name])
                out[p.name] = a.reshape(el.count, -1) if p.is_list else a
            return out, pos + dt.itemsize * el.count

    # Slow path: variable-length lists.
    cols = {p.name: [] for p in el.properties}
    for _ in range(el.count):
        for p in el.properties:
            if p.is_list:
                cdt = np.dtype("<" + p.count_dtype)
                if pos + cdt.itemsize > len(body):
                    raise TruncatedBody(f"element {el.name!r}: body ends early")
                n = int(np.frombuffer(body, dtype=cdt, count=1, offset=pos)[0])
                pos += cdt.itemsize
                idt = np.dtype("<" + p.dtype)
                if pos + n * idt.itemsize > len(body):
                    raise TruncatedBody(f"element {el.name!r}: body ends early")
                cols[p.name].append(np.frombuffer(body, dtype=idt, count=n, offset=pos).copy())
                pos += n * idt.itemsize
            else:
                sdt = np.dtype("<" + p.dtype)
                if pos + sdt.itemsize > len(body):
                    raise TruncatedBody(f"element {el.name!r}: body ends early")
                cols[p.name].append(np.frombuffer(body, dtype=sdt, count=1, offset=pos)[0])
                pos += sdt.itemsize
    out = {}
    for p in el.properties:
        out[p.name] = cols[p.name] if p.is_list else np.array(cols[p.name], dtype=p.dtype)
    return out, pos


def _read_ascii(body: bytes, header: PlyHeader):
    lines = [ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip()]
    out = {}
    row = 0
    for el in header.elements:
        rows = lines[row:row + el.count]
        if len(rows) < el.count:
            raise TruncatedBody(f"element {el.name!r}: expected {el.count} rows, found {len(rows)}")
        row += el.count
        if not any(p.is_list for p in el.properties):
            try:
                table = np.array([r.split() for r in rows], dtype=np.float64).reshape(el.count, -1)
            except ValueError:
                raise TruncatedBody(f"element {el.name!r}: malformed ascii row") from None
            if el.count and table.shape[1] != len(el.properties):
                raise TruncatedBody(f"element {el.name!r}: wrong number of columns")
            out[el.name] = {p.name: table[:, i].astype(p.dtype) if el.count else np.zeros(0, p.dtype)
                            for i, p in enumerate(el.properties)}
            continue
        cols = {p.name: [] for p in el.properties}
        for r in rows:
            toks = r.split()
            k = 0
            try:
                for p in el.properties:
                    if p.is_list:
                        n = int(toks[k])
                        vals = toks[k + 1:k + 1 + n]
                        if len(vals) != n:
                            raise IndexError
                        cols[p.name].append(np.array([float(v) for v in vals]).astype(p.dtype))
                        k += 1 + n
                    else:
                        cols[p.name].append(float(toks[k]))
                        k += 1
            except (IndexError, ValueError):
                raise TruncatedBody(f"element {el.name!r}: malformed ascii row {r!r}") from None
        res = {}
        for p in el.properties:
            if p.is_list:
                lens = {len(a) for a in cols[p.name]}
                res[p.name] = np.stack(cols[p.name]) if len(lens) == 1 else cols[p.name]
            else:
                res[p.name] = np.array(cols[p.name]).astype(p.dtype)
        out[el.name] = res
    return out


def write_ply(path, elements, binary=True, comments=()):
    """Write elements given as ``[(name, {prop: array})]``.

    2-D arrays are written as list properties with a uchar count.
    """
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0"]
    header += [f"comment {c}" for c in comments]
    prepared = []
    for name, props in elements:
        cols = {k: np.asarray(v) for k, v in props.items()}
        counts = {a.shape[0] for a in cols.values()}
        if len(counts) > 1:
            raise ValueError(f"element {name!r}: property lengths differ")
        count = counts.pop() if counts else 0
        header.append(f"element {name} {count}")
        for k, a in cols.items():
            code = a.dtype.str[1:]
            if code not in _NUMPY_TO_PLY:
                raise ValueError(f"property {k!r}: unsupported dtype {a.dtype}")
            if a.ndim == 2:
                header.append(f"property list uchar {_NUMPY_TO_PLY[code]} {k}")
            else:
                header.append(f"property {_NUMPY_TO_PLY[code]} {k}")
        prepared.append((count, cols))
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    chunks = [head]
    for count, cols in prepared:
        if binary:
            fields, values = [], []
            for k, a in cols.items():
                if a.ndim == 2:
                    fields.append((f"__n_{k}", "u1"))
                    values.append(np.full(count, a.shape[1], dtype=np.uint8))
                    fields.append((k, "<" + a.dtype.str[1:], (a.shape[1],)))
                else:
                    fields.append((k, "<" + a.dtype.str[1:]))
                values.append(a)
            rec = np.empty(count, dtype=np.dtype(fields))
            for (fname, *_), v in zip(fields, values):
                rec[fname] = v
            chunks.append(rec.tobytes())
        else:
            text_cols = []
            for k, a in cols.items():
                if a.ndim == 2:
                    text_cols.append([f"{a.shape[1]} " + " ".join(map(_fmt, r)) for r in a.tolist()])
                else:
                    text_cols.append([_fmt(x) for x in a.tolist()])
            rows = [" ".join(r) for r in zip(*text_cols)]
            chunks.append(("".join(r + "\n" for r in rows)).encode("ascii"))
    data = b"".join(chunks)
    atomic_write_bytes(path, data)
    return data


def _fmt(x):
    return repr(x) if isinstance(x, float) else str(x)
