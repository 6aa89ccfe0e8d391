"""Shared builders: hand-constructed PE golden files and toy datasets."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from rulemorph.feature_model import BENIGN, Dataset, Feature, FeatureSchema, POSITIVE

TEXT_CHARACTERISTICS = 0x60000020  # code | execute | read
DATA_CHARACTERISTICS = 0xC0000040  # initialized data | read | write


def _align(value: int, alignment: int) -> int:
    return (value + alignment - 1) // alignment * alignment


def _import_section(imports, base_rva: int, plus: bool) -> bytes:
    thunk_size = 8 if plus else 4
    ordinal_flag = 1 << 63 if plus else 1 << 31
    desc_end = 20 * (len(imports) + 1)
    offset = desc_end
    oft_offsets, ft_offsets = [], []
    for _dll, funcs in imports:
        oft_offsets.append(offset)
        offset += thunk_size * (len(funcs) + 1)
        ft_offsets.append(offset)
        offset += thunk_size * (len(funcs) + 1)
    name_offsets = {}
    for d, (_dll, funcs) in enumerate(imports):
        for f, fn in enumerate(funcs):
            if isinstance(fn, str):
                name_offsets[(d, f)] = offset
                offset += 2 + len(fn) + 1
    dll_offsets = []
    for dll, _funcs in imports:
        dll_offsets.append(offset)
        offset += len(dll) + 1
    buf = bytearray(offset)
    fmt = "<Q" if plus else "<I"
    for d, (dll, funcs) in enumerate(imports):
        struct.pack_into(
            "<IIIII",
            buf,
            20 * d,
            base_rva + oft_offsets[d],
            0,
            0,
            base_rva + dll_offsets[d],
            base_rva + ft_offsets[d],
        )
        for f, fn in enumerate(funcs):
            if isinstance(fn, int):
                entry = ordinal_flag | fn
            else:
                entry = base_rva + name_offsets[(d, f)]
            struct.pack_into(fmt, buf, oft_offsets[d] + f * thunk_size, entry)
            struct.pack_into(fmt, buf, ft_offsets[d] + f * thunk_size, entry)
        for f, fn in enumerate(funcs):
            if isinstance(fn, str):
                off = name_offsets[(d, f)]
                buf[off + 2 : off + 2 + len(fn)] = fn.encode("ascii")
        buf[dll_offsets[d] : dll_offsets[d] + len(dll)] = dll.encode("ascii")
    return bytes(buf)


def _export_section(exports, base_rva: int) -> bytes:
    n = len(exports)
    funcs_off = 40
    names_off = funcs_off + 4 * n
    ords_off = names_off + 4 * n
    strings_off = ords_off + 2 * n
    offset = strings_off
    string_offsets = []
    for name in exports:
        string_offsets.append(offset)
        offset += len(name) + 1
    buf = bytearray(offset)
    struct.pack_into(
        "<IIHHIIIIIII",
        buf,
        0,
        0,
        0,
        0,
        0,
        0,
        1,
        n,
        n,
        base_rva + funcs_off,
        base_rva + names_off,
        base_rva + ords_off,
    )
    for i, name in enumerate(exports):
        struct.pack_into("<I", buf, funcs_off + 4 * i, base_rva + 0x10000 + i)
        struct.pack_into("<I", buf, names_off + 4 * i, base_rva + string_offsets[i])
        struct.pack_into("<H", buf, ords_off + 2 * i, i)
        buf[string_offsets[i] : string_offsets[i] + len(name)] = name.encode("ascii")
    return bytes(buf)


def build_pe(
    sections=None,
    *,
    pe_plus: bool = False,
    machine: int | None = None,
    timestamp: int = 0x5F000000,
    subsystem: int = 2,
    checksum: int = 0x1234,
    dll_characteristics: int = 0x8140,
    entry_rva: int = 0x1000,
    size_of_code: int = 0x200,
    image_base: int | None = None,
    imports=None,
    exports=None,
    overlay: bytes = b"",
    truncate_import_dir: bool = False,
) -> bytes:
    """Assemble a minimal but well-formed PE32/PE32+ image byte by byte."""
    file_align, sect_align = 0x200, 0x1000
    if sections is None:
        sections = [(".text", b"\xcc" * 64, TEXT_CHARACTERISTICS)]
    machine = machine if machine is not None else (0x8664 if pe_plus else 0x14C)
    image_base = image_base if image_base is not None else (0x140000000 if pe_plus else 0x400000)

    placed = []  # name, content, characteristics, va
    va = sect_align
    for name, content, chars in sections:
        placed.append((name, content, chars, va))
        va += _align(max(len(content), 1), sect_align)
    import_dir = export_dir = (0, 0)
    if imports is not None:
        content = _import_section(imports, va, pe_plus)
        placed.append((".idata", content, DATA_CHARACTERISTICS, va))
        import_dir = (va, len(content))
        va += _align(len(content), sect_align)
    if exports is not None:
        content = _export_section(exports, va)
        placed.append((".edata", content, DATA_CHARACTERISTICS, va))
        export_dir = (va, len(content))
        va += _align(len(content), sect_align)
    if truncate_import_dir:
        import_dir = (va + 0x5000, 64)  # points past every section

    opt_size = 0xF0 if pe_plus else 0xE0
    e_lfanew = 0x40
    headers_end = e_lfanew + 4 + 20 + opt_size + 40 * len(placed)
    size_of_headers = _align(headers_end, file_align)

    raw_ptr = size_of_headers
    raw_spans = []
    for _name, content, _chars, _va in placed:
        raw_size = _align(len(content), file_align)
        raw_spans.append((raw_ptr, raw_size))
        raw_ptr += raw_size
    size_of_image = _align(va, sect_align)

    buf = bytearray(raw_ptr)
    buf[0:2] = b"MZ"
    struct.pack_into("<I", buf, 0x3C, e_lfanew)
    buf[e_lfanew : e_lfanew + 4] = b"PE\x00\x00"
    struct.pack_into(
        "<HHIIIHH",
        buf,
        e_lfanew + 4,
        machine,
        len(placed),
        timestamp,
        0,
        0,
        opt_size,
        0x0102,
    )
    opt = e_lfanew + 24
    struct.pack_into("<H", buf, opt, 0x20B if pe_plus else 0x10B)
    struct.pack_into("<I", buf, opt + 4, size_of_code)
    struct.pack_into("<I", buf, opt + 16, entry_rva)
    if pe_plus:
        struct.pack_into("<Q", buf, opt + 24, image_base)
    else:
        struct.pack_into("<I", buf, opt + 28, image_base)
    struct.pack_into("<I", buf, opt + 32, sect_align)
    struct.pack_into("<I", buf, opt + 36, file_align)
    struct.pack_into("<I", buf, opt + 56, size_of_image)
    struct.pack_into("<I", buf, opt + 60, size_of_headers)
    struct.pack_into("<I", buf, opt + 64, checksum)
    struct.pack_into("<H", buf, opt + 68, subsystem)
    struct.pack_into("<H", buf, opt + 70, dll_characteristics)
    dirs_off = 112 if pe_plus else 96
    struct.pack_into("<I", buf, opt + (108 if pe_plus else 92), 16)
    struct.pack_into("<II", buf, opt + dirs_off, *export_dir)
    struct.pack_into("<II", buf, opt + dirs_off + 8, *import_dir)

    table = opt + opt_size
    for i, (name, content, chars, sec_va) in enumerate(placed):
        off = table + 40 * i
        buf[off : off + 8] = name.encode("ascii")[:8].ljust(8, b"\x00")
        ptr, raw_size = raw_spans[i]
        struct.pack_into("<IIII", buf, off + 8, max(len(content), 1), sec_va, raw_size, ptr)
        struct.pack_into("<I", buf, off + 36, chars)
        buf[ptr : ptr + len(content)] = content
    return bytes(buf) + overlay


def golden_corpus() -> dict[str, bytes]:
    """Hand-built PE variants exercising the parser's surface."""
    rng = np.random.default_rng(1718)
    return {
        "minimal_pe32": build_pe(),
        "two_sections_overlay": build_pe(
            sections=[
                (".text", b"\x90" * 300, TEXT_CHARACTERISTICS),
                (".data", bytes(range(256)), DATA_CHARACTERISTICS),
            ],
            overlay=b"J" * 100,
        ),
        "pe32plus_imports_exports": build_pe(
            pe_plus=True,
            imports=[("KERNEL32.dll", ["CreateFileW", "ReadFile", 7]), ("user32.dll", ["MessageBoxA"])],
            exports=["DllRegisterServer", "StartWork"],
        ),
        "pe32_imports": build_pe(
            imports=[("advapi32.dll", ["RegOpenKeyExA", "RegQueryValueExA"])],
        ),
        "high_entropy_section": build_pe(
            sections=[(".packed", rng.integers(0, 256, size=4096, dtype=np.uint8).tobytes(), TEXT_CHARACTERISTICS)],
        ),
        "truncated_import_dir": build_pe(truncate_import_dir=True),
    }


@pytest.fixture(scope="session")
def pe_corpus() -> dict[str, bytes]:
    return golden_corpus()


def toy_dataset(rows, labels=None, kinds=None, bin_edges=None, name="toy") -> Dataset:
    """Small dataset from literal rows; all-numeric schema by default."""
    arr = np.asarray(rows, dtype=np.float64)
    d = arr.shape[1]
    feats = []
    for i in range(d):
        kind = kinds[i] if kinds else "numeric"
        edges = tuple(bin_edges[i]) if bin_edges and bin_edges[i] else None
        feats.append(Feature(f"f{i}", kind=kind, bin_edges=edges))
    schema = FeatureSchema(tuple(feats))
    if labels is None:
        labels = np.full(arr.shape[0], POSITIVE)
    return Dataset(schema, arr, np.asarray(labels, dtype=int), family_name=name)


def split_pos_neg(X, y, schema) -> tuple[Dataset, Dataset]:
    y = np.asarray(y, dtype=bool)
    pos = Dataset(schema, X[y], np.full(int(y.sum()), POSITIVE))
    neg = Dataset(schema, X[~y], np.full(int((~y).sum()), BENIGN))
    return pos, neg


def planted_concept_case(case_seed: int):
    """Noise-free dataset labeled by a conjunction drawn from the grow
    vocabulary itself (d <= 10, n <= 400, concept size <= 3)."""
    from rulemorph.feature_model import discretize
    from rulemorph.ripper import Rule, candidate_conditions

    rng = np.random.default_rng(case_seed)
    while True:
        d = int(rng.integers(2, 11))
        n = int(rng.integers(60, 401))
        X = rng.uniform(0, 10, size=(n, d))
        schema = FeatureSchema.all_numeric([f"f{i}" for i in range(d)])
        binned = discretize(Dataset(schema, X, np.zeros(n, dtype=int)), 8)
        conds = candidate_conditions(binned, X)
        m = int(rng.integers(1, 4))
        feats = rng.choice(d, size=min(m, d), replace=False)
        chosen = []
        usable = True
        for f in feats:
            fc = [c for c in conds if c.feature == f and c.op in ("le", "ge")]
            if not fc:
                usable = False
                break
            chosen.append(fc[int(rng.integers(len(fc)))])
        if not usable:
            continue
        y = Rule(tuple(chosen)).covers(X)
        if 0.15 <= y.mean() <= 0.85:
            return split_pos_neg(X, y, binned)


def tiny_binary_case(case_seed: int):
    """<=4 binary features, <=24 samples, labels a noise-free 2-term DNF."""
    rng = np.random.default_rng(case_seed)
    while True:
        d = int(rng.integers(2, 5))
        n = int(rng.integers(8, 25))
        X = rng.integers(0, 2, size=(n, d)).astype(float)

        def term():
            k = int(rng.integers(1, min(3, d) + 1))
            feats = rng.choice(d, size=k, replace=False)
            vals = rng.integers(0, 2, size=k)
            return list(zip(feats.tolist(), vals.tolist()))

        t1, t2 = term(), term()
        y = np.array(
            [
                all(row[f] == v for f, v in t1) or all(row[f] == v for f, v in t2)
                for row in X
            ]
        )
        if not (0.2 <= y.mean() <= 0.8):
            continue
        schema = FeatureSchema(
            tuple(Feature(f"f{i}", kind="categorical") for i in range(d))
        )
        pos, neg = split_pos_neg(X, y, schema)
        return pos, neg, X, y


def best_single_conjunction_accuracy(X, y) -> float:
    """Exhaustive oracle over all value-assignment conjunctions."""
    import itertools

    y = np.asarray(y, dtype=bool)
    best = (~y).mean()  # predict-negative-everywhere baseline
    for assign in itertools.product([None, 0.0, 1.0], repeat=X.shape[1]):
        if all(a is None for a in assign):
            continue
        mask = np.ones(len(X), dtype=bool)
        for f, a in enumerate(assign):
            if a is not None:
                mask &= X[:, f] == a
        best = max(best, (y[mask].sum() + (~y[~mask]).sum()) / len(X))
    return float(best)
