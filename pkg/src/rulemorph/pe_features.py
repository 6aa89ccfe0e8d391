"""Static feature extraction from Windows PE files.

A small struct-based parser reads the DOS/COFF/optional headers, the
section table, and (when well-formed) the import/export name tables. The
extractor flattens that summary plus a byte histogram into a fixed
307-feature numeric vector:

    9   header scalars
    6   section aggregates (incl. overlay size)
    35  import/export aggregates (3 counts + 32 hashed name buckets)
    256 normalized byte histogram
    1   overall byte entropy

Malformed-but-parseable directories degrade to empty lists with a warning
flag instead of failing, since real corpora contain broken samples.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .feature_model import Feature, FeatureSchema

PE32_MAGIC = 0x10B
PE32PLUS_MAGIC = 0x20B
SECTION_ENTRY_SIZE = 40
IMAGE_SCN_MEM_EXECUTE = 0x20000000

IMPORT_NAME_BUCKETS = 32
_MAX_IMPORT_DESCRIPTORS = 4096
_MAX_THUNKS = 65536
_MAX_NAME_LEN = 512


class PeFormatError(ValueError):
    """Raised when a buffer is not parseable as a PE file."""


@dataclass(frozen=True)
class SectionInfo:
    name: str
    virtual_size: int
    raw_size: int
    entropy: float
    characteristics: int


@dataclass
class PeSummary:
    machine: int
    timestamp: int
    subsystem: int
    entry_rva: int
    image_base: int
    checksum: int
    size_of_code: int
    size_of_image: int
    dll_characteristics: int
    sections: list[SectionInfo]
    imports: list[tuple[str, list[str]]]
    exports: list[str]
    overlay_size: int
    file_size: int
    warnings: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ByteHistogram:
    counts: np.ndarray
    total: int

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.shape != (256,):
            raise ValueError("histogram needs exactly 256 counts")
        if int(counts.sum()) != self.total:
            raise ValueError("histogram counts must sum to total")
        object.__setattr__(self, "counts", counts)


def shannon_entropy(counts: np.ndarray) -> float:
    """Entropy in bits per byte, 0 for empty input."""
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-(p * np.log2(p)).sum())


def byte_histogram(data: bytes) -> ByteHistogram:
    counts = np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)
    return ByteHistogram(counts.astype(np.int64), len(data))


def _u16(data: bytes, off: int) -> int:
    return struct.unpack_from("<H", data, off)[0]


def _u32(data: bytes, off: int) -> int:
    return struct.unpack_from("<I", data, off)[0]


def _u64(data: bytes, off: int) -> int:
    return struct.unpack_from("<Q", data, off)[0]


def _cstring(data: bytes, off: int) -> str:
    end = data.index(b"\x00", off, off + _MAX_NAME_LEN)
    return data[off:end].decode("latin-1")


def _rva_to_offset(rva: int, sections: list[tuple[int, int, int, int]]) -> int | None:
    # sections: (virtual_address, virtual_size, raw_pointer, raw_size)
    for va, vsize, raw_ptr, raw_size in sections:
        span = max(vsize, raw_size)
        if va <= rva < va + span:
            return raw_ptr + (rva - va)
    return None


def _parse_imports(data: bytes, rva: int, spans, plus: bool) -> list[tuple[str, list[str]]]:
    imports: list[tuple[str, list[str]]] = []
    off = _rva_to_offset(rva, spans)
    if off is None:
        raise PeFormatError("import directory outside sections")
    thunk_size = 8 if plus else 4
    ordinal_flag = 1 << 63 if plus else 1 << 31
    for _ in range(_MAX_IMPORT_DESCRIPTORS):
        oft, _ts, _fwd, name_rva, ft = struct.unpack_from("<IIIII", data, off)
        if oft == 0 and name_rva == 0 and ft == 0:
            break
        dll = _cstring(data, _require(_rva_to_offset(name_rva, spans)))
        names: list[str] = []
        thunk_off = _require(_rva_to_offset(oft or ft, spans))
        for _ in range(_MAX_THUNKS):
            entry = _u64(data, thunk_off) if plus else _u32(data, thunk_off)
            if entry == 0:
                break
            if entry & ordinal_flag:
                names.append(f"ordinal_{entry & 0xFFFF}")
            else:
                names.append(_cstring(data, _require(_rva_to_offset(entry & 0x7FFFFFFF, spans)) + 2))
            thunk_off += thunk_size
        imports.append((dll, names))
        off += 20
    return imports


def _parse_exports(data: bytes, rva: int, spans) -> list[str]:
    off = _require(_rva_to_offset(rva, spans))
    n_names = _u32(data, off + 24)
    names_rva = _u32(data, off + 32)
    names_off = _require(_rva_to_offset(names_rva, spans))
    out = []
    for i in range(min(n_names, _MAX_THUNKS)):
        name_rva = _u32(data, names_off + 4 * i)
        out.append(_cstring(data, _require(_rva_to_offset(name_rva, spans))))
    return out


def _require(off: int | None) -> int:
    if off is None:
        raise PeFormatError("rva outside sections")
    return off


def parse_pe(data: bytes) -> PeSummary:
    """Parse headers, sections, and import/export names from a PE buffer.

    Raises PeFormatError for missing MZ/PE magic or a section table that
    does not fit the buffer; truncated import/export directories only set
    a warning and leave the lists empty.
    """
    if len(data) < 64 or data[:2] != b"MZ":
        raise PeFormatError("not a PE file")
    e_lfanew = _u32(data, 0x3C)
    if e_lfanew + 24 > len(data) or data[e_lfanew : e_lfanew + 4] != b"PE\x00\x00":
        raise PeFormatError("not a PE file")
    coff = e_lfanew + 4
    machine, n_sections, timestamp, _psym, _nsym, opt_size, _chars = struct.unpack_from(
        "<HHIIIHH", data, coff
    )
    opt = coff + 20
    if opt_size < 72 or opt + 72 > len(data):
        raise PeFormatError("not a PE file: missing optional header")
    magic = _u16(data, opt)
    if magic == PE32_MAGIC:
        image_base = _u32(data, opt + 28)
        dirs_off = 96
        n_dirs_off = 92
    elif magic == PE32PLUS_MAGIC:
        image_base = _u64(data, opt + 24)
        dirs_off = 112
        n_dirs_off = 108
    else:
        raise PeFormatError("not a PE file: bad optional header magic")
    size_of_code = _u32(data, opt + 4)
    entry_rva = _u32(data, opt + 16)
    size_of_image = _u32(data, opt + 56)
    checksum = _u32(data, opt + 64)
    subsystem = _u16(data, opt + 68)
    dll_characteristics = _u16(data, opt + 70)

    warnings: list[str] = []
    table_start = opt + opt_size
    table_end = table_start + n_sections * SECTION_ENTRY_SIZE
    if table_end > len(data):
        raise PeFormatError("malformed section table")
    sections: list[SectionInfo] = []
    spans: list[tuple[int, int, int, int]] = []
    data_end = table_end
    for i in range(n_sections):
        off = table_start + i * SECTION_ENTRY_SIZE
        name_raw = data[off : off + 8]
        vsize, va, raw_size, raw_ptr = struct.unpack_from("<IIII", data, off + 8)
        characteristics = _u32(data, off + 36)
        end = raw_ptr + raw_size
        if end > len(data):
            warnings.append(f"section {i}: raw data truncated")
            raw_size = max(len(data) - raw_ptr, 0)
            end = raw_ptr + raw_size
        body = np.frombuffer(data, dtype=np.uint8, count=raw_size, offset=raw_ptr) if raw_size else np.empty(0, np.uint8)
        sections.append(
            SectionInfo(
                name=name_raw.rstrip(b"\x00").decode("latin-1"),
                virtual_size=vsize,
                raw_size=raw_size,
                entropy=shannon_entropy(np.bincount(body, minlength=256)),
                characteristics=characteristics,
            )
        )
        spans.append((va, vsize, raw_ptr, raw_size))
        data_end = max(data_end, end)
    overlay_size = len(data) - data_end

    imports: list[tuple[str, list[str]]] = []
    exports: list[str] = []
    if opt + n_dirs_off + 4 <= opt + opt_size:
        n_dirs = _u32(data, opt + n_dirs_off)
        def _dir(index: int) -> tuple[int, int]:
            if index >= n_dirs or opt + dirs_off + 8 * (index + 1) > opt + opt_size:
                return 0, 0
            return _u32(data, opt + dirs_off + 8 * index), _u32(data, opt + dirs_off + 8 * index + 4)

        exp_rva, exp_size = _dir(0)
        imp_rva, imp_size = _dir(1)
        if imp_rva and imp_size:
            try:
                imports = _parse_imports(data, imp_rva, spans, magic == PE32PLUS_MAGIC)
            except (PeFormatError, struct.error, ValueError):
                imports = []
                warnings.append("import directory truncated or malformed")
        if exp_rva and exp_size:
            try:
                exports = _parse_exports(data, exp_rva, spans)
            except (PeFormatError, struct.error, ValueError):
                exports = []
                warnings.append("export directory truncated or malformed")

    return PeSummary(
        machine=machine,
        timestamp=timestamp,
        subsystem=subsystem,
        entry_rva=entry_rva,
        image_base=image_base,
        checksum=checksum,
        size_of_code=size_of_code,
        size_of_image=size_of_image,
        dll_characteristics=dll_characteristics,
        sections=sections,
        imports=imports,
        exports=exports,
        overlay_size=overlay_size,
        file_size=len(data),
        warnings=warnings,
    )


def fnv1a_bucket(name: str, buckets: int = IMPORT_NAME_BUCKETS) -> int:
    """FNV-1a 32-bit hash of the name, reduced to a bucket index."""
    h = 2166136261
    for byte in name.encode("utf-8", "replace"):
        h = ((h ^ byte) * 16777619) & 0xFFFFFFFF
    return h % buckets


_HEADER_NAMES = [
    "hdr_machine",
    "hdr_timestamp",
    "hdr_subsystem",
    "hdr_entry_rva",
    "hdr_image_base",
    "hdr_checksum",
    "hdr_size_of_code",
    "hdr_size_of_image",
    "hdr_dll_characteristics",
]
_SECTION_NAMES = [
    "sec_count",
    "sec_entropy_mean",
    "sec_entropy_max",
    "sec_vsize_rsize_ratio_mean",
    "sec_exec_count",
    "overlay_size",
]
_IMPORT_NAMES = ["imp_dll_count", "imp_func_count", "exp_func_count"] + [
    f"imp_bucket_{i:02d}" for i in range(IMPORT_NAME_BUCKETS)
]


def pe_schema() -> FeatureSchema:
    """The fixed 307-feature layout emitted by extract_features."""
    names = (
        _HEADER_NAMES
        + _SECTION_NAMES
        + _IMPORT_NAMES
        + [f"hist_{i:03d}" for i in range(256)]
        + ["byte_entropy"]
    )
    return FeatureSchema(tuple(Feature(n) for n in names))


def extract_features(summary: PeSummary, histogram: ByteHistogram) -> np.ndarray:
    """Flatten a parsed summary plus histogram into the 307-dim layout."""
    header = [
        summary.machine,
        summary.timestamp,
        summary.subsystem,
        summary.entry_rva,
        summary.image_base,
        summary.checksum,
        summary.size_of_code,
        summary.size_of_image,
        summary.dll_characteristics,
    ]
    entropies = [s.entropy for s in summary.sections]
    ratios = [s.virtual_size / s.raw_size for s in summary.sections if s.raw_size > 0]
    section = [
        len(summary.sections),
        float(np.mean(entropies)) if entropies else 0.0,
        float(np.max(entropies)) if entropies else 0.0,
        float(np.mean(ratios)) if ratios else 0.0,
        sum(1 for s in summary.sections if s.characteristics & IMAGE_SCN_MEM_EXECUTE),
        summary.overlay_size,
    ]
    buckets = np.zeros(IMPORT_NAME_BUCKETS)
    n_funcs = 0
    for _dll, funcs in summary.imports:
        n_funcs += len(funcs)
        for fn in funcs:
            buckets[fnv1a_bucket(fn)] += 1
    imports = [len(summary.imports), n_funcs, len(summary.exports)] + buckets.tolist()
    if histogram.total > 0:
        hist = (histogram.counts / histogram.total).tolist()
    else:
        hist = [0.0] * 256
    entropy = [shannon_entropy(histogram.counts)]
    vector = np.array(header + section + imports + hist + entropy, dtype=np.float64)
    assert vector.size == len(pe_schema())
    return vector


def extract_file(data: bytes) -> np.ndarray:
    """parse_pe + byte_histogram + extract_features for one buffer."""
    return extract_features(parse_pe(data), byte_histogram(data))
