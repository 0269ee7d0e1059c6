"""Source -> binary -> x86-64 listing -> per-function assembly.

External tools are called with argument vectors, never through a shell.
Dart units go through ``dart compile aot-snapshot`` with default AOT
optimization; Swift through ``swiftc -Onone``. Listings come from an
objdump-compatible disassembler in Intel syntax.
"""

from __future__ import annotations

import hashlib
import os
import re
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import OPTIMIZATION_FOR, FunctionRecord, validate_record
from .similarity.grammar import load_grammar

DEFAULT_TIMEOUT = 60.0
ENTRY_PRAGMA = "@pragma('vm:entry-point')"
ENV_OVERRIDES = {
    "dart": "DECOMPEVAL_DART",
    "swift": "DECOMPEVAL_SWIFTC",
    "disassembler": "DECOMPEVAL_DISASSEMBLER",
}


class ToolchainError(RuntimeError):
    """An external tool could not be run or failed."""

    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics


class ToolNotFound(ToolchainError):
    pass


class CompileFailure(ToolchainError):
    pass


class ToolTimeout(ToolchainError):
    pass


class DisassemblyError(ToolchainError):
    pass


class PrepareError(ValueError):
    def __init__(self, message: str, diagnostics: str = ""):
        super().__init__(message)
        self.diagnostics = diagnostics


class SymbolNotFound(LookupError):
    pass


class DegenerateFunction(ValueError):
    pass


class PipelineError(RuntimeError):
    """A build_pair stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _resolve(tool: str | None) -> str | None:
    if not tool:
        return None
    if os.sep in tool:
        p = Path(tool).expanduser()
        return str(p.resolve()) if p.is_file() and os.access(p, os.X_OK) else None
    return shutil.which(tool)


@dataclass(frozen=True)
class ToolchainConfig:
    """Paths to the compilers and disassembler, plus scratch space and timeout.

    Tool names are resolved against PATH on construction. A tool given
    explicitly must resolve; a default that is missing is left as None
    and reported when something needs it.
    """

    dart_compiler: str | None = "dart"
    swift_compiler: str | None = "swiftc"
    disassembler: str | None = "objdump"
    scratch_root: Path = field(default_factory=lambda: Path(tempfile.gettempdir()) / "decompeval")
    timeout: float = DEFAULT_TIMEOUT
    strict: bool = False

    def __post_init__(self):
        if not self.timeout > 0:
            raise ValueError("timeout must be positive")
        for name in ("dart_compiler", "swift_compiler", "disassembler"):
            value = getattr(self, name)
            resolved = _resolve(value)
            if value and resolved is None and self.strict:
                raise ToolNotFound(f"{name}: cannot resolve {value!r}")
            object.__setattr__(self, name, resolved)
        object.__setattr__(self, "scratch_root", Path(self.scratch_root))

    @classmethod
    def from_mapping(cls, data: dict | None = None, env: dict | None = None) -> "ToolchainConfig":
        """Build from a config-file table; environment variables override paths.

        Tools named in ``data`` or the environment are strict; omitted ones
        fall back to PATH defaults.
        """
        data = dict(data or {})
        env = os.environ if env is None else env
        kwargs: dict = {}
        unknown = set(data) - set(ENV_OVERRIDES) - {"scratch_root", "timeout"}
        if unknown:
            raise ValueError(f"unknown toolchain keys {sorted(unknown)}")
        explicit = []
        for key, var in ENV_OVERRIDES.items():
            value = env.get(var) or data.get(key)
            if value:
                kwargs[f"{key}_compiler" if key != "disassembler" else key] = value
                explicit.append(value)
        if "scratch_root" in data:
            kwargs["scratch_root"] = Path(data["scratch_root"])
        if "timeout" in data:
            kwargs["timeout"] = float(data["timeout"])
        cfg = cls(**kwargs)
        for key in ("dart_compiler", "swift_compiler", "disassembler"):
            if key in kwargs and getattr(cfg, key) is None:
                raise ToolNotFound(f"{key}: cannot resolve {kwargs[key]!r}")
        return cfg

    def require(self, name: str) -> str:
        path = getattr(self, name)
        if path is None:
            raise ToolNotFound(f"{name} is not available; set it in the config or via "
                               f"{ENV_OVERRIDES[name.replace('_compiler', '')]}")
        return path


@dataclass(frozen=True)
class BinaryArtifact:
    path: Path
    language: str
    optimization: str
    compiler_diagnostics: str = ""


@dataclass(frozen=True)
class AssemblyFunction:
    symbol: str
    body: str
    byte_length: int


# -- Dart unit preparation ---------------------------------------------------

def _top_level_functions(root):
    """Yield (start_node, name) for each top-level function in a Dart program."""
    children = root.children
    for i, child in enumerate(children):
        if child.type != "function_signature":
            continue
        name_node = child.child_by_field_name("name")
        name = name_node.text.decode() if name_node is not None else ""
        start = child
        j = i - 1
        while j >= 0 and children[j].type in ("annotation", "marker_annotation"):
            start = children[j]
            j -= 1
        annotations = [children[k].text.decode() for k in range(j + 1, i)]
        yield start, name, annotations


def prepare_dart_unit(source: str) -> str:
    """Keep every top-level function alive through AOT tree shaking.

    Adds the VM entry-point pragma above each top-level function other
    than ``main`` and appends ``void main() {}`` when the unit has no entry
    function.
    """
    grammar = load_grammar("dart")
    tree = grammar.parse(source)
    if not source.strip() or tree.root_node.has_error:
        raise PrepareError("source does not parse as Dart", _parse_diagnostics(tree, source))
    functions = list(_top_level_functions(tree.root_node))
    if not functions:
        raise PrepareError("source contains no top-level function")
    data = source.encode("utf-8")
    inserts = []
    for start, name, annotations in functions:
        if name == "main" or any("vm:entry-point" in a for a in annotations):
            continue
        line_start = data.rfind(b"\n", 0, start.start_byte) + 1
        indent = data[line_start:start.start_byte]
        if indent.strip():
            # declaration shares its line with earlier code; break the line
            inserts.append((start.start_byte, b"\n" + ENTRY_PRAGMA.encode() + b"\n"))
        else:
            inserts.append((line_start, indent + ENTRY_PRAGMA.encode() + b"\n"))
    for pos, text in sorted(inserts, reverse=True):
        data = data[:pos] + text + data[pos:]
    out = data.decode("utf-8")
    if not any(name == "main" for _, name, _ in functions):
        if not out.endswith("\n"):
            out += "\n"
        out += "\nvoid main() {}\n"
    return out


def _parse_diagnostics(tree, source: str) -> str:
    lines = []
    stack = [tree.root_node]
    while stack:
        node = stack.pop()
        if node.is_error or node.is_missing:
            row, col = node.start_point
            what = f"missing {node.type}" if node.is_missing else "syntax error"
            lines.append(f"{row + 1}:{col + 1}: {what}")
        elif node.has_error:
            stack.extend(reversed(node.children))
    return "\n".join(lines) or ("empty source" if not source.strip() else "")


def has_entry_function(source: str) -> bool:
    tree = load_grammar("dart").parse(source)
    return any(name == "main" for _, name, _ in _top_level_functions(tree.root_node))


# -- running tools -------------------------------------------------------------

def _scratch_dir(cfg: ToolchainConfig, tag: str) -> Path:
    cfg.scratch_root.mkdir(parents=True, exist_ok=True)
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", tag)[:60] or "unit"
    return Path(tempfile.mkdtemp(prefix=f"{safe}-", dir=cfg.scratch_root))


def run_tool(argv: list[str], timeout: float, cwd: Path | None = None) -> subprocess.CompletedProcess:
    try:
        return subprocess.run(argv, cwd=cwd, capture_output=True, text=True,
                              timeout=timeout, check=False)
    except subprocess.TimeoutExpired as exc:
        raise ToolTimeout(f"{Path(argv[0]).name} exceeded {timeout:g}s",
                          (exc.stderr or b"").decode() if isinstance(exc.stderr, bytes)
                          else (exc.stderr or "")) from None
    except OSError as exc:
        raise ToolNotFound(f"cannot run {argv[0]}: {exc}") from None


def compile_command(language: str, src: Path, out: Path, cfg: ToolchainConfig) -> list[str]:
    if language == "dart":
        return [cfg.require("dart_compiler"), "compile", "aot-snapshot",
                "--output", str(out), str(src)]
    if language == "swift":
        return [cfg.require("swift_compiler"), "-Onone", "-parse-as-library",
                "-emit-object", str(src), "-o", str(out)]
    raise ValueError(f"unsupported language {language!r}")


def compile_source(source: str, language: str, cfg: ToolchainConfig,
                   tag: str = "unit", keep_dir: Path | None = None) -> BinaryArtifact:
    """Compile one unit in a fresh scratch directory.

    The artifact is copied to ``keep_dir`` (default: scratch_root) before
    the scratch directory is removed; on failure the directory is left for
    inspection and its path is included in the error.
    """
    workdir = _scratch_dir(cfg, tag)
    ext = ".dart" if language == "dart" else ".swift"
    src = workdir / f"unit{ext}"
    src.write_text(source, encoding="utf-8")
    out = workdir / ("unit.aot" if language == "dart" else "unit.o")
    argv = compile_command(language, src, out, cfg)
    try:
        proc = run_tool(argv, cfg.timeout, cwd=workdir)
    except ToolTimeout as exc:
        raise ToolTimeout(f"{exc} (scratch kept at {workdir})", exc.diagnostics) from None
    diagnostics = (proc.stdout + proc.stderr).strip() if proc.returncode else proc.stderr.strip()
    if proc.returncode != 0 or not out.is_file() or out.stat().st_size == 0:
        raise CompileFailure(f"{language} compile failed with exit code {proc.returncode} "
                             f"(scratch kept at {workdir})", diagnostics or "no output produced")
    dest_dir = Path(keep_dir) if keep_dir else cfg.scratch_root
    dest_dir.mkdir(parents=True, exist_ok=True)
    dest = dest_dir / f"{workdir.name}{out.suffix}"
    shutil.copyfile(out, dest)
    shutil.rmtree(workdir, ignore_errors=True)
    return BinaryArtifact(dest, language, OPTIMIZATION_FOR[language], diagnostics)


def disassemble(artifact: BinaryArtifact | Path, cfg: ToolchainConfig) -> str:
    path = Path(artifact.path if isinstance(artifact, BinaryArtifact) else artifact)
    if not path.is_file() or path.stat().st_size == 0:
        raise DisassemblyError(f"{path}: missing or empty binary")
    argv = [cfg.require("disassembler"), "-d", "-w", "-M", "intel", str(path)]
    proc = run_tool(argv, cfg.timeout)
    if proc.returncode != 0:
        raise DisassemblyError(f"disassembler failed on {path}", proc.stderr.strip())
    return proc.stdout


# -- listing parsing and normalization -------------------------------------------

_LABEL = re.compile(r"^([0-9a-fA-F]+) <(.+)>:\s*$")
_NORM_LABEL = re.compile(r"^<(.+)>:\s*$")
_SECTION = re.compile(r"^Disassembly of section (\S+):\s*$")
_INSN = re.compile(r"^\s*([0-9a-fA-F]+):\t(?:[0-9a-fA-F]{2} ?)*\s*(?:\t(.*))?$")
_REF = re.compile(r"\b([0-9a-fA-F]+) <([^<>+]+)(?:\+0x([0-9a-fA-F]+))?>")
_COMMENT_ADDR = re.compile(r"#\s*(?:0x)?[0-9a-fA-F]+ <")
_LOCAL = re.compile(r"\.L(\d+)\b")


@dataclass
class _Line:
    kind: str  # "label" | "section" | "insn" | "local"
    text: str
    addr: int | None = None


def _parse_listing(listing: str) -> list[_Line]:
    """Structured lines from raw objdump output or already-normalized text."""
    out = []
    for raw in listing.splitlines():
        line = raw.rstrip()
        if not line.strip():
            continue
        m = _SECTION.match(line)
        if m:
            out.append(_Line("section", line))
            continue
        m = _LABEL.match(line)
        if m:
            out.append(_Line("label", m.group(2), int(m.group(1), 16)))
            continue
        m = _NORM_LABEL.match(line)
        if m:
            out.append(_Line("label", m.group(1)))
            continue
        m = _INSN.match(line)
        if m:
            text = m.group(2)
            if text is None or not text.strip():
                continue  # continuation of a long byte encoding
            out.append(_Line("insn", text, int(m.group(1), 16)))
            continue
        if re.match(r"^\.L\d+:$", line.strip()):
            out.append(_Line("local", line.strip()[:-1]))
            continue
        if raw.startswith(("\t", " ")):
            out.append(_Line("insn", line.strip()))
        # anything else (file header, "file format" banner) is dropped
    return out


def _clean_insn(text: str, function: str | None, local_of: dict[int, str]) -> str:
    text = text.split("\t#")[0] if "\t#" in text else text
    text = _COMMENT_ADDR.sub("# <", text)

    def ref(m: re.Match) -> str:
        addr, sym = int(m.group(1), 16), m.group(2)
        if sym == function and addr in local_of:
            return local_of[addr]
        off = m.group(3)
        return f"<{sym}+0x{off}>" if off else f"<{sym}>"

    text = _REF.sub(ref, text)
    parts = text.split(None, 1)
    if not parts:
        return ""
    return parts[0] if len(parts) == 1 else f"{parts[0]} {' '.join(parts[1].split())}"


def _render(lines: list[_Line]) -> list[str]:
    current = None
    # branch targets inside the current function become local labels
    targets: dict[str, set[int]] = {}
    for ln in lines:
        if ln.kind == "label":
            current = ln.text
        elif ln.kind == "insn" and current is not None:
            for m in _REF.finditer(ln.text):
                if m.group(2) == current and m.group(3):
                    targets.setdefault(current, set()).add(int(m.group(1), 16))
    rendered: list[str] = []
    current, local_of = None, {}
    counter = 0
    for ln in lines:
        if ln.kind == "section":
            rendered.append(ln.text)
            current = None
        elif ln.kind == "label":
            current = ln.text
            local_of = {}
            for addr in sorted(targets.get(current, ())):
                local_of[addr] = f".L{counter}"
                counter += 1
            rendered.append(f"<{ln.text}>:")
        elif ln.kind == "local":
            rendered.append(f"{ln.text}:")
        else:
            if ln.addr is not None and ln.addr in local_of:
                rendered.append(f"{local_of[ln.addr]}:")
            insn = _clean_insn(ln.text, current, local_of)
            if insn:
                rendered.append("\t" + insn)
    return _renumber_locals(rendered)


def _renumber_locals(rendered: list[str]) -> list[str]:
    mapping: dict[str, str] = {}

    def sub(m: re.Match) -> str:
        old = m.group(0)
        if old not in mapping:
            mapping[old] = f".L{len(mapping)}"
        return mapping[old]

    return [_LOCAL.sub(sub, line) for line in rendered]


def normalize_listing(listing: str) -> str:
    """Drop addresses and encodings, keep mnemonics/operands, number local labels.

    Idempotent: normalizing normalized text returns it unchanged.
    """
    lines = _render(_parse_listing(listing))
    return "".join(line + "\n" for line in lines)


def list_symbols(listing: str) -> list[str]:
    return [ln.text for ln in _parse_listing(listing) if ln.kind == "label"]


def extract_function(listing: str, symbol: str) -> AssemblyFunction:
    """Slice one function out of a listing, from its label to the next label or section."""
    lines = _parse_listing(listing)
    start = next((i for i, ln in enumerate(lines) if ln.kind == "label" and ln.text == symbol), None)
    if start is None:
        raise SymbolNotFound(f"symbol {symbol!r} not found in listing")
    end = start + 1
    while end < len(lines) and lines[end].kind not in ("label", "section"):
        end += 1
    chunk = lines[start:end]
    body_lines = _render(chunk)[1:]  # drop the label line itself
    insns = [ln for ln in chunk if ln.kind == "insn"]
    if not insns or not body_lines:
        raise DegenerateFunction(f"symbol {symbol!r} has an empty body")
    # byte length from addresses when present; else one unit per instruction
    if insns[0].addr is not None:
        nxt = lines[end].addr if end < len(lines) and lines[end].kind == "label" else None
        last = insns[-1].addr
        byte_length = (nxt if nxt is not None and nxt > last else last + 1) - insns[0].addr
    else:
        byte_length = len(insns)
    return AssemblyFunction(symbol, "".join(line + "\n" for line in body_lines), max(1, byte_length))


# -- pairing -------------------------------------------------------------------

def record_id(language: str, symbol: str, source: str) -> str:
    digest = hashlib.sha1(source.encode("utf-8")).hexdigest()[:10]
    return f"{language}-{re.sub(r'[^A-Za-z0-9_]', '_', symbol)}-{digest}"


def build_pair(source: str, symbol: str, language: str, provenance: str,
               cfg: ToolchainConfig, *, record_id_: str | None = None,
               origin: str = "", split: str = "train",
               reasoning: str | None = None) -> FunctionRecord:
    """Compile, disassemble and extract one function into a corpus record.

    ``source`` is stored as given; for Dart the compiled unit is the
    pragma-annotated version from :func:`prepare_dart_unit`.
    """
    rid = record_id_ or record_id(language, symbol, source)
    try:
        unit = prepare_dart_unit(source) if language == "dart" else source
    except PrepareError as exc:
        raise PipelineError("prepare", exc) from exc
    try:
        artifact = compile_source(unit, language, cfg, tag=rid)
    except ToolchainError as exc:
        raise PipelineError("compile", exc) from exc
    try:
        listing = disassemble(artifact, cfg)
    except ToolchainError as exc:
        raise PipelineError("disassemble", exc) from exc
    finally:
        artifact.path.unlink(missing_ok=True)
    try:
        fn = extract_function(listing, symbol)
    except (SymbolNotFound, DegenerateFunction) as exc:
        raise PipelineError("extract", exc) from exc
    record = FunctionRecord(id=rid, language=language, source=source, assembly=fn.body,
                            provenance=provenance, origin=origin,
                            optimization=OPTIMIZATION_FOR[language], reasoning=reasoning,
                            split=split)
    problems = validate_record(record)
    if problems:
        raise PipelineError("validate", ValueError("; ".join(problems)))
    return record
