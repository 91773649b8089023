"""Line-oriented parser for textual LLVM IR.

Only what the feature extractor needs is recovered: functions, labelled
blocks, opcodes, operand tokens, a result-type token, inline integer
constants, and the CFG implied by terminators. Unknown opcodes are kept
verbatim.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

TERMINATORS = frozenset({
    "ret", "br", "switch", "indirectbr", "invoke", "callbr", "resume", "unreachable",
    "cleanupret", "catchret", "catchswitch",
})

INT_BINARY_OPS = frozenset({
    "add", "sub", "mul", "udiv", "sdiv", "urem", "srem", "shl", "lshr", "ashr", "and", "or", "xor",
})
FLOAT_BINARY_OPS = frozenset({"fadd", "fsub", "fmul", "fdiv", "frem"})
BINARY_OPS = INT_BINARY_OPS | FLOAT_BINARY_OPS

_CALL_PREFIXES = frozenset({"tail", "musttail", "notail"})
_BINOP_FLAGS = frozenset({
    "nuw", "nsw", "exact", "fast", "nnan", "ninf", "nsz", "arcp", "contract", "afn", "reassoc",
})
_ICMP_PREDS = frozenset({"eq", "ne", "ugt", "uge", "ult", "ule", "sgt", "sge", "slt", "sle"})
_FCMP_PREDS = frozenset({
    "false", "oeq", "ogt", "oge", "olt", "ole", "one", "ord", "ueq", "ugt", "uge", "ult", "ule",
    "une", "uno", "true",
})

_LABEL_RE = re.compile(r'^((?:[-a-zA-Z$._0-9]+)|(?:"[^"]*")):\s*$')
_OLD_LABEL_RE = re.compile(r"^;\s*<label>:(\d+)")
_DEFINE_RE = re.compile(r"^define\b")
_RESULT_RE = re.compile(r'^(%[-a-zA-Z$._0-9]+|%"[^"]*")\s*=\s*')
_TARGET_RE = re.compile(r'\blabel\s+%((?:[-a-zA-Z$._0-9]+)|(?:"[^"]*"))')
_TYPED_INT_RE = re.compile(r"(?<![\w.])i(\d+)\s+(-?\d+|true|false)(?![\w.])")
_METADATA_RE = re.compile(r",\s*!\S+\s+!\S+")
_ALIGN_RE = re.compile(r",\s*align\s+\d+")
_CALLEE_RE = re.compile(r'[@%](?:[-a-zA-Z$._0-9]+|"[^"]*")\s*\(')
_INT_TYPE_RE = re.compile(r"^i\d+$")


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class Instruction:
    opcode: str
    operands: list[str]
    result_type: str | None
    int_constants: list[tuple[int, int]]  # (bit width, value)
    is_terminator: bool
    text: str = ""
    targets: list[str] = field(default_factory=list)

    @property
    def phi_incoming(self) -> int:
        return len(self.operands) if self.opcode == "phi" else 0


@dataclass
class BasicBlock:
    label: str
    instructions: list[Instruction] = field(default_factory=list)
    successors: list[str] = field(default_factory=list)
    predecessors: list[str] = field(default_factory=list)


@dataclass
class IrFunction:
    name: str
    blocks: list[BasicBlock] = field(default_factory=list)

    def block(self, label: str) -> BasicBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)


@dataclass
class IrModule:
    functions: list[IrFunction] = field(default_factory=list)


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"':
            in_str = not in_str
        elif ch == ";" and not in_str:
            return line[:i]
    return line


def _bracket_delta(code: str) -> int:
    depth, in_str = 0, False
    for ch in code:
        if ch == '"':
            in_str = not in_str
        elif not in_str:
            if ch == "[":
                depth += 1
            elif ch == "]":
                depth -= 1
    return depth


def _split_top(s: str) -> list[str]:
    """Split on commas not nested inside brackets, braces, parens, or quotes."""
    parts, depth, cur, in_str = [], 0, [], False
    for ch in s:
        if ch == '"':
            in_str = not in_str
        elif not in_str:
            if ch in "([{<":
                depth += 1
            elif ch in ")]}>":
                depth -= 1
            elif ch == "," and depth == 0:
                parts.append("".join(cur).strip())
                cur = []
                continue
        cur.append(ch)
    tail = "".join(cur).strip()
    if tail:
        parts.append(tail)
    return parts


def _literal_int(tok: str) -> int | None:
    if tok == "true":
        return 1
    if tok == "false":
        return 0
    if re.fullmatch(r"-?\d+", tok):
        return int(tok)
    return None


def _call_result_type(rest: str) -> str | None:
    m = _CALLEE_RE.search(rest)
    if not m:
        return None
    prefix = rest[:m.start()].rstrip()
    if prefix.endswith(")"):
        # explicit function type: "<ret> (<params>)"
        depth = 0
        for i in range(len(prefix) - 1, -1, -1):
            if prefix[i] == ")":
                depth += 1
            elif prefix[i] == "(":
                depth -= 1
                if depth == 0:
                    prefix = prefix[:i].rstrip()
                    break
    toks = prefix.split()
    return toks[-1] if toks else None


def parse_instruction(text: str) -> Instruction:
    body = _RESULT_RE.sub("", text.strip(), count=1)
    toks = body.split(None, 1)
    opcode = toks[0]
    rest = toks[1] if len(toks) > 1 else ""
    if opcode in _CALL_PREFIXES and rest:
        nxt = rest.split(None, 1)
        opcode = nxt[0]
        rest = nxt[1] if len(nxt) > 1 else ""
    clean = _ALIGN_RE.sub("", _METADATA_RE.sub("", rest))

    result_type = None
    consts: list[tuple[int, int]] = []
    operands: list[str]

    if opcode in BINARY_OPS or opcode in ("icmp", "fcmp"):
        words = clean.split()
        preds = _FCMP_PREDS if opcode == "fcmp" else _ICMP_PREDS
        while words and (words[0] in _BINOP_FLAGS or words[0] in preds):
            words.pop(0)
        ty = words[0] if words else ""
        result_type = ty
        operands = _split_top(" ".join(words[1:]))
        m = re.fullmatch(r"i(\d+)", ty)
        if m:
            for op in operands:
                v = _literal_int(op)
                if v is not None:
                    consts.append((int(m.group(1)), v))
    elif opcode == "phi":
        words = clean.split(None, 1)
        ty = words[0] if words else ""
        result_type = ty
        incoming = re.findall(r"\[\s*([^,\]]+?)\s*,\s*[^\]]+\]", words[1] if len(words) > 1 else "")
        operands = incoming
        m = re.fullmatch(r"i(\d+)", ty)
        if m:
            for op in incoming:
                v = _literal_int(op)
                if v is not None:
                    consts.append((int(m.group(1)), v))
    else:
        if opcode in ("call", "invoke", "callbr"):
            result_type = _call_result_type(clean)
        else:
            first = clean.split(None, 1)
            result_type = first[0].rstrip(",") if first else None
        operands = _split_top(clean)
        for bits, val in _TYPED_INT_RE.findall(clean):
            consts.append((int(bits), int(_literal_int(val))))

    targets = [t for t in _TARGET_RE.findall(rest)] if opcode in TERMINATORS else []
    return Instruction(
        opcode=opcode,
        operands=operands,
        result_type=result_type,
        int_constants=consts,
        is_terminator=opcode in TERMINATORS,
        text=text.strip(),
        targets=targets,
    )


def _logical_lines(text: str):
    """Yield (line number, code) with multi-line bracketed instructions joined."""
    pending: list[str] = []
    start = 0
    depth = 0
    for no, raw in enumerate(text.splitlines(), start=1):
        old = _OLD_LABEL_RE.match(raw.strip())
        if old and not pending:
            yield no, old.group(1) + ":"
            continue
        code = _strip_comment(raw).rstrip()
        if not code.strip():
            continue
        if not pending:
            start = no
        pending.append(code.strip())
        depth += _bracket_delta(code)
        if depth <= 0:
            yield start, " ".join(pending)
            pending = []
            depth = 0
    if pending:
        yield start, " ".join(pending)


def parse_ir(text: str) -> IrModule:
    """Parse textual IR into functions, blocks, and a CFG."""
    module = IrModule()
    fn: IrFunction | None = None
    block: BasicBlock | None = None
    fn_line = 0

    def close_block(line: int):
        if block is not None and (not block.instructions or not block.instructions[-1].is_terminator):
            raise ParseError(f"unterminated block {block.label!r}", line)

    for no, line in _logical_lines(text):
        if fn is None:
            if _DEFINE_RE.match(line):
                if not line.endswith("{"):
                    raise ParseError("expected '{' at end of define", no)
                name = re.search(r'@((?:[-a-zA-Z$._0-9]+)|(?:"[^"]*"))', line)
                fn = IrFunction(name=name.group(1) if name else "?")
                block = None
                fn_line = no
            continue
        if line == "}":
            if block is None:
                raise ParseError(f"function {fn.name!r} has no body", no)
            close_block(no)
            _link_cfg(fn, fn_line)
            module.functions.append(fn)
            fn = block = None
            continue
        lab = _LABEL_RE.match(line)
        if lab:
            close_block(no)
            label = lab.group(1)
            if any(b.label == label for b in fn.blocks):
                raise ParseError(f"duplicate label {label!r}", no)
            block = BasicBlock(label)
            fn.blocks.append(block)
            continue
        if block is None:
            block = BasicBlock("<entry>")
            fn.blocks.append(block)
        elif block.instructions and block.instructions[-1].is_terminator:
            raise ParseError("instruction after terminator", no)
        block.instructions.append(parse_instruction(line))
    if fn is not None:
        raise ParseError(f"unterminated function {fn.name!r}", fn_line)
    return module


def _link_cfg(fn: IrFunction, line: int) -> None:
    by_label = {b.label: b for b in fn.blocks}
    for b in fn.blocks:
        term = b.instructions[-1]
        for t in term.targets:
            if t not in by_label:
                raise ParseError(f"branch to unknown label {t!r} in {fn.name!r}", line)
            b.successors.append(t)
            by_label[t].predecessors.append(b.label)
