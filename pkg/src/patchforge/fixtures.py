"""Deterministic synthetic corpora: C functions, push-event archives, and
CVE test sets for exercising the full pipeline offline.

Everything is driven by a seeded PRNG, so two calls with the same seed
produce byte-identical artifacts. Usage as a script:

    python -m patchforge.fixtures --out demo --commits 200 --seed 7
"""

from __future__ import annotations

import argparse
import hashlib
import json
import random
import re
from pathlib import Path

# Human patches from two real Linux-kernel CVEs, used as ground-truth
# fixtures end to end (extraction, training-data inclusion, beam recovery).

CIFS_CLOSE_BEFORE = """\
int cifs_close(struct inode *inode, struct file *file)
{
\tcifsFileInfo_put(file->private_data);
\tfile->private_data = NULL;

\t/* return code from the ->release op is always ignored */
\treturn 0;
}
"""

CIFS_CLOSE_AFTER = """\
int cifs_close(struct inode *inode, struct file *file)
{
\tif (file->private_data != NULL) {
\t\tcifsFileInfo_put(file->private_data);
\t\tfile->private_data = NULL;
\t}

\t/* return code from the ->release op is always ignored */
\treturn 0;
}
"""

OMNINET_OPEN_BEFORE = """\
static int omninet_open(struct tty_struct *tty, struct usb_serial_port *port)
{
\tstruct usb_serial\t*serial = port->serial;
\tstruct usb_serial_port\t*wport;

\twport = serial->port[1];
\ttty_port_tty_set(&wport->port, tty);

\treturn usb_serial_generic_open(tty, port);
}
"""

OMNINET_OPEN_AFTER = """\
static int omninet_open(struct tty_struct *tty, struct usb_serial_port *port)
{
\treturn usb_serial_generic_open(tty, port);
}
"""

LISTING_CVES = [
    ("CVE-2011-1771", "fs/cifs/file.c", "cifs_close", CIFS_CLOSE_BEFORE, CIFS_CLOSE_AFTER),
    ("CVE-2017-8925", "drivers/usb/serial/omninet.c", "omninet_open",
     OMNINET_OPEN_BEFORE, OMNINET_OPEN_AFTER),
]

STEMS = """alloc free buffer length size index count read write open close init
destroy key value pair list node head tail next prev data ptr file path name
user request response packet socket send recv parse token string copy move
check valid status code flag mask bit byte word line hash map table entry
item queue stack push pop insert remove find search sort compare update
delete create get set put handle context state config option param arg
result output input stream device driver port pin timer clock event signal
lock mutex thread proc task job page frame block chunk region zone pool
cache slot ring desc info stats total limit min max sum avg temp src dst
len off pos idx num cnt buf msg pkt hdr payload tty serial usb pci dma irq
net ip tcp udp http ssl tls cert sign verify encrypt decrypt random seed
uuid time date sec wait sleep poll select epoll loop iter scan probe attach
detach register unregister enable disable start stop reset resume suspend
power volt sensor motor pwm gpio flush sync commit abort retry backoff
window session channel stream2 route bridge filter match rule policy acl
quota shard span trace audit metric gauge""".split()

TYPES = ["int", "unsigned int", "long", "unsigned long", "size_t", "u8", "u16",
         "u32", "char", "void", "s32", "ssize_t"]

STRUCTS = ["device", "file", "inode", "sk_buff", "net_device", "urb", "port_info",
           "ring_buffer", "work_struct", "list_head"]

ERRNOS = ["-EINVAL", "-ENOMEM", "-EIO", "-EBUSY", "-ENODEV", "-EFAULT", "-EAGAIN"]

FIX_MESSAGES = [
    "Fix null pointer bug in {name}",
    "fix potential buffer overflow problem in {name}",
    "{name}: fix off-by-one error in bounds check",
    "repair the crash issue when {name} races with close",
    "solve memory leak bug in {name} error path",
    "Fix a security vulnerability: missing length check in {name}",
    "fixes an integer overflow issue in {name}",
    "bugfix: {name} dereferences freed pointer, fix the fault",
]

OTHER_MESSAGES = [
    "Add new feature for issues view",
    "update documentation for {name}",
    "refactor {name} to use helper",
    "Add support for vendor extension in {name}",
    "style cleanup in {name}",
    "improve performance of {name}",
]

NON_C_SUFFIXES = [".h", ".cpp", ".py", ".md", ".txt"]


def _snake(rng: random.Random, k: int) -> str:
    return "_".join(rng.choice(STEMS) for _ in range(k))


def _camel(rng: random.Random, k: int) -> str:
    first = rng.choice(STEMS)
    rest = "".join(rng.choice(STEMS).capitalize() for _ in range(k - 1))
    return first + rest


def _ident(rng: random.Random) -> str:
    k = rng.choice([2, 2, 2, 3, 3])
    return _camel(rng, k) if rng.random() < 0.3 else _snake(rng, k)


class _Func:
    """A small structured C function: signature plus a list of body lines."""

    def __init__(self, name: str, signature: str, body: list[str]):
        self.name = name
        self.signature = signature
        self.body = body

    def render(self, with_comments: bool = False, rng: random.Random | None = None) -> str:
        lines = [self.signature, "{"]
        for stmt in self.body:
            if with_comments and rng is not None and rng.random() < 0.15:
                lines.append(f"\t/* {rng.choice(STEMS)} {rng.choice(STEMS)} */")
            lines.append("\t" + stmt)
        lines.append("}")
        text = "\n".join(lines) + "\n"
        if with_comments and rng is not None and rng.random() < 0.2:
            text = f"/* {rng.choice(STEMS)} helper */\n" + text
        return text


def make_function(rng: random.Random) -> _Func:
    name = _ident(rng)
    ret_type = rng.choice(["int", "int", "static int", "void", "static void", "long"])
    struct = rng.choice(STRUCTS)
    arg1 = rng.choice(["dev", "file", "port", "ctx", "req"])
    arg2 = rng.choice(["len", "count", "flags", "offset", "size"])
    signature = f"{ret_type} {name}(struct {struct} *{arg1}, int {arg2})"
    returns_value = "void" not in ret_type

    var = rng.choice(["ret", "err", "rc", "status"])
    local = _snake(rng, 2)
    limit = rng.choice(["MAX_LEN", "BUF_SIZE", "LIMIT", f"{_snake(rng, 1).upper()}_MAX"])
    helper = _ident(rng)
    field1 = rng.choice(["priv", "data", "state", "count", "head", "buf"])
    const = rng.choice(["0", "1", "8", "16", "32", "64", "128", "256", "0x10", "0xff"])

    body = [f"int {var};", f"struct {struct} *{local} = {arg1}->{field1};"]
    if rng.random() < 0.6:
        err = rng.choice(ERRNOS) if returns_value else ""
        body.append(f"if (!{local})")
        body.append(f"\treturn {err};".replace("return ;", "return;"))
    if rng.random() < 0.5:
        body.append(f"if ({arg2} > {limit})")
        body.append(f"\t{arg2} = {limit};")
    body.append(f"{var} = {helper}({local}, {arg2});")
    if returns_value and rng.random() < 0.7:
        body.append(f"if ({var} < {const})")
        body.append(f"\treturn {rng.choice(ERRNOS)};")
    if rng.random() < 0.4:
        body.append(f"{arg1}->{field1} = {local};")
    body.append(f"return {var};" if returns_value else "return;")
    return _Func(name, signature, body)


def edit_function(rng: random.Random, func: _Func) -> _Func:
    """A bug-fix style edit: the edited body always differs token-wise."""
    body = list(func.body)
    kind = rng.randrange(5)
    if kind == 0:  # add a null check around a call statement
        idx = next((i for i, s in enumerate(body) if "(" in s and "if" not in s), None)
        if idx is not None:
            target = body[idx]
            var = target.split("=")[0].strip().split()[-1] if "=" in target else None
            guard = var or "ret"
            body[idx : idx + 1] = [f"if ({guard} != NULL) {{", "\t" + target, "}"]
            return _Func(func.name, func.signature, body)
        kind = 1
    if kind == 1:  # strengthen a condition with a bounds check
        idx = next((i for i, s in enumerate(body) if s.startswith("if (!")), None)
        if idx is not None:
            var = body[idx][len("if (!") : -1]
            body[idx] = f"if (!{var} || {var}->count >= MAX_ENTRIES)"
            return _Func(func.name, func.signature, body)
        kind = 2
    if kind == 2:  # change a constant
        for i, s in enumerate(body):
            if "> " in s or "< " in s:
                body[i] = s.replace("> ", ">= ").replace("< ", "<= ")
                if body[i] != s:
                    return _Func(func.name, func.signature, body)
        kind = 3
    if kind == 3:  # drop a statement pair (like the omninet fix)
        if len(body) > 4:
            idx = rng.randrange(1, len(body) - 2)
            del body[idx]
            if body != func.body:
                return _Func(func.name, func.signature, body)
    # fall back: rename the status local, the way cleanup-fix commits do
    new = [re.sub(r"\brc\b", "retval", re.sub(r"\berr\b", "error", s)) for s in body]
    if new == body:
        new = body + ["return 0;"]
    return _Func(func.name, func.signature, new)


def synthesize_functions(n: int, seed: int = 0) -> list[str]:
    """n independent C function texts (comments included)."""
    rng = random.Random(seed)
    return [make_function(rng).render(with_comments=True, rng=rng) for _ in range(n)]


def _sha(seed: int, i: int) -> str:
    return hashlib.sha1(f"patchforge:{seed}:{i}".encode()).hexdigest()


def synthesize_archive(
    n_commits: int, seed: int = 0, corrupt_lines: int = 0
) -> tuple[list[str], list[dict]]:
    """A push-event archive as raw lines, plus the ground-truth changed
    functions [{cve-ish info}] for test-set construction.

    Roughly 70% of commits are retained bug fixes (keyword message plus a
    changed .c file); the rest miss a keyword group or touch no C file.
    The two real CVE patches are always embedded as the first two commits.
    """
    rng = random.Random(seed)
    lines: list[str] = []
    truths: list[dict] = []
    event_idx = 0

    def emit(repo: str, sha: str, message: str, files: list[dict]):
        nonlocal event_idx
        event = {
            "event_id": f"evt-{seed}-{event_idx}",
            "repo": repo,
            "commits": [{"sha": sha, "message": message, "files": files}],
        }
        event_idx += 1
        lines.append(json.dumps(event, ensure_ascii=False, separators=(",", ":")))

    for i, (cve, path, name, before, after) in enumerate(LISTING_CVES):
        msg = f"Fix {name} vulnerability bug ({cve})"
        emit("torvalds/linux", _sha(seed, 10_000 + i), msg, [
            {"path": path, "before": before, "after": after}
        ])
        truths.append({"cve_id": cve, "path": path, "name": name,
                       "before": before, "after": after})

    for i in range(n_commits - len(LISTING_CVES)):
        sha = _sha(seed, i)
        repo = f"{rng.choice(STEMS)}/{_snake(rng, 2)}"
        roll = rng.random()
        if roll < 0.70:
            changed = make_function(rng)
            edited = edit_function(rng, changed)
            others = [make_function(rng) for _ in range(rng.randrange(0, 3))]
            layout = others + [changed]
            rng.shuffle(layout)
            before_text = "\n".join(f.render(with_comments=True, rng=rng) for f in layout)
            after_text = "\n".join(
                (edited if f is changed else f).render() for f in layout
            )
            path = f"drivers/{rng.choice(STEMS)}/{_snake(rng, 1)}.c"
            msg = rng.choice(FIX_MESSAGES).format(name=changed.name)
            emit(repo, sha, msg, [{"path": path, "before": before_text, "after": after_text}])
            truths.append({"cve_id": None, "path": path, "name": changed.name,
                           "before": changed.render(), "after": edited.render()})
        elif roll < 0.85:
            func = make_function(rng)
            path = f"src/{_snake(rng, 1)}{rng.choice(NON_C_SUFFIXES)}"
            msg = rng.choice(FIX_MESSAGES).format(name=func.name)
            emit(repo, sha, msg, [{"path": path, "before": func.render(), "after": func.render() + "\n"}])
        else:
            func = make_function(rng)
            edited = edit_function(rng, func)
            path = f"lib/{_snake(rng, 1)}.c"
            msg = rng.choice(OTHER_MESSAGES).format(name=func.name)
            emit(repo, sha, msg, [{"path": path, "before": func.render(), "after": edited.render()}])

    for i in range(corrupt_lines):
        lines.insert(rng.randrange(len(lines) + 1), '{"event_id": "broken", "repo": 17')
    return lines, truths


def synthesize_testset(truths: list[dict], seed: int = 0, max_cves: int = 8) -> list[dict]:
    """Group ground-truth changed functions into CVE records (tokens are
    produced by the pipeline lexer so the test set matches extraction)."""
    from . import clexer, extraction

    rng = random.Random(seed + 99)
    records = []
    listing = [t for t in truths if t["cve_id"]]
    synthetic = [t for t in truths if not t["cve_id"]]
    year = 2019

    def tokens(text: str) -> list[str]:
        return clexer.lex_texts(extraction.strip_comments(text))

    for t in listing:
        records.append({
            "cve_id": t["cve_id"],
            "functions": [{
                "name": t["name"], "path": t["path"],
                "before_tokens": tokens(t["before"]), "after_tokens": tokens(t["after"]),
            }],
        })
    rng.shuffle(synthetic)
    i = 0
    while synthetic and len(records) < max_cves:
        group = synthetic[: rng.choice([1, 1, 2, 3])]
        synthetic = synthetic[len(group):]
        records.append({
            "cve_id": f"CVE-{year}-{10000 + seed % 1000 + i}",
            "functions": [{
                "name": t["name"], "path": t["path"],
                "before_tokens": tokens(t["before"]), "after_tokens": tokens(t["after"]),
            } for t in group],
        })
        i += 1
    return records


def write_fixture_corpus(
    out_dir: str | Path, n_commits: int = 200, seed: int = 7, corrupt_lines: int = 0
) -> dict[str, Path]:
    """Write events.jsonl and testset.jsonl under out_dir; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines, truths = synthesize_archive(n_commits, seed, corrupt_lines)
    events = out / "events.jsonl"
    events.write_text("\n".join(lines) + "\n", encoding="utf-8")
    testset = out / "testset.jsonl"
    records = synthesize_testset(truths, seed)
    testset.write_text(
        "\n".join(json.dumps(r, ensure_ascii=False, separators=(",", ":")) for r in records) + "\n",
        encoding="utf-8",
    )
    return {"events": events, "testset": testset}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic fixture corpus")
    parser.add_argument("--out", required=True)
    parser.add_argument("--commits", type=int, default=200)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--corrupt-lines", type=int, default=0)
    args = parser.parse_args(argv)
    paths = write_fixture_corpus(args.out, args.commits, args.seed, args.corrupt_lines)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
