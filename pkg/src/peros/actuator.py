"""Sandboxed plan execution with journaling and byte-exact revert.

Every mutating step records a full before-image (content-addressed blobs plus
a tree manifest) so that revert restores the workspace exactly, regardless of
whether the operation itself is invertible. Checkpoint flags gate execution:
approval is collected *before* a flagged step runs. Git state is captured as
ordinary files under .git, so reverting the tree also restores HEAD and the
index.
"""

from __future__ import annotations

import difflib
import fnmatch
import hashlib
import json
import os
import shutil
import stat
import subprocess
import tempfile
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping

from filelock import FileLock

from .errors import (
    JournalMismatch,
    RevertConflict,
    SandboxViolation,
    StepFailure,
)
from .model import OperationPlan, PlanStep, UnboundSlot

PEROS_DIR = ".peros"
DEFAULT_STEP_TIMEOUT = 30.0
_TEXT_DIFF_LIMIT = 256 * 1024

_GIT_ENV = {
    "GIT_AUTHOR_NAME": "peros",
    "GIT_AUTHOR_EMAIL": "peros@localhost",
    "GIT_COMMITTER_NAME": "peros",
    "GIT_COMMITTER_EMAIL": "peros@localhost",
    "GIT_CONFIG_NOSYSTEM": "1",
    "HOME": "",  # set per call; keeps user config out
}


# ---------------------------------------------------------------------------
# Workspace
# ---------------------------------------------------------------------------

@dataclass
class Workspace:
    """A sandbox rooted at an absolute path; no operation may escape it."""

    root: Path
    git_enabled: bool = False
    manifest: dict[str, tuple[int, str]] = field(default_factory=dict)

    @classmethod
    def attach(cls, root: str | Path, create: bool = False) -> "Workspace":
        rootp = Path(root).resolve()
        if create:
            rootp.mkdir(parents=True, exist_ok=True)
        if not rootp.is_dir():
            raise FileNotFoundError(f"workspace root missing: {rootp}")
        ws = cls(root=rootp, git_enabled=(rootp / ".git").is_dir())
        (rootp / PEROS_DIR).mkdir(exist_ok=True)
        ws.refresh_manifest()
        return ws

    # -- paths ---------------------------------------------------------------

    def resolve(self, rel: str) -> Path:
        """Join and resolve a workspace-relative path, enforcing the sandbox
        boundary after symlink resolution."""
        if not rel or rel == ".":
            return self.root
        candidate = Path(rel)
        if candidate.is_absolute():
            raise SandboxViolation(f"absolute path not allowed: {rel}")
        resolved = (self.root / candidate).resolve()
        if resolved != self.root and self.root not in resolved.parents:
            raise SandboxViolation(f"path escapes workspace: {rel}")
        return resolved

    def relpath(self, path: Path) -> str:
        return path.relative_to(self.root).as_posix()

    def iter_files(self, include_git: bool = True) -> list[Path]:
        out = []
        for dirpath, dirnames, filenames in os.walk(self.root):
            dirnames[:] = sorted(
                d for d in dirnames
                if d != PEROS_DIR and (include_git or d != ".git")
            )
            # do not follow directory symlinks out of the sandbox
            dirnames[:] = [d for d in dirnames if not (Path(dirpath) / d).is_symlink()]
            for name in sorted(filenames):
                p = Path(dirpath) / name
                if p.is_symlink():
                    continue
                out.append(p)
        return out

    def iter_dirs(self) -> list[str]:
        out = []
        for dirpath, dirnames, _ in os.walk(self.root):
            dirnames[:] = sorted(d for d in dirnames if d != PEROS_DIR)
            for d in dirnames:
                out.append((Path(dirpath) / d).relative_to(self.root).as_posix())
        return sorted(out)

    def refresh_manifest(self) -> None:
        self.manifest = {
            self.relpath(p): entry
            for p, entry in ((p, _file_entry(p)) for p in self.iter_files())
        }

    # -- internals -------------------------------------------------------------

    @property
    def peros_dir(self) -> Path:
        return self.root / PEROS_DIR

    @property
    def objects_dir(self) -> Path:
        return self.peros_dir / "objects"

    @property
    def journal_dir(self) -> Path:
        return self.peros_dir / "journal"

    def lock(self) -> FileLock:
        self.peros_dir.mkdir(exist_ok=True)
        return FileLock(str(self.peros_dir / "exec.lock"))

    def configure_git(self) -> None:
        if self.git_enabled:
            for key, val in (("user.name", "peros"), ("user.email", "peros@localhost"),
                             ("gc.auto", "0"), ("commit.gpgsign", "false")):
                run_git(self, "config", key, val)


def _file_entry(path: Path) -> tuple[int, str]:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    mode = stat.S_IMODE(path.stat().st_mode)
    return mode, h.hexdigest()


# ---------------------------------------------------------------------------
# Content-addressed snapshots
# ---------------------------------------------------------------------------

def tree_state(ws: Workspace) -> dict[str, tuple[int, str]]:
    return {ws.relpath(p): _file_entry(p) for p in ws.iter_files()}

def tree_digest(state: Mapping[str, tuple[int, str]]) -> str:
    h = hashlib.sha256()
    for path in sorted(state):
        mode, blob = state[path]
        h.update(f"{path}\0{mode:o}\0{blob}\n".encode())
    return h.hexdigest()


def snapshot(ws: Workspace) -> str:
    """Deterministic content-addressed digest of the workspace tree
    (paths + bytes + mode bits), excluding internal bookkeeping."""
    return tree_digest(tree_state(ws))


def store_tree(ws: Workspace) -> tuple[str, dict[str, tuple[int, str]]]:
    """Snapshot the tree and persist blobs + manifest in the object store."""
    state = tree_state(ws)
    ws.objects_dir.mkdir(parents=True, exist_ok=True)
    for path, (_, blob) in state.items():
        dest = ws.objects_dir / blob[:2] / blob
        if not dest.exists():
            dest.parent.mkdir(exist_ok=True)
            shutil.copyfile(ws.root / path, dest)
    digest = tree_digest(state)
    manifest_path = ws.objects_dir / f"{digest}.tree"
    if not manifest_path.exists():
        manifest_path.write_text(json.dumps(
            {p: [m, b] for p, (m, b) in sorted(state.items())}
        ))
    return digest, state


def load_tree(ws: Workspace, digest: str) -> dict[str, tuple[int, str]]:
    manifest_path = ws.objects_dir / f"{digest}.tree"
    doc = json.loads(manifest_path.read_text())
    return {p: (int(m), b) for p, (m, b) in doc.items()}


def read_blob(ws: Workspace, blob: str) -> bytes:
    return (ws.objects_dir / blob[:2] / blob).read_bytes()


def restore_tree(ws: Workspace, digest: str, base_dirs: Iterable[str]) -> None:
    target = load_tree(ws, digest)
    current = tree_state(ws)
    for path in current:
        if path not in target:
            (ws.root / path).unlink()
    for path, (mode, blob) in target.items():
        dest = ws.root / path
        if current.get(path) == (mode, blob):
            continue
        dest.parent.mkdir(parents=True, exist_ok=True)
        dest.write_bytes(read_blob(ws, blob))
        os.chmod(dest, mode)
    keep = set(base_dirs)
    for rel in reversed(ws.iter_dirs()):
        if rel not in keep:
            full = ws.root / rel
            try:
                full.rmdir()
            except OSError:
                pass  # non-empty: still holds restored files


# ---------------------------------------------------------------------------
# Diffs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PreviewDiff:
    files: tuple[dict, ...]  # per touched path: {"path", "old_path"?, "text"}
    summary: Mapping[str, int]

    @property
    def text(self) -> str:
        return "".join(f["text"] for f in self.files)

    def to_json(self) -> dict:
        return {"files": [dict(f) for f in self.files], "summary": dict(self.summary)}


def _is_texty(data: bytes) -> bool:
    return b"\0" not in data[:8192]


def diff_trees(
    before: Mapping[str, tuple[int, str]],
    after: Mapping[str, tuple[int, str]],
    blob_reader: Callable[[str], bytes],
) -> PreviewDiff:
    """Unified diff between two tree states, with exact-content rename
    detection (emitted as header-only entries, git style)."""
    before_user = {p: v for p, v in before.items() if not p.startswith(".git/")}
    after_user = {p: v for p, v in after.items() if not p.startswith(".git/")}

    removed = {p for p in before_user if p not in after_user}
    added = {p for p in after_user if p not in before_user}

    moves: list[tuple[str, str]] = []
    by_hash: dict[str, list[str]] = {}
    for p in sorted(removed):
        by_hash.setdefault(before_user[p][1], []).append(p)
    for p in sorted(added):
        h = after_user[p][1]
        if by_hash.get(h):
            old = by_hash[h].pop(0)
            moves.append((old, p))
    moved_old = {m[0] for m in moves}
    moved_new = {m[1] for m in moves}

    files: list[dict] = []
    bytes_moved = 0
    for old, new in moves:
        size = len(blob_reader(after_user[new][1]))
        bytes_moved += size
        files.append({
            "path": new,
            "old_path": old,
            "text": f"--- a/{old}\n+++ b/{new}\n",
        })

    def render(path: str, old_blob: str | None, new_blob: str | None) -> str:
        old_data = blob_reader(old_blob) if old_blob else b""
        new_data = blob_reader(new_blob) if new_blob else b""
        big = max(len(old_data), len(new_data)) > _TEXT_DIFF_LIMIT
        if big or not (_is_texty(old_data) and _is_texty(new_data)):
            return f"Binary files a/{path} and b/{path} differ\n"
        old_lines = old_data.decode("utf-8", "replace").splitlines(keepends=True)
        new_lines = new_data.decode("utf-8", "replace").splitlines(keepends=True)
        return "".join(difflib.unified_diff(
            old_lines, new_lines,
            fromfile=f"a/{path}" if old_blob else "/dev/null",
            tofile=f"b/{path}" if new_blob else "/dev/null",
        ))

    modified = 0
    for path in sorted(set(before_user) & set(after_user)):
        if before_user[path] != after_user[path]:
            modified += 1
            files.append({
                "path": path,
                "text": render(path, before_user[path][1], after_user[path][1]),
            })
    for path in sorted(added - moved_new):
        files.append({"path": path, "text": render(path, None, after_user[path][1])})
    for path in sorted(removed - moved_old):
        files.append({"path": path, "text": render(path, before_user[path][1], None)})

    summary = {
        "files_added": len(added - moved_new),
        "files_removed": len(removed - moved_old),
        "files_moved": len(moves),
        "files_modified": modified,
        "bytes_moved": bytes_moved,
    }
    return PreviewDiff(files=tuple(files), summary=summary)


# ---------------------------------------------------------------------------
# Git helper
# ---------------------------------------------------------------------------

def run_git(ws: Workspace, *args: str, timeout: float = DEFAULT_STEP_TIMEOUT,
            check: bool = True) -> subprocess.CompletedProcess:
    env = dict(os.environ)
    env.update(_GIT_ENV)
    env["HOME"] = str(ws.peros_dir)
    try:
        proc = subprocess.run(
            ["git", "-C", str(ws.root), "-c", "gc.auto=0", *args],
            capture_output=True, text=True, timeout=timeout, env=env,
        )
    except subprocess.TimeoutExpired:
        raise StepFailure(0, f"git {' '.join(args[:1])} timed out after {timeout}s")
    if check and proc.returncode != 0:
        raise StepFailure(0, f"git {' '.join(args)}: {proc.stderr.strip()}")
    return proc


def git_in(path: Path, *args: str, timeout: float = DEFAULT_STEP_TIMEOUT) -> subprocess.CompletedProcess:
    env = dict(os.environ)
    env.update(_GIT_ENV)
    env["HOME"] = str(path)
    return subprocess.run(["git", "-C", str(path), *args],
                          capture_output=True, text=True, timeout=timeout, env=env)


# ---------------------------------------------------------------------------
# Operation handlers
# ---------------------------------------------------------------------------

def match_files(ws: Workspace, pattern: str, min_size: int | None = None) -> list[str]:
    """Workspace-relative files matching a glob (or one exact path), size
    filtered. .git and bookkeeping are never matched."""
    exact = None
    try:
        candidate = ws.resolve(pattern)
        if candidate.is_file():
            exact = ws.relpath(candidate)
    except SandboxViolation:
        raise
    except OSError:
        pass
    rels = [exact] if exact else [
        ws.relpath(p) for p in ws.iter_files(include_git=False)
        if fnmatch.fnmatch(ws.relpath(p), pattern)
    ]
    if min_size is not None:
        rels = [r for r in rels if (ws.root / r).stat().st_size >= min_size]
    return sorted(rels)


def _h_fs_list(ws: Workspace, args: dict, ctx) -> dict:
    base = ws.resolve(args.get("path", "."))
    if not base.is_dir():
        raise StepFailure(0, f"not a directory: {args.get('path')}")
    names = sorted(
        p.name + ("/" if p.is_dir() else "")
        for p in base.iterdir() if p.name != PEROS_DIR
    )
    return {"detail": "\n".join(names)}


def _h_fs_read(ws: Workspace, args: dict, ctx) -> dict:
    p = ws.resolve(args["path"])
    if not p.is_file():
        raise StepFailure(0, f"no such file: {args['path']}")
    return {"detail": p.read_bytes()[:4096].decode("utf-8", "replace")}


def _h_fs_mkdir(ws: Workspace, args: dict, ctx) -> dict:
    ws.resolve(args["path"]).mkdir(parents=True, exist_ok=True)
    return {"detail": f"created {args['path']}"}


def _h_fs_write(ws: Workspace, args: dict, ctx) -> dict:
    p = ws.resolve(args["path"])
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(args["content"])
    return {"detail": f"wrote {len(args['content'])} chars to {args['path']}"}


def _h_fs_append(ws: Workspace, args: dict, ctx) -> dict:
    p = ws.resolve(args["path"])
    p.parent.mkdir(parents=True, exist_ok=True)
    with open(p, "a", encoding="utf-8") as fh:
        fh.write(args["content"])
    return {"detail": f"appended to {args['path']}"}


def _transfer(ws: Workspace, args: dict, move: bool) -> dict:
    src = args["src"]
    matches = match_files(ws, src, args.get("min_size"))
    if not matches:
        raise StepFailure(0, f"no files match {src!r}")
    dst = args["dst"]
    dst_path = ws.resolve(dst)
    # an exact (non-glob) source renames to dst; glob sources always land
    # inside dst as a directory
    is_glob = any(c in src for c in "*?[")
    single_rename = (not is_glob and len(matches) == 1
                     and not dst_path.is_dir() and not dst.endswith("/"))
    out = []
    if single_rename:
        src_path = ws.resolve(matches[0])
        if src_path == dst_path:
            raise StepFailure(0, f"{matches[0]!r} is already at the destination")
        dst_path.parent.mkdir(parents=True, exist_ok=True)
        if move:
            shutil.move(str(src_path), str(dst_path))
        else:
            shutil.copy2(str(src_path), str(dst_path))
        out.append(f"{matches[0]} -> {ws.relpath(dst_path)}")
    else:
        dst_path.mkdir(parents=True, exist_ok=True)
        for rel in matches:
            src_path = ws.resolve(rel)
            target = dst_path / src_path.name
            if src_path == target:
                raise StepFailure(0, f"{rel!r} is already at the destination")
            if move:
                shutil.move(str(src_path), str(target))
            else:
                shutil.copy2(str(src_path), str(target))
            out.append(f"{rel} -> {ws.relpath(target)}")
    return {"detail": "\n".join(out)}


def _h_fs_move(ws: Workspace, args: dict, ctx) -> dict:
    return _transfer(ws, args, move=True)


def _h_fs_copy(ws: Workspace, args: dict, ctx) -> dict:
    return _transfer(ws, args, move=False)


def _h_fs_remove(ws: Workspace, args: dict, ctx) -> dict:
    matches = match_files(ws, args["pattern"], args.get("min_size"))
    if not matches:
        raise StepFailure(0, f"no files match {args['pattern']!r}")
    for rel in matches:
        ws.resolve(rel).unlink()
    return {"detail": f"removed {len(matches)} file(s)"}


def _h_fs_rename_suffix(ws: Workspace, args: dict, ctx) -> dict:
    matches = match_files(ws, args["pattern"])
    if not matches:
        raise StepFailure(0, f"no files match {args['pattern']!r}")
    out = []
    for rel in matches:
        src = ws.resolve(rel)
        new_name = src.stem + args["suffix"] + src.suffix
        target = src.with_name(new_name)
        if target.exists():
            raise StepFailure(0, f"rename collision: {ws.relpath(target)}")
        src.rename(target)
        out.append(f"{rel} -> {ws.relpath(target)}")
    return {"detail": "\n".join(out)}


def _require_git(ws: Workspace) -> None:
    if not ws.git_enabled:
        raise StepFailure(0, "workspace is not a git repository")


def _h_git_status(ws: Workspace, args: dict, ctx) -> dict:
    _require_git(ws)
    proc = run_git(ws, "status", "--porcelain", timeout=ctx.timeout)
    return {"detail": proc.stdout}


def _h_git_add(ws: Workspace, args: dict, ctx) -> dict:
    _require_git(ws)
    matches = match_files(ws, args["pattern"])
    if not matches:
        raise StepFailure(0, f"no files match {args['pattern']!r}")
    run_git(ws, "add", "--", *matches, timeout=ctx.timeout)
    return {"detail": f"staged {len(matches)} file(s)"}


def _h_git_commit(ws: Workspace, args: dict, ctx) -> dict:
    _require_git(ws)
    run_git(ws, "commit", "-m", args["message"], timeout=ctx.timeout)
    return {"detail": f"committed: {args['message']}"}


def _h_git_commit_amend(ws: Workspace, args: dict, ctx) -> dict:
    _require_git(ws)
    if run_git(ws, "rev-parse", "--verify", "HEAD", check=False).returncode != 0:
        raise StepFailure(0, "nothing to amend: no commit on this branch")
    run_git(ws, "commit", "--amend", "--no-edit", timeout=ctx.timeout)
    return {"detail": "amended previous commit"}


def _h_git_undo_last_commit(ws: Workspace, args: dict, ctx) -> dict:
    _require_git(ws)
    if run_git(ws, "rev-parse", "--verify", "HEAD", check=False).returncode != 0:
        raise StepFailure(0, "no commit to undo")
    if run_git(ws, "rev-parse", "--verify", "HEAD~1", check=False).returncode == 0:
        run_git(ws, "reset", "--soft", "HEAD~1", timeout=ctx.timeout)
    else:
        run_git(ws, "update-ref", "-d", "HEAD", timeout=ctx.timeout)
    return {"detail": "undid last commit; its changes remain staged"}


def _h_git_rm_cached(ws: Workspace, args: dict, ctx) -> dict:
    _require_git(ws)
    proc = run_git(ws, "ls-files", "-z", timeout=ctx.timeout)
    tracked = [t for t in proc.stdout.split("\0") if t]
    matches = [t for t in tracked if fnmatch.fnmatch(t, args["pattern"])]
    min_size = args.get("min_size")
    if min_size is not None:
        matches = [
            t for t in matches
            if (ws.root / t).is_file() and (ws.root / t).stat().st_size >= min_size
        ]
    if not matches:
        raise StepFailure(0, f"no tracked files match {args['pattern']!r}")
    run_git(ws, "rm", "--cached", "--quiet", "--", *matches, timeout=ctx.timeout)
    return {"detail": f"unstaged {len(matches)} file(s) from the index"}


def _h_git_ignore(ws: Workspace, args: dict, ctx) -> dict:
    path = args["path"].rstrip("/")
    ignore = ws.root / ".gitignore"
    lines = ignore.read_text().splitlines() if ignore.exists() else []
    entry = path + "/"
    if entry not in lines and path not in lines:
        lines.append(entry)
        ignore.write_text("\n".join(lines) + "\n")
    if ws.git_enabled:
        run_git(ws, "add", ".gitignore", timeout=ctx.timeout)
    return {"detail": f"ignoring {entry}"}


def _remote_url(ws: Workspace, remote: str, timeout: float) -> str:
    proc = run_git(ws, "remote", "get-url", remote, check=False, timeout=timeout)
    if proc.returncode != 0:
        raise StepFailure(0, f"unknown remote {remote!r}")
    return proc.stdout.strip()


def _h_git_push(ws: Workspace, args: dict, ctx) -> dict:
    _require_git(ws)
    remote, branch = args["remote"], args["branch"]
    url = _remote_url(ws, remote, ctx.timeout)
    old = None
    proc = run_git(ws, "ls-remote", remote, f"refs/heads/{branch}", check=False,
                   timeout=ctx.timeout)
    if proc.returncode == 0 and proc.stdout.strip():
        old = proc.stdout.split()[0]
    cmd = ["push"]
    if args.get("force"):
        cmd.append("--force")
    cmd += [remote, f"HEAD:refs/heads/{branch}"]
    run_git(ws, *cmd, timeout=ctx.timeout)
    return {
        "detail": f"pushed to {remote}/{branch}",
        "undo": {"kind": "push", "url": url, "branch": branch, "old": old},
    }


def _backups_file(ws: Workspace) -> Path:
    return ws.root / ".backups.json"


def _load_backups(ws: Workspace) -> dict:
    f = _backups_file(ws)
    return json.loads(f.read_text()) if f.exists() else {"entries": {}}


def _save_backups(ws: Workspace, doc: dict) -> None:
    _backups_file(ws).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _h_backup_add(ws: Workspace, args: dict, ctx) -> dict:
    doc = _load_backups(ws)
    entry = doc["entries"].setdefault(args["path"], {})
    if "label" in args:
        entry["label"] = args["label"]
    _save_backups(ws, doc)
    return {"detail": f"enrolled {args['path']} in backups"}


def _h_backup_schedule(ws: Workspace, args: dict, ctx) -> dict:
    doc = _load_backups(ws)
    doc["entries"].setdefault(args["path"], {})["frequency"] = args["frequency"]
    _save_backups(ws, doc)
    return {"detail": f"{args['path']} scheduled {args['frequency']}"}


def _h_storage_pin_local(ws: Workspace, args: dict, ctx) -> dict:
    doc = _load_backups(ws)
    doc["entries"].setdefault(args["path"], {})["pinned"] = True
    _save_backups(ws, doc)
    return {"detail": f"{args['path']} pinned to local storage"}


def _h_sys_disk_usage(ws: Workspace, args: dict, ctx) -> dict:
    base = ws.resolve(args.get("path", "."))
    total = sum(p.stat().st_size for p in ws.iter_files(include_git=False)
                if base == ws.root or base in p.parents or p == base)
    return {"detail": f"{total} bytes"}


def _h_archive_zip(ws: Workspace, args: dict, ctx) -> dict:
    matches = match_files(ws, args["pattern"])
    if not matches:
        raise StepFailure(0, f"no files match {args['pattern']!r}")
    dst = ws.resolve(args["dst"])
    dst.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(dst, "w") as zf:
        for rel in matches:
            zf.write(ws.root / rel, rel)
    return {"detail": f"zipped {len(matches)} file(s) into {args['dst']}"}


def _h_fs_checksum(ws: Workspace, args: dict, ctx) -> dict:
    p = ws.resolve(args["path"])
    if not p.is_file():
        raise StepFailure(0, f"no such file: {args['path']}")
    return {"detail": hashlib.sha256(p.read_bytes()).hexdigest()}


HANDLERS: dict[str, Callable] = {
    "fs.list": _h_fs_list,
    "fs.read": _h_fs_read,
    "fs.mkdir": _h_fs_mkdir,
    "fs.write": _h_fs_write,
    "fs.append": _h_fs_append,
    "fs.move": _h_fs_move,
    "fs.copy": _h_fs_copy,
    "fs.remove": _h_fs_remove,
    "fs.rename_suffix": _h_fs_rename_suffix,
    "git.status": _h_git_status,
    "git.add": _h_git_add,
    "git.commit": _h_git_commit,
    "git.commit_amend": _h_git_commit_amend,
    "git.undo_last_commit": _h_git_undo_last_commit,
    "git.rm_cached": _h_git_rm_cached,
    "git.ignore": _h_git_ignore,
    "git.push": _h_git_push,
    "backup.add": _h_backup_add,
    "backup.schedule": _h_backup_schedule,
    "storage.pin_local": _h_storage_pin_local,
    "sys.disk_usage": _h_sys_disk_usage,
    "archive.zip": _h_archive_zip,
    "fs.checksum": _h_fs_checksum,
}


# ---------------------------------------------------------------------------
# Journal
# ---------------------------------------------------------------------------

@dataclass
class JournalEntry:
    step_index: int
    api: str
    before_tree: str | None
    after_tree: str | None
    outcome: str  # ok | failed | skipped
    started_ms: int = 0
    finished_ms: int = 0
    detail: str = ""
    undo: dict | None = None

    def to_json(self) -> dict:
        return {
            "step_index": self.step_index,
            "api": self.api,
            "before_tree": self.before_tree,
            "after_tree": self.after_tree,
            "outcome": self.outcome,
            "started_ms": self.started_ms,
            "finished_ms": self.finished_ms,
            "detail": self.detail,
            "undo": self.undo,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> "JournalEntry":
        return cls(**{k: doc.get(k) for k in (
            "step_index", "api", "before_tree", "after_tree", "outcome",
            "started_ms", "finished_ms", "detail", "undo")})


@dataclass
class ExecutionJournal:
    plan_id: str
    workspace_root: str
    base_tree: str
    base_dirs: tuple[str, ...]
    entries: list[JournalEntry] = field(default_factory=list)

    def path(self, ws: Workspace) -> Path:
        return ws.journal_dir / f"{self.plan_id}.ndjson"

    def last_after_tree(self) -> str | None:
        for e in reversed(self.entries):
            if e.outcome != "skipped" and e.after_tree:
                return e.after_tree
        return None

    @classmethod
    def create(cls, plan: OperationPlan, ws: Workspace) -> "ExecutionJournal":
        digest, _ = store_tree(ws)
        journal = cls(
            plan_id=plan.id,
            workspace_root=str(ws.root),
            base_tree=digest,
            base_dirs=tuple(ws.iter_dirs()),
        )
        ws.journal_dir.mkdir(parents=True, exist_ok=True)
        header = {
            "schema": 1,
            "plan_id": journal.plan_id,
            "workspace_root": journal.workspace_root,
            "base_tree": journal.base_tree,
            "base_dirs": list(journal.base_dirs),
        }
        journal.path(ws).write_text(json.dumps(header) + "\n")
        return journal

    def append(self, ws: Workspace, entry: JournalEntry) -> None:
        self.entries.append(entry)
        with open(self.path(ws), "a", encoding="utf-8") as fh:
            fh.write(json.dumps(entry.to_json()) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExecutionJournal":
        lines = Path(path).read_text().splitlines()
        if not lines:
            raise JournalMismatch(f"empty journal file: {path}")
        header = json.loads(lines[0])
        journal = cls(
            plan_id=header["plan_id"],
            workspace_root=header["workspace_root"],
            base_tree=header["base_tree"],
            base_dirs=tuple(header.get("base_dirs", ())),
        )
        journal.entries = [JournalEntry.from_json(json.loads(l)) for l in lines[1:]]
        return journal


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StepContext:
    timeout: float = DEFAULT_STEP_TIMEOUT


@dataclass
class ExecutionResult:
    status: str  # completed | checkpoint-pending | clarification-pending | failed
    pending_index: int | None = None
    pending_slot: str | None = None
    failed_step: int | None = None
    failure: str | None = None
    executed: list[int] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "status": self.status,
            "pending_index": self.pending_index,
            "pending_slot": self.pending_slot,
            "failed_step": self.failed_step,
            "failure": self.failure,
            "executed": list(self.executed),
        }


def _now_ms() -> int:
    return int(time.time() * 1000)


def execute(
    plan: OperationPlan,
    ws: Workspace,
    approvals: set[int] | frozenset[int] = frozenset(),
    journal: ExecutionJournal | None = None,
    step_timeout: float = DEFAULT_STEP_TIMEOUT,
) -> tuple[ExecutionResult, ExecutionJournal]:
    """Run plan steps in order, journaling every mutation.

    Execution halts before the first unapproved checkpoint, before any step
    still awaiting a clarification, and at the first failure (remaining steps
    are journaled as skipped). Passing the journal back in resumes where the
    previous call stopped.
    """
    ctx = StepContext(timeout=step_timeout)
    with ws.lock():
        if journal is None:
            journal = ExecutionJournal.create(plan, ws)
        elif journal.plan_id != plan.id or Path(journal.workspace_root) != ws.root:
            raise JournalMismatch("journal does not belong to this plan/workspace")

        done = {e.step_index for e in journal.entries}
        if any(e.outcome == "failed" for e in journal.entries):
            failed = next(e for e in journal.entries if e.outcome == "failed")
            return ExecutionResult(status="failed", failed_step=failed.step_index,
                                   failure=failed.detail), journal

        result = ExecutionResult(status="completed")
        for step in plan.steps:
            if step.index in done:
                continue
            slots = step.unbound_slots()
            if slots:
                result = ExecutionResult(status="clarification-pending",
                                         pending_index=step.index,
                                         pending_slot=slots[0],
                                         executed=result.executed)
                break
            if step.checkpoint and step.index not in approvals:
                result = ExecutionResult(status="checkpoint-pending",
                                         pending_index=step.index,
                                         executed=result.executed)
                break
            before, _ = store_tree(ws)
            started = _now_ms()
            try:
                handler = HANDLERS.get(step.api)
                if handler is None:
                    raise StepFailure(step.index, f"no handler for {step.api}")
                out = handler(ws, dict(step.args), ctx)
                outcome, detail, undo = "ok", out.get("detail", ""), out.get("undo")
            except (StepFailure, SandboxViolation, OSError, shutil.Error,
                    subprocess.SubprocessError) as exc:
                # any environment fault becomes a journaled failure; the
                # executor itself must never tear
                outcome, detail, undo = "failed", str(exc), None
            after, _ = store_tree(ws)
            journal.append(ws, JournalEntry(
                step_index=step.index, api=step.api,
                before_tree=before, after_tree=after,
                outcome=outcome, started_ms=started, finished_ms=_now_ms(),
                detail=detail, undo=undo,
            ))
            if outcome == "failed":
                for later in plan.steps:
                    if later.index > step.index:
                        journal.append(ws, JournalEntry(
                            step_index=later.index, api=later.api,
                            before_tree=None, after_tree=None,
                            outcome="skipped", detail="earlier step failed",
                        ))
                result = ExecutionResult(status="failed", failed_step=step.index,
                                         failure=detail, executed=result.executed)
                break
            result.executed.append(step.index)
        ws.refresh_manifest()
        return result, journal


def first_gate(plan: OperationPlan) -> int | None:
    """Index of the first step execution would stop in front of: the first
    checkpoint flag or the first step awaiting a clarification."""
    for step in plan.steps:
        if step.checkpoint or step.unbound_slots():
            return step.index
    return None


def dry_run(plan: OperationPlan, ws: Workspace,
            step_timeout: float = DEFAULT_STEP_TIMEOUT) -> PreviewDiff:
    """Execute the pre-gate prefix on a scratch copy and report the diff the
    real execution would produce. The live workspace is never touched."""
    gate = first_gate(plan)
    prefix = [s for s in plan.steps if gate is None or s.index < gate]
    with tempfile.TemporaryDirectory(prefix="peros-dry-") as tmp:
        scratch_root = Path(tmp) / "ws"
        shutil.copytree(
            ws.root, scratch_root, symlinks=True,
            ignore=shutil.ignore_patterns(PEROS_DIR),
        )
        scratch = Workspace.attach(scratch_root)
        before, _ = store_tree(scratch)
        from dataclasses import replace as _replace
        sub = _replace(plan, steps=tuple(
            _replace(s, checkpoint=False, depends_on=tuple(d for d in s.depends_on if d >= prefix[0].index) if prefix else ())
            for s in prefix
        ))
        result, journal = execute(sub, scratch, step_timeout=step_timeout)
        if result.status == "failed":
            raise StepFailure(result.failed_step or 0, result.failure or "step failed")
        after, _ = store_tree(scratch)
        before_state = load_tree(scratch, before)
        after_state = load_tree(scratch, after)
        blobs = {b: read_blob(scratch, b)
                 for _, b in list(before_state.values()) + list(after_state.values())}
        return diff_trees(before_state, after_state, blobs.__getitem__)


def journal_diff(journal: ExecutionJournal, ws: Workspace) -> PreviewDiff:
    """Diff of everything a journal's executed steps changed."""
    if not journal.entries:
        return PreviewDiff(files=(), summary={
            "files_added": 0, "files_removed": 0, "files_moved": 0,
            "files_modified": 0, "bytes_moved": 0})
    after = journal.last_after_tree() or journal.base_tree
    return diff_trees(load_tree(ws, journal.base_tree), load_tree(ws, after),
                      lambda b: read_blob(ws, b))


# ---------------------------------------------------------------------------
# Revert
# ---------------------------------------------------------------------------

def revert(journal: ExecutionJournal, ws: Workspace) -> dict:
    """Restore the workspace tree to the journal's pre-execution state.

    Raises RevertConflict when the tree no longer matches the journal's last
    recorded state (an external edit would otherwise be silently destroyed).
    Pushes to local bare remotes are rolled back by resetting their refs.
    """
    if Path(journal.workspace_root) != ws.root:
        raise JournalMismatch("journal does not belong to this workspace")
    with ws.lock():
        if not journal.entries:
            return {"status": "no-op", "restored_tree": journal.base_tree}
        expected = journal.last_after_tree()
        current = snapshot(ws)
        if expected is not None and current != expected:
            raise RevertConflict(
                "workspace changed outside the journal since execution")
        restore_tree(ws, journal.base_tree, journal.base_dirs)
        for entry in reversed(journal.entries):
            if entry.undo and entry.undo.get("kind") == "push":
                _undo_push(entry.undo)
        ws.refresh_manifest()
        restored = snapshot(ws)
        if restored != journal.base_tree:
            raise RevertConflict("restore incomplete: tree digest mismatch")
        return {"status": "reverted", "restored_tree": restored}


def _undo_push(undo: Mapping) -> None:
    url = undo.get("url", "")
    bare = Path(url)
    if not bare.is_dir():
        return  # not a local remote; nothing safe to do
    branch = undo["branch"]
    if undo.get("old"):
        git_in(bare, "update-ref", f"refs/heads/{branch}", undo["old"])
    else:
        git_in(bare, "update-ref", "-d", f"refs/heads/{branch}")


def workspace_remotes(ws: Workspace) -> dict[str, tuple[str, ...]]:
    """remote name -> branch names, for clarification candidate listings."""
    if not ws.git_enabled:
        return {}
    out: dict[str, tuple[str, ...]] = {}
    proc = run_git(ws, "remote", check=False)
    if proc.returncode != 0:
        return {}
    for remote in proc.stdout.split():
        listing = run_git(ws, "ls-remote", "--heads", remote, check=False)
        if listing.returncode != 0:
            continue
        branches = []
        for line in listing.stdout.splitlines():
            parts = line.split("\t")
            if len(parts) == 2 and parts[1].startswith("refs/heads/"):
                branches.append(parts[1][len("refs/heads/"):])
        out[remote] = tuple(sorted(branches))
    return out
