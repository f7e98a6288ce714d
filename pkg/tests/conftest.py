import json
import subprocess
from pathlib import Path

import pytest

from peros.actuator import Workspace, run_git
from peros.config import data_path
from peros.director import VerbTable
from peros.interpreter import Grammar
from peros.model import ApiRegistry

# The end-to-end fixture request exercising all seven operations in order
# (undo commit, drop big CSVs from the index, move, ignore, rename, amend,
# force push), phrased with the original typo kept intact.
LISTING_REQUEST = (
    "now, undo the most resent commit for my HappyDog project, remove all "
    "the CSV files larger than 10 MB from the git cache, move those files "
    "to a new directory called data at the project root, ignore this folder "
    "in git, add a suffix _large to all their names, augment the previous "
    "commit without a new message, and force push to my remote repo"
)

LISTING_APIS = [
    "git.undo_last_commit",
    "git.rm_cached",
    "fs.move",
    "git.ignore",
    "fs.rename_suffix",
    "git.commit_amend",
    "git.push",
]


@pytest.fixture(scope="session")
def registry() -> ApiRegistry:
    return ApiRegistry.load(data_path("registry.json"))


@pytest.fixture(scope="session")
def grammar() -> Grammar:
    return Grammar.load(data_path("grammar", "v1", "grammar.json"))


@pytest.fixture(scope="session")
def verb_table() -> VerbTable:
    return VerbTable.load(data_path("grammar", "v1", "verbs.json"))


# ---------------------------------------------------------------------------
# git fixture repo: one data commit on top of a base commit, dogs.csv > 10 MB,
# bare "github" remote (main/dev/feat/chihuahua) and bare "bitbucket" (master)
# ---------------------------------------------------------------------------

def _git(cwd: Path, *args: str) -> str:
    env = {
        "GIT_AUTHOR_NAME": "fixture", "GIT_AUTHOR_EMAIL": "fixture@localhost",
        "GIT_COMMITTER_NAME": "fixture", "GIT_COMMITTER_EMAIL": "fixture@localhost",
        "GIT_CONFIG_NOSYSTEM": "1", "HOME": str(cwd),
        "PATH": "/usr/bin:/bin:/usr/local/bin",
    }
    proc = subprocess.run(["git", "-C", str(cwd), *args],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, f"git {args}: {proc.stderr}"
    return proc.stdout


def make_fixture_repo(root: Path, csv_mb: float = 10.5) -> Path:
    """Build the dialogue fixture repository under ``root``."""
    repo = root / "happydog"
    repo.mkdir(parents=True)
    _git(repo, "init", "-q", "-b", "main")
    _git(repo, "config", "user.name", "fixture")
    _git(repo, "config", "user.email", "fixture@localhost")
    _git(repo, "config", "gc.auto", "0")

    (repo / "README.md").write_text("# HappyDog\n\nToy project fixture.\n")
    _git(repo, "add", "README.md")
    _git(repo, "commit", "-q", "-m", "init project")

    line = "snoopy,beagle,7," + "x" * 52 + "\n"  # 64 bytes per row
    rows = int(csv_mb * 1_000_000 / len(line)) + 1
    (repo / "dogs.csv").write_text(line * rows)
    assert (repo / "dogs.csv").stat().st_size > 10_000_000
    _git(repo, "add", "dogs.csv")
    _git(repo, "commit", "-q", "-m", "add dataset")

    remotes = repo / ".peros" / "remotes"
    remotes.mkdir(parents=True)
    github = remotes / "github.git"
    bitbucket = remotes / "bitbucket.git"
    subprocess.run(["git", "init", "-q", "--bare", str(github)], check=True)
    subprocess.run(["git", "init", "-q", "--bare", str(bitbucket)], check=True)
    _git(repo, "remote", "add", "github", str(github))
    _git(repo, "remote", "add", "bitbucket", str(bitbucket))
    _git(repo, "push", "-q", "github", "HEAD:refs/heads/main")
    _git(repo, "push", "-q", "github", "HEAD~1:refs/heads/dev")
    _git(repo, "push", "-q", "github", "HEAD~1:refs/heads/feat/chihuahua")
    _git(repo, "push", "-q", "bitbucket", "HEAD~1:refs/heads/master")
    return repo


@pytest.fixture
def fixture_repo(tmp_path) -> Path:
    return make_fixture_repo(tmp_path)


@pytest.fixture
def fixture_ws(fixture_repo) -> Workspace:
    ws = Workspace.attach(fixture_repo)
    ws.configure_git()
    return ws


def remote_branches(repo: Path) -> dict[str, list[str]]:
    out = {}
    for name in ("github", "bitbucket"):
        bare = repo / ".peros" / "remotes" / f"{name}.git"
        listing = subprocess.run(
            ["git", "-C", str(bare), "for-each-ref", "--format=%(refname:short)",
             "refs/heads"],
            capture_output=True, text=True, check=True).stdout
        out[name] = sorted(l for l in listing.splitlines() if l)
    return out
