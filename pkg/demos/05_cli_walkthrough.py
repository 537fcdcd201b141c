"""The command-line workflow: run, defend, sweep, report.

Each step shells out to ``python -m fedpoison`` exactly as a user would and
lists the files it leaves behind.
"""
import subprocess
import sys
import tempfile
from pathlib import Path

work = Path(tempfile.mkdtemp(prefix="fedpoison-cli-"))


def cli(*args):
    print("\n$ fedpoison " + " ".join(map(str, args)))
    proc = subprocess.run([sys.executable, "-m", "fedpoison", *map(str, args)],
                          capture_output=True, text=True)
    print(proc.stdout.rstrip() or proc.stderr.rstrip())
    print(f"(exit {proc.returncode})")
    return proc.returncode


# One attacked run plus its clean twin.
cli("run", "--preset", "desk", "--out", work / "single")
print(sorted(p.name for p in (work / "single" / "run").iterdir()))

# Re-run detection on the recorded uploads with different settings,
# including every class when the source is unknown.
cli("defend", work / "single" / "run", "--reference", "previous", "--out", work / "defend-prev")
cli("defend", work / "single" / "run", "--source", "all", "--out", work / "defend-all")
print((work / "defend-all" / "blacklist.txt").read_text() or "(empty blacklist)")

# Exclude whoever was flagged and train again.
cli("run", "--preset", "desk", "--out", work / "cleaned",
    "--blacklist", work / "single" / "run" / "blacklist.txt")

# A small sweep, then rebuild its tables from the run directories alone.
cli("sweep", "--preset", "defense", "--out", work / "sweep")
cli("report", work / "sweep", "--out", work / "sweep-report")
print(sorted(p.name for p in (work / "sweep-report").iterdir()))

# Configuration mistakes exit with code 2.
bad = work / "bad.ini"
bad.write_text("[federation]\nk = 0\n")
cli("run", "--config", bad, "--out", work / "bad")
