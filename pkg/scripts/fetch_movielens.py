"""Place Movielens 100k at data/ml-100k/u.data.

Tries the GroupLens archive first. If that host is unreachable, it falls back
to the copy of the same 100,000 ratings bundled in the RecBole wheel on PyPI.
"""

import argparse
import glob
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
RECBOLE_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def from_grouplens(timeout):
    with urllib.request.urlopen(GROUPLENS, timeout=timeout) as resp:
        payload = resp.read()
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        return zf.read("ml-100k/u.data").decode()


def from_recbole():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        "-d", tmp, "recbole==1.2.1"], check=True)
        wheel = glob.glob(f"{tmp}/*.whl")[0]
        with zipfile.ZipFile(wheel) as zf:
            lines = zf.read(RECBOLE_MEMBER).decode().splitlines()
    return "\n".join(lines[1:]) + "\n"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data/ml-100k/u.data"))
    ap.add_argument("--timeout", type=float, default=10.0)
    args = ap.parse_args()
    out = Path(args.out)
    if out.exists():
        print(f"{out} already present")
        return
    try:
        text = from_grouplens(args.timeout)
    except OSError as exc:
        print(f"GroupLens unreachable ({exc}); using the RecBole copy", file=sys.stderr)
        text = from_recbole()
    n = sum(1 for line in text.splitlines() if line.strip())
    if n != 100000:
        sys.exit(f"expected 100000 ratings, got {n}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {n} ratings to {out}")


if __name__ == "__main__":
    main()
