#!/usr/bin/env python3
"""Fetch MovieLens-100k ratings into ``data/ml-100k/u.data``.

Tries the GroupLens archive first. When that host is unreachable (offline
sandboxes that only reach PyPI), falls back to the copy of the same
ratings shipped inside the RecBole wheel and rewrites it in the original
tab-separated ``u.data`` layout.
"""
import argparse
import io
import subprocess
import sys
import tempfile
import urllib.request
import zipfile
from pathlib import Path

GROUPLENS_URL = "https://files.grouplens.org/datasets/movielens/ml-100k.zip"
RECBOLE_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def from_grouplens(timeout=30):
    with urllib.request.urlopen(GROUPLENS_URL, timeout=timeout) as resp:
        payload = resp.read()
    with zipfile.ZipFile(io.BytesIO(payload)) as zf:
        return zf.read("ml-100k/u.data").decode()


def from_recbole_wheel():
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps",
             "--only-binary=:all:", "recbole==1.2.1", "-d", tmp],
            check=True, stdout=subprocess.DEVNULL,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            text = zf.read(RECBOLE_MEMBER).decode()
    lines = text.splitlines()
    # drop the typed header ("user_id:token\t..."); columns are already u.data order
    return "\n".join(lines[1:]) + "\n"


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/ml-100k/u.data")
    args = parser.parse_args()

    out = Path(args.out)
    if out.exists():
        print(f"{out} already present")
        return
    try:
        text = from_grouplens()
        source = "grouplens"
    except OSError as exc:
        print(f"grouplens unreachable ({exc}); using the RecBole wheel copy")
        text = from_recbole_wheel()
        source = "recbole"
    n_rows = sum(1 for line in text.splitlines() if line.strip())
    if n_rows != 100_000:
        raise SystemExit(f"expected 100000 ratings, got {n_rows}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(f"wrote {n_rows} ratings to {out} (source: {source})")


if __name__ == "__main__":
    main()
