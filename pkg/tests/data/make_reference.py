"""Regenerate the pinned protocol reference used by the acceptance gate.

Run from the repository root:

    python3 tests/data/make_reference.py

Only do this after a deliberate protocol change, and eyeball the diff of the
result files before committing the new pin.
"""

import json
import sys
from pathlib import Path

TESTS = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(TESTS))

from test_acceptance import (CHECKPOINT_FILES, REFERENCE_DIR, RESULT_FILES,
                             checkpoint_digests, run_regression)


def main() -> None:
    REFERENCE_DIR.mkdir(parents=True, exist_ok=True)
    run_regression(REFERENCE_DIR)
    digests = checkpoint_digests(REFERENCE_DIR)
    (REFERENCE_DIR / "checksums.json").write_text(
        json.dumps(digests, sort_keys=True, indent=2) + "\n")
    for name in CHECKPOINT_FILES:  # pin the digests, not the binaries
        (REFERENCE_DIR / name).unlink()
    for name in RESULT_FILES + ("checksums.json",):
        print(f"wrote {REFERENCE_DIR / name}")


if __name__ == "__main__":
    main()
