"""Run the bundled refinement studies and print their tables.

Usage: ``python scripts/run_studies.py [cube|lshape|ball ...]`` (default: all).
"""

import sys
from pathlib import Path

from stekloff.study import StudyConfig, run_study

CONFIGS = Path(__file__).parent / "configs"


def main(names):
    for name in names or ["ball", "cube", "lshape"]:
        res = run_study(StudyConfig.from_json(CONFIGS / f"{name}.json"))
        print(res.table.to_text())
        if res.all_failed:
            return 3
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
