from __future__ import annotations

import sys
from pathlib import Path

# Make the sibling oracles module importable regardless of invocation cwd.
sys.path.insert(0, str(Path(__file__).resolve().parent))
