"""Replay the two pinned six-vehicle traces and print their reservation tables."""
from macsim.golden import GOLDEN, run_golden

NAMES = {0: "A", 1: "B", 3: "D", 4: "E", 5: "F"}

for name in sorted(GOLDEN):
    res = run_golden(name)
    print(f"{name}: {'PASS' if res.passed else 'FAIL'}")
    for row in res.ledger.reservation_rows():
        print(f"  {NAMES[row['tx']]}->{NAMES[row['rx']]}  {row['start_ms']:6.1f} .. "
              f"{row['end_ms']:6.1f} ms")
    for g in res.ledger.failed_grants:
        print(f"  rejected {NAMES[g.tx]}->{NAMES[g.rx]} slot {g.slot}")
