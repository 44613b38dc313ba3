"""Toy simulator speaking the stdio line protocol.

Fails a point iff its first coordinate is >= 4, which matches
linear_bench(e1, 4).  The optional argv mode breaks the protocol on
purpose so the adapter's error paths can be exercised:

  malformed  replies "2" to the first EVAL
  hang       never answers the first EVAL
  rude       answers the handshake with "HI"
  die        exits right after READY
"""
import sys
import time

mode = sys.argv[1] if len(sys.argv) > 1 else "ok"
evals = 0

for line in sys.stdin:
    parts = line.split()
    if not parts:
        continue
    if parts[0] == "HELLO":
        print("HI" if mode == "rude" else "READY", flush=True)
        if mode == "die":
            sys.exit(0)
    elif parts[0] == "EVAL":
        evals += 1
        if mode == "malformed" and evals == 1:
            print("2", flush=True)
            continue
        if mode == "hang" and evals == 1:
            time.sleep(30)
        values = [float(v) for v in parts[1:]]
        print("FAIL" if values[0] >= 4.0 else "PASS", flush=True)
    elif parts[0] == "QUIT":
        break
