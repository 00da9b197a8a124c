#!/usr/bin/env python3
"""Writes the golden schedule dumps under tests/golden/.

Closed form used here: after s denoiser passes (0 < s < L), a position in block
b (1-based) is clean when b <= s and otherwise sits at clip(b + K - L, 1, K).
The first mask is all K, the last all zero.
"""
import pathlib
import sys

K = 5
CASES = [
    ("one_step", 1, 3, 20),
    ("temporal", 2, 2, 20),
    ("temporal", 5, 2, 40),
    ("temporal", 5, 2, 20),
    ("temporal", 10, 2, 20),
    ("temporal", 20, 2, 20),
    ("agent", 2, 10, 4),
    ("agent", 5, 10, 4),
    ("agent", 10, 10, 4),
]


def level(block, passes, steps):
    if passes == 0:
        return K
    if passes == steps:
        return 0
    if block <= passes:
        return 0
    return min(K, max(1, block + K - steps))


def dump(mode, steps, agents, timesteps):
    out = [f"# mdg schedule mode={mode} steps={steps} agents={agents} timesteps={timesteps} K={K}"]
    for passes in range(steps + 1):
        out.append(f"step {steps - passes}")
        for a in range(agents):
            row = []
            for t in range(timesteps):
                pos, length = (t, timesteps) if mode == "temporal" else (a, agents)
                block = (pos * steps) // length + 1
                row.append(str(level(block, passes, steps)))
            out.append(" ".join(row))
    return "\n".join(out) + "\n"


def main():
    root = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else pathlib.Path(__file__).parent.parent / "golden")
    root.mkdir(parents=True, exist_ok=True)
    for mode, steps, agents, timesteps in CASES:
        name = f"schedule_{mode}_L{steps}_N{agents}_T{timesteps}.txt"
        (root / name).write_text(dump(mode, steps, agents, timesteps))


if __name__ == "__main__":
    main()
