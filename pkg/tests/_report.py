"""Collects one summary line per acceptance criterion."""
LINES = []


def record(name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    LINES.append(line)
    print(line)
    return ok
